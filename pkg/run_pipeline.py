import logging
import sys

from src.experiment import main as cli_main

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)


def main():
    """
    Orquestrador principal do benchmark de qualidade de imagem orientada à tarefa (Entrypoint).

    Encaminha a linha de comando para `src.experiment.cli`, que resolve a
    configuração (arquivo TOML, ambiente `AMENABLE_*`, flags) e executa o
    comando pedido em um diretório próprio de execução.

    Fluxo de Execução:
    1. **gen:** Gera o conjunto sintético (treino, validação, holdout) e grava o contêiner "data-v1".
    2. **train:** Treina preditor e controlador no modo escolhido (task_specific, task_agnostic, shaped).
    3. **eval:** Curva de rejeição no holdout e tabelas de contingência contra as flags do gerador.
    4. **study:** Varreduras (φ × k, s_rej, estratégias de recompensa, regras de atualização).
    5. **report:** Consolida execuções em CSVs, SVG, κ e resumo de quadrantes.

    Decisões de Arquitetura:
    - **Execução Síncrona por Comando:** Cada comando é um processo; só o `study` paraleliza células.
    - **Persistência em Disco:** Cada execução grava manifesto, checkpoints e CSVs,
      facilitando auditoria e reprodução.

    Returns:
        int: Código de saída (0 sucesso, 2 configuração, 3 numérico, 4 artefato ausente).
    """
    logging.info("=== Iniciando pipeline de avaliação de qualidade ===")
    code = cli_main(sys.argv[1:])
    logging.info("=== Pipeline finalizado (código %d) ===", code)
    return code


if __name__ == "__main__":
    sys.exit(main())
