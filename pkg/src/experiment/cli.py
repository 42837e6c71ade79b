from __future__ import annotations

import argparse
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.errors import AmenabilityError, ConfigError
from .config import ExperimentConfig, load_config, parse_scalar
from .report import report_command
from .runner import evaluate_command, generate_command, latest_run, new_run_dir, train_command
from .study import study_command

logger = logging.getLogger(__name__)

COMMANDS = ("gen", "train", "eval", "study", "report")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"lista de números inválida: {text}") from exc


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"lista de inteiros inválida: {text}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run_pipeline.py",
        description="Avaliação de qualidade de imagem por aprendizado por reforço (benchmark sintético)",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument(
        "targets",
        nargs="*",
        help="study: tipo (shaped|srej|strategies|rules); report: diretórios de execução",
    )
    parser.add_argument("--config", help="Arquivo TOML de configuração")
    parser.add_argument("--seed", type=int, help="Semente mestre")
    parser.add_argument("--out", help="Raiz dos diretórios de execução (output.root)")
    parser.add_argument("--mode", choices=("task_specific", "task_agnostic", "shaped"))
    parser.add_argument("--phi", type=float, help="φ da recompensa moldada")
    parser.add_argument("--srej", type=float, help="s_rej (ativa a estratégia selective)")
    parser.add_argument("--h-a", dest="h_a", help="Checkpoint do controlador task-agnostic congelado")
    parser.add_argument("--ks", type=_float_list, help="Razões de rejeição, ex: 0,0.05,0.1")
    parser.add_argument("--phis", type=_float_list, help="Grade de φ do estudo moldado")
    parser.add_argument("--srejs", type=_float_list, help="Grade de s_rej do estudo srej")
    parser.add_argument("--seeds", type=_int_list, help="Sementes do estudo, ex: 0,1,2")
    parser.add_argument("--jobs", type=int, help="Processos paralelos do estudo")
    parser.add_argument("--run", help="eval: diretório do treino (padrão: o mais recente)")
    parser.add_argument(
        "--set",
        dest="assignments",
        action="append",
        default=[],
        metavar="CHAVE=VALOR",
        help="Substituição pontuada arbitrária, ex: trainer.max_updates=50",
    )
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Traduz as flags da CLI em chaves pontuadas da configuração."""
    overrides: Dict[str, Any] = {}
    for assignment in args.assignments:
        key, sep, value = assignment.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"atribuição inválida: {assignment}", "--set")
        overrides[key.strip()] = parse_scalar(value.strip())
    mapping = {
        "seed": "seed",
        "out": "output.root",
        "mode": "trainer.mode",
        "phi": "reward.phi",
        "h_a": "trainer.h_a_checkpoint",
        "ks": "evaluation.ks",
        "phis": "study.phis",
        "srejs": "study.s_rejs",
        "seeds": "study.seeds",
        "jobs": "output.jobs",
    }
    for attr, key in mapping.items():
        value = getattr(args, attr)
        if value is not None:
            overrides[key] = value
    if args.srej is not None:
        overrides["reward.strategy"] = "selective"
        overrides["reward.s_rej"] = args.srej
    if args.command == "study" and args.targets:
        overrides["study.kind"] = args.targets[0]
    return overrides


def run(
    command: str,
    cfg: ExperimentConfig,
    train_dir: Optional[str] = None,
    run_dirs: Sequence[str] = (),
) -> Tuple[int, str]:
    """
    Executa um comando em um diretório novo `<root>/<comando>-<timestamp>-seed<N>`.

    O manifesto é gravado mesmo na falha; o retorno é o código de saída
    (0 sucesso, 2 configuração, 3 numérico, 4 artefato ausente) e o diretório.
    """
    if command not in COMMANDS:
        raise ConfigError(f"comando desconhecido: {command}")
    if command == "eval" and train_dir is None:
        train_dir = latest_run(cfg.output.root, "train")
    if command == "report" and not run_dirs:
        raise ConfigError("report exige ao menos um diretório de execução")
    run_dir = new_run_dir(cfg.output.root, command, cfg.seed)
    logger.info("[INICIO] comando=%s diretório=%s", command, run_dir)
    try:
        if command == "gen":
            generate_command(cfg, run_dir)
        elif command == "train":
            train_command(cfg, run_dir)
        elif command == "eval":
            evaluate_command(cfg, run_dir, train_dir)
        elif command == "study":
            study_command(cfg, run_dir)
        else:
            report_command(cfg, run_dir, list(run_dirs))
    except AmenabilityError as exc:
        return exc.exit_code, run_dir
    except Exception:
        logger.exception("[ERRO] Falha inesperada em %s", command)
        return 1, run_dir
    logger.info("[SUCESSO] %s concluído: %s", command, run_dir)
    return 0, run_dir


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entrada da CLI; devolve o código de saída sem chamar `sys.exit`."""
    args = build_parser().parse_args(argv)
    try:
        if args.command == "study" and len(args.targets) > 1:
            raise ConfigError("study aceita um único tipo", "study.kind")
        cfg = load_config(args.config, overrides_from_args(args))
        train_dir = os.path.normpath(args.run) if args.run else None
        run_dirs = args.targets if args.command == "report" else ()
        code, run_dir = run(args.command, cfg, train_dir=train_dir, run_dirs=run_dirs)
    except AmenabilityError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    if code:
        logger.error("[ERRO] %s terminou com código %d (manifesto em %s)", args.command, code, run_dir)
    return code
