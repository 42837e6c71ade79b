from typing import Dict, Optional, Tuple


class AmenabilityError(Exception):
    """
    Raiz da hierarquia de erros do projeto.

    Cada subclasse carrega os campos estruturados necessários para diagnóstico
    e o código de saída (`exit_code`) que a CLI devolve ao sistema operacional.
    """

    exit_code = 1


class ShapeMismatchError(AmenabilityError):
    """Incompatibilidade de formato detectada em uma camada da rede."""

    exit_code = 3

    def __init__(self, layer_index: int, expected, received):
        self.layer_index = layer_index
        self.expected = expected
        self.received = received
        super().__init__(
            f"Formato incompatível na camada {layer_index}: "
            f"esperado {expected}, recebido {received}"
        )


class NonFiniteLossError(AmenabilityError):
    """Perda não finita; `sample_index` aponta a primeira amostra ofensora."""

    exit_code = 3

    def __init__(self, sample_index: int, value: float):
        self.sample_index = sample_index
        self.value = value
        super().__init__(
            f"Perda não finita ({value}) na amostra de índice {sample_index}"
        )


class RewardError(AmenabilityError):
    exit_code = 3


class InfeasibleConfigError(AmenabilityError):
    exit_code = 2


class ConfigError(AmenabilityError):
    """
    Erro de configuração com caminho da chave e linha do arquivo de origem.

    Attributes:
        key_path (str): Caminho pontuado da chave (ex: 'trainer.batch_size').
        line (Optional[int]): Linha no arquivo TOML, quando localizável.
    """

    exit_code = 2

    def __init__(self, message: str, key_path: str = "", line: Optional[int] = None):
        self.key_path = key_path
        self.line = line
        location = key_path or "<raiz>"
        if line is not None:
            location = f"{location} (linha {line})"
        super().__init__(f"[CONFIG] {location}: {message}")


class MissingArtifactError(AmenabilityError):
    exit_code = 4

    def __init__(self, path: str, detail: str = ""):
        self.path = path
        message = f"Artefato ausente: {path}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class CellFailureError(AmenabilityError):
    """
    Uma ou mais células de um estudo falharam.

    O código de saída é o mais alto entre as falhas, de modo que um erro de
    configuração não mascare uma falha numérica.

    Attributes:
        failures (Dict[str, Tuple[int, str]]): Célula → (código, causa).
    """

    def __init__(self, failures: Dict[str, Tuple[int, str]]):
        self.failures = dict(failures)
        self.exit_code = max(code for code, _ in self.failures.values())
        names = ", ".join(sorted(self.failures))
        super().__init__(f"{len(self.failures)} célula(s) falharam: {names}")
