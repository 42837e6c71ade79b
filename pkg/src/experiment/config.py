from __future__ import annotations

import logging
import os
import re

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, List, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from src.errors import ConfigError
from src.iqa.controller import PolicyUpdateConfig
from src.iqa.reward import RewardConfig
from src.iqa.tasks import TaskSpec
from src.iqa.trainer import TrainerConfig
from src.synth.generator import GeneratorConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "AMENABLE_"
SECTIONS = ("data", "task", "trainer", "reward", "policy", "evaluation", "study", "output")
MIN_TRAIN_PER_BATCH = 8


class TrainerSection(BaseModel):
    """Seção `[trainer]`: o laço de treino sem as sub-configurações."""

    model_config = ConfigDict(extra="forbid")

    batch_size: int = Field(default=32, ge=1)
    steps_per_episode: int = Field(default=10, ge=1)
    episodes_per_update: int = Field(default=4, ge=1)
    max_updates: int = Field(default=200, ge=0)
    convergence_window: int = Field(default=20, ge=1)
    convergence_tol: float = Field(default=1e-3, ge=0.0)
    min_updates: int = Field(default=100, ge=0)
    mode: Literal["task_specific", "task_agnostic", "shaped"] = "task_specific"
    shaping_source: Literal["controller", "labels"] = "controller"
    h_a_checkpoint: Optional[str] = None
    warm_start: bool = True
    val_size: Optional[int] = Field(default=None, ge=1)
    predictor_reset_interval: int = Field(default=0, ge=0)
    checkpoint_interval: int = Field(default=0, ge=0)


class EvaluationConfig(BaseModel):
    """Seção `[evaluation]`: razões de rejeição e limiares das tabelas."""

    model_config = ConfigDict(extra="forbid")

    ks: List[float] = Field(default_factory=lambda: [0.0, 0.05, 0.1, 0.15, 0.2, 0.25])
    kappa_k: float = Field(default=0.1, ge=0.0, lt=1.0)
    quadrant_k: float = Field(default=0.1, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_ks(self) -> "EvaluationConfig":
        if not self.ks or any(not 0.0 <= k < 1.0 for k in self.ks):
            raise ValueError("ks devem estar em [0, 1)")
        if any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise ValueError("ks devem ser estritamente crescentes")
        return self


class StudyConfig(BaseModel):
    """Seção `[study]`: grades das varreduras."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["shaped", "srej", "strategies", "rules"] = "shaped"
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    phis: List[float] = Field(default_factory=lambda: [0.0, 0.85, 0.9, 0.95, 1.0])
    s_rejs: List[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    strategies: List[Literal["fixed_clean_avg", "weighted", "selective"]] = Field(
        default_factory=lambda: ["fixed_clean_avg", "weighted", "selective"]
    )
    rules: List[Literal["reinforce", "clipped_surrogate"]] = Field(
        default_factory=lambda: ["reinforce", "clipped_surrogate"]
    )
    selective_s_rej: float = Field(default=0.1, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_grids(self) -> "StudyConfig":
        if any(not 0.0 <= p <= 1.0 for p in self.phis):
            raise ValueError("phis devem estar em [0, 1]")
        if any(not 0.0 <= s < 1.0 for s in self.s_rejs):
            raise ValueError("s_rejs devem estar em [0, 1)")
        if not self.seeds:
            raise ValueError("seeds não pode ser vazio")
        return self


class OutputConfig(BaseModel):
    """Seção `[output]`: onde gravar e com quantos processos."""

    model_config = ConfigDict(extra="forbid")

    root: str = "runs"
    dataset_dir: Optional[str] = None
    jobs: int = Field(default=1, ge=1)


class ExperimentConfig(BaseModel):
    """
    Configuração completa de um experimento, com todos os padrões explícitos.

    `data.seed` segue a semente mestre quando não é fixada no arquivo; assim
    uma varredura de sementes varia dados e treino, e fixar `data.seed`
    congela o benchmark.
    """

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    data: GeneratorConfig = Field(default_factory=GeneratorConfig)
    task: TaskSpec = Field(default_factory=TaskSpec)
    trainer: TrainerSection = Field(default_factory=TrainerSection)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    policy: PolicyUpdateConfig = Field(default_factory=PolicyUpdateConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    study: StudyConfig = Field(default_factory=StudyConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    _data_seed_pinned: bool = PrivateAttr(default=False)

    @model_validator(mode="after")
    def _follow_master_seed(self) -> "ExperimentConfig":
        self._data_seed_pinned = "seed" in self.data.model_fields_set
        if not self._data_seed_pinned:
            self.data = self.data.model_copy(update={"seed": self.seed})
        return self

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(
            **self.trainer.model_dump(),
            seed=self.seed,
            task=self.task,
            reward=self.reward,
            policy=self.policy,
        )

    def with_overrides(self, overrides: Mapping[str, Any]) -> "ExperimentConfig":
        """Nova configuração com chaves pontuadas substituídas (revalidada)."""
        raw = self.model_dump(mode="json")
        if not self._data_seed_pinned and "data.seed" not in overrides:
            del raw["data"]["seed"]
        for path, value in overrides.items():
            _assign(raw, path, value)
        return validate_config(raw)


def _assign(raw: Dict[str, Any], path: str, value: Any) -> None:
    node = raw
    keys = path.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError("não é uma tabela", path)
    node[keys[-1]] = value


def parse_scalar(text: str) -> Any:
    """Interpreta um valor como escalar/lista TOML; texto cru se não for TOML válido."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def env_overrides(environ: Mapping[str, str]) -> Dict[str, Any]:
    """
    Substituições `AMENABLE_<SEÇÃO>_<CHAVE>` (ex: AMENABLE_TRAINER_BATCH_SIZE=16).

    `AMENABLE_SEED` atinge a chave de topo `seed`.
    """
    overrides = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :].lower()
        section, _, key = rest.partition("_")
        if section in SECTIONS and key:
            overrides[f"{section}.{key}"] = parse_scalar(environ[name])
        elif rest == "seed":
            overrides["seed"] = parse_scalar(environ[name])
        else:
            raise ConfigError(f"variável de ambiente desconhecida: {name}", rest)
    return overrides


def find_line(text: str, path: str) -> Optional[int]:
    """Linha (1-based) onde a chave pontuada é definida no TOML de origem."""
    if not text or not path:
        return None
    parts = path.split(".")
    header = re.compile(r"^\s*\[([^\[\]]+)\]")
    # procura a chave na tabela mais longa que casar com o prefixo do caminho
    for split in range(len(parts) - 1, -1, -1):
        table, key = ".".join(parts[:split]), parts[split]
        assignment = re.compile(rf"^\s*{re.escape(key)}\s*=")
        section_header = re.compile(rf"^\s*\[{re.escape('.'.join(parts[: split + 1]))}\]")
        current = ""
        for number, line in enumerate(text.splitlines(), start=1):
            if section_header.match(line):
                return number
            match = header.match(line)
            if match:
                current = match.group(1).strip()
            elif current == table and assignment.match(line):
                return number
    return None


def validate_config(raw: Dict[str, Any], text: str = "") -> ExperimentConfig:
    """
    Valida o dicionário bruto e aplica as regras entre seções.

    Raises:
        ConfigError: Primeiro erro encontrado, com caminho da chave e linha.
    """
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        path = ".".join(str(p) for p in first["loc"])
        raise ConfigError(first["msg"], path, find_line(text, path)) from exc

    needed = MIN_TRAIN_PER_BATCH * cfg.trainer.batch_size
    if cfg.data.n_train < needed:
        raise ConfigError(
            f"n_train={cfg.data.n_train} < {MIN_TRAIN_PER_BATCH}·batch_size={needed}",
            "data.n_train",
            find_line(text, "data.n_train"),
        )
    trainer = cfg.trainer
    if trainer.mode == "shaped" and trainer.shaping_source == "controller" and not trainer.h_a_checkpoint:
        raise ConfigError(
            "modo shaped com shaping_source=controller exige h_a_checkpoint",
            "trainer.h_a_checkpoint",
            find_line(text, "trainer.mode"),
        )
    return cfg


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> ExperimentConfig:
    """
    Carrega a configuração: arquivo TOML, depois ambiente, depois CLI.

    Args:
        path (str, optional): Arquivo TOML; None usa só os padrões.
        overrides (Mapping[str, Any], optional): Chaves pontuadas vindas da CLI.
        environ (Mapping[str, str], optional): Ambiente (padrão: `os.environ`).

    Raises:
        ConfigError: Sintaxe inválida, chave desconhecida, valor fora de faixa
            ou arquivo ausente.
    """
    text = ""
    raw: Dict[str, Any] = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"arquivo não encontrado: {path}")
        with open(path, encoding="utf-8") as f:
            text = f.read()
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            match = re.search(r"line (\d+)", str(exc))
            raise ConfigError(f"sintaxe inválida: {exc}", "", int(match.group(1)) if match else None) from exc

    merged = dict(env_overrides(os.environ if environ is None else environ))
    merged.update(overrides or {})
    for key, value in merged.items():
        _assign(raw, key, value)
    cfg = validate_config(raw, text)
    logger.info("[CONFIG] Configuração carregada (%s)", path or "padrões")
    return cfg
