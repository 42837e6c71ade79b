from __future__ import annotations

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.ndimage import gaussian_filter

from src.errors import InfeasibleConfigError
from src.seeding import derive_rng
from .dataset import ImageSample, SampleSet, SplitDataset
from .validator import DatasetValidator

logger = logging.getLogger(__name__)

ARTEFACT_KINDS = ("gaussian_noise", "stripe", "blur", "channel_misalign")
HARD_KINDS = ("low_contrast", "tiny_target")
SPLITS = ("train", "val", "holdout")


class GeneratorConfig(BaseModel):
    """
    Parâmetros do gerador do benchmark sintético.

    As taxas por tipo de artefato somam a probabilidade de uma amostra ser
    corrompida; as taxas de caso difícil valem apenas para amostras com alvo.
    `roi_occlusion` é quanto um artefato na região do alvo apaga o próprio
    alvo (multiplicado pela severidade); fora da região nada é apagado.
    """

    model_config = ConfigDict(extra="forbid")

    n_train: int = Field(default=2000, ge=1)
    n_val: int = Field(default=200, ge=1)
    n_holdout: int = Field(default=400, ge=1)
    height: int = Field(default=32, ge=8)
    width: int = Field(default=32, ge=8)
    channels: int = Field(default=1, ge=1, le=3)
    presence_rate: float = Field(default=0.5, ge=0.0, le=1.0)
    radius_min: float = Field(default=4.0, gt=0.0)
    radius_max: float = Field(default=7.0, gt=0.0)
    intensity_min: float = Field(default=0.65, ge=0.0, le=1.0)
    intensity_max: float = Field(default=0.9, ge=0.0, le=1.0)
    background_min: float = Field(default=0.2, ge=0.0, le=1.0)
    background_max: float = Field(default=0.4, ge=0.0, le=1.0)
    texture_sigma: float = Field(default=2.0, gt=0.0)
    texture_amplitude: float = Field(default=0.06, ge=0.0)
    corruption_rates: Dict[str, float] = Field(
        default_factory=lambda: {
            "gaussian_noise": 0.13,
            "stripe": 0.12,
            "blur": 0.025,
            "channel_misalign": 0.025,
        }
    )
    roi_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    roi_occlusion: float = Field(default=1.0, ge=0.0, le=1.0)
    severity_min: float = Field(default=0.6, gt=0.0, le=1.0)
    severity_max: float = Field(default=1.0, gt=0.0, le=1.0)
    hard_rates: Dict[str, float] = Field(
        default_factory=lambda: {"low_contrast": 0.15, "tiny_target": 0.15}
    )
    hard_severity: float = Field(default=0.85, ge=0.0, le=1.0)
    require_all_quadrants: bool = True
    seed: int = 0

    @model_validator(mode="after")
    def _check_rates(self) -> "GeneratorConfig":
        for name, rates, kinds in (
            ("corruption_rates", self.corruption_rates, ARTEFACT_KINDS),
            ("hard_rates", self.hard_rates, HARD_KINDS),
        ):
            unknown = set(rates) - set(kinds)
            if unknown:
                raise ValueError(f"{name}: tipos desconhecidos {sorted(unknown)}")
            if any(r < 0 or r > 1 for r in rates.values()):
                raise ValueError(f"{name}: taxas devem estar em [0, 1]")
            if sum(rates.values()) > 1.0 + 1e-12:
                raise ValueError(f"{name}: soma das taxas excede 1")
        if self.radius_min > self.radius_max:
            raise ValueError("radius_min > radius_max")
        if self.severity_min > self.severity_max:
            raise ValueError("severity_min > severity_max")
        if 2 * self.radius_max + 6 > min(self.height, self.width):
            raise ValueError("raio máximo não cabe no raster")
        return self

    @property
    def artefact_rate(self) -> float:
        return float(sum(self.corruption_rates.values()))

    @property
    def hard_rate(self) -> float:
        return float(sum(self.hard_rates.values()))

    def split_sizes(self) -> Dict[str, int]:
        return {"train": self.n_train, "val": self.n_val, "holdout": self.n_holdout}


def disc_mask(height: int, width: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2


def bounding_region(mask: np.ndarray, margin: int = 1) -> np.ndarray:
    """Retângulo envolvente da máscara, dilatado por `margin` pixels."""
    region = np.zeros_like(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return region
    r0, r1 = max(rows[0] - margin, 0), min(rows[-1] + margin + 1, mask.shape[0])
    c0, c1 = max(cols[0] - margin, 0), min(cols[-1] + margin + 1, mask.shape[1])
    region[r0:r1, c0:c1] = True
    return region


def corrupt(
    raster: np.ndarray,
    kind: str,
    in_roi: bool,
    severity: float,
    rng: np.random.Generator,
    region: np.ndarray,
    occlusion: float = 0.0,
) -> np.ndarray:
    """
    Injeta um artefato de imagem confinado a uma região.

    Tipos de artefato (posição/fase sempre aleatórias, para que o
    autoencoder não aprenda a reconstruí-los):
    - **gaussian_noise:** ruído aditivo, desvio 0,4·severidade.
    - **stripe:** faixas senoidais horizontais ou verticais, amplitude
      0,5·severidade, período e fase aleatórios.
    - **blur:** mistura com versão borrada (sigma 1,5) na proporção da severidade.
    - **channel_misalign:** deslocamento de 2 a 4 pixels de um canal (ou do
      raster inteiro quando há um só canal), misturado pela severidade.

    Na região do alvo o artefato primeiro apaga a estrutura que cobre: o
    raster é puxado para o nível médio do fundo pelo fator
    `occlusion·severidade` e só então perturbado. Dentro da região o artefato
    degrada a tarefa; fora dela só a aparência muda.

    Args:
        raster (np.ndarray): `(C, H, W)` em [0, 1].
        in_roi (bool): True confina à `region`; False ao seu complemento.
        severity (float): Intensidade em (0, 1]; perturbação → 0 quando → 0.
        region (np.ndarray): Máscara `(H, W)` da região envolvente do alvo.
        occlusion (float): Fração em [0, 1] do alvo apagada por unidade de
            severidade quando `in_roi`.

    Returns:
        np.ndarray: Novo raster, limitado a [0, 1]; fora da área afetada os
        pixels são idênticos bit a bit aos de entrada.

    Raises:
        ValueError: Tipo desconhecido ou severidade fora de (0, 1].
    """
    if kind not in ARTEFACT_KINDS:
        raise ValueError(f"Tipo de artefato desconhecido: {kind}")
    if not 0.0 < severity <= 1.0:
        raise ValueError(f"Severidade fora de (0, 1]: {severity}")

    original = np.asarray(raster, dtype=np.float64)
    x = original
    c, h, w = x.shape
    if in_roi and occlusion > 0.0 and (~region).any():
        level = original[:, ~region].mean(axis=1)[:, None, None]
        x = original + occlusion * severity * (level - original)
    if kind == "gaussian_noise":
        perturbed = x + rng.normal(0.0, 0.4 * severity, size=x.shape)
    elif kind == "stripe":
        period = rng.uniform(3.0, 6.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        if rng.random() < 0.5:
            wave = np.sin(2.0 * np.pi * np.arange(h) / period + phase)[:, None]
        else:
            wave = np.sin(2.0 * np.pi * np.arange(w) / period + phase)[None, :]
        perturbed = x + 0.5 * severity * wave[None, :, :]
    elif kind == "blur":
        blurred = gaussian_filter(x, sigma=(0.0, 1.5, 1.5), mode="nearest")
        perturbed = x + severity * (blurred - x)
    else:
        shift = int(rng.integers(2, 5)) * (1 if rng.random() < 0.5 else -1)
        axis = 1 + int(rng.integers(0, 2))
        shifted = x.copy()
        channel = int(rng.integers(0, c)) if c > 1 else None
        if channel is None:
            shifted = np.roll(x, shift, axis=axis)
        else:
            shifted[channel] = np.roll(x[channel], shift, axis=axis - 1)
        perturbed = x + severity * (shifted - x)

    area = region if in_roi else ~region
    return np.where(area[None, :, :], np.clip(perturbed, 0.0, 1.0), original)


def make_hard(
    raster: np.ndarray,
    label: np.ndarray,
    kind: str,
    severity: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Torna um caso clinicamente difícil sem introduzir artefato de imagem.

    - **low_contrast:** reduz a diferença média alvo-fundo pelo fator
      `(1 − severidade)`, preservando a textura.
    - **tiny_target:** encolhe o alvo aos `max(1, round(4·(1 − severidade)))`
      pixels mais próximos do centroide; os pixels removidos recebem valores
      sorteados do fundo e a máscara do rótulo é atualizada.

    Raises:
        ValueError: Alvo ausente ou tipo desconhecido.
    """
    if kind not in HARD_KINDS:
        raise ValueError(f"Tipo de caso difícil desconhecido: {kind}")
    mask = np.asarray(label, dtype=bool).reshape(raster.shape[1:])
    if not mask.any():
        raise ValueError("make_hard exige alvo presente")
    x = np.array(raster, dtype=np.float64)
    new_mask = mask.copy()
    if severity <= 0.0:
        return x, new_mask.astype(np.float64)[None]

    if kind == "low_contrast":
        for ch in range(x.shape[0]):
            gap = x[ch][mask].mean() - x[ch][~mask].mean()
            x[ch][mask] -= severity * gap
    else:
        keep = max(1, int(round(4 * (1.0 - severity))))
        ys, xs = np.nonzero(mask)
        dist = (ys - ys.mean()) ** 2 + (xs - xs.mean()) ** 2
        order = np.argsort(dist, kind="stable")
        new_mask = np.zeros_like(mask)
        new_mask[ys[order[:keep]], xs[order[:keep]]] = True
        removed = mask & ~new_mask
        for ch in range(x.shape[0]):
            background = x[ch][~mask]
            x[ch][removed] = rng.choice(background, size=int(removed.sum()))

    return np.clip(x, 0.0, 1.0), new_mask.astype(np.float64)[None]


def _render_clean(
    cfg: GeneratorConfig, rng: np.random.Generator, present: bool
) -> Tuple[np.ndarray, np.ndarray, Tuple[float, float, float]]:
    h, w, c = cfg.height, cfg.width, cfg.channels
    radius = rng.uniform(cfg.radius_min, cfg.radius_max)
    cy = rng.uniform(radius + 2, h - radius - 3)
    cx = rng.uniform(radius + 2, w - radius - 3)
    disc = disc_mask(h, w, cy, cx, radius)

    level = rng.uniform(cfg.background_min, cfg.background_max)
    intensity = rng.uniform(cfg.intensity_min, cfg.intensity_max)
    raster = np.empty((c, h, w))
    for ch in range(c):
        texture = gaussian_filter(rng.normal(size=(h, w)), cfg.texture_sigma)
        texture /= texture.std() + 1e-12
        gain = 1.0 if ch == 0 else rng.uniform(0.85, 1.0)
        plane = gain * level + cfg.texture_amplitude * texture
        if present:
            plane[disc] = gain * intensity + 0.5 * cfg.texture_amplitude * texture[disc]
        raster[ch] = plane
    mask = disc if present else np.zeros_like(disc)
    return np.clip(raster, 0.0, 1.0), mask, (cy, cx, radius)


def _quadrant_counts(cfg: GeneratorConfig, n_present: int) -> Dict[Tuple[bool, bool], int]:
    p_a, p_h = cfg.artefact_rate, cfg.hard_rate
    both = int(round(p_a * p_h * n_present))
    art_only = int(round(p_a * (1 - p_h) * n_present))
    hard_only = int(round((1 - p_a) * p_h * n_present))
    clean = max(n_present - both - art_only - hard_only, 0)
    return {(True, True): both, (True, False): art_only, (False, True): hard_only, (False, False): clean}


def _assign_flags(cfg: GeneratorConfig, split: str, n: int) -> List[Dict]:
    """Sorteia, por partição, presença e flags com contagens exatas por quadrante."""
    rng = derive_rng(cfg.seed, "split", split)
    n_present = int(round(cfg.presence_rate * n))
    counts = _quadrant_counts(cfg, n_present)

    if cfg.require_all_quadrants and (cfg.artefact_rate > 0 or cfg.hard_rate > 0):
        empty = [q for q, count in counts.items() if count < 1]
        if empty:
            raise InfeasibleConfigError(
                f"Partição '{split}': quadrante(s) (artefato, difícil) {empty} "
                f"com contagem esperada zero para {n_present} amostras com alvo"
            )

    flags = []
    for (artefact, hard), count in counts.items():
        flags += [{"present": True, "artefact": artefact, "hard": hard}] * count
    n_absent = n - len(flags)
    n_absent_art = int(round(cfg.artefact_rate * n_absent))
    flags += [{"present": False, "artefact": True, "hard": False}] * n_absent_art
    flags += [{"present": False, "artefact": False, "hard": False}] * (n_absent - n_absent_art)
    flags = [dict(flags[i]) for i in rng.permutation(len(flags))]

    art_kinds = [k for k in ARTEFACT_KINDS if cfg.corruption_rates.get(k, 0) > 0]
    hard_kinds = [k for k in HARD_KINDS if cfg.hard_rates.get(k, 0) > 0]
    art_idx = [i for i, f in enumerate(flags) if f["artefact"]]
    n_roi = int(round(cfg.roi_fraction * len(art_idx)))
    roi_set = set(rng.permutation(art_idx)[:n_roi].tolist()) if art_idx else set()

    for i, f in enumerate(flags):
        f["artefact_kind"] = "none"
        f["hard_kind"] = "none"
        f["in_roi"] = i in roi_set
        if f["artefact"]:
            p = np.array([cfg.corruption_rates[k] for k in art_kinds])
            f["artefact_kind"] = str(rng.choice(art_kinds, p=p / p.sum()))
        if f["hard"]:
            p = np.array([cfg.hard_rates[k] for k in hard_kinds])
            f["hard_kind"] = str(rng.choice(hard_kinds, p=p / p.sum()))
    return flags


def generate_sample(cfg: GeneratorConfig, sample_id: int, flags: Dict) -> ImageSample:
    """Renderiza uma amostra a partir do seu fluxo aleatório `(seed, id)`."""
    rng = derive_rng(cfg.seed, "sample", sample_id)
    raster, mask, (cy, cx, radius) = _render_clean(cfg, rng, flags["present"])
    region = bounding_region(disc_mask(cfg.height, cfg.width, cy, cx, radius))
    label = mask.astype(np.float64)[None]
    sample = ImageSample(
        sample_id=sample_id,
        raster=raster,
        mask=label,
        target_present=flags["present"],
        center_y=float(cy),
        center_x=float(cx),
        radius=float(radius),
    )
    if flags["hard"]:
        sample.raster, sample.mask = make_hard(
            raster, label, flags["hard_kind"], cfg.hard_severity, rng
        )
        sample.hard_flag = True
        sample.hard_kind = flags["hard_kind"]
        sample.hard_severity = cfg.hard_severity
    if flags["artefact"]:
        severity = float(rng.uniform(cfg.severity_min, cfg.severity_max))
        sample.raster = corrupt(
            sample.raster,
            flags["artefact_kind"],
            flags["in_roi"],
            severity,
            rng,
            region,
            occlusion=cfg.roi_occlusion,
        )
        sample.artefact_flag = True
        sample.artefact_kind = flags["artefact_kind"]
        sample.artefact_in_roi = bool(flags["in_roi"])
        sample.artefact_severity = severity
    return sample


def generate(cfg: GeneratorConfig) -> SplitDataset:
    """
    Gera o benchmark sintético completo (treino, validação e holdout).

    Fluxo de Geração:
    1. **Flags por partição:** presença do alvo, artefato e caso difícil são
       atribuídos com contagens exatas por quadrante (artefato × difícil),
       o que garante os quatro quadrantes populados e flags independentes.
    2. **Renderização por amostra:** disco brilhante sobre fundo texturizado,
       cada amostra com seu próprio fluxo aleatório derivado de `(seed, id)`.
    3. **Degradações:** primeiro o caso difícil (altera imagem e rótulo),
       depois o artefato (altera só a imagem; o rótulo reflete a geometria limpa).
    4. **Auditoria:** o `DatasetValidator` anota as flags de conformidade.

    Returns:
        SplitDataset: Partições com ids disjuntos e consecutivos.

    Raises:
        InfeasibleConfigError: Algum quadrante ficaria vazio.
    """
    logger.info("[GERAR] Gerando benchmark sintético (seed=%d)", cfg.seed)
    parts = {}
    next_id = 0
    for split, n in cfg.split_sizes().items():
        flags = _assign_flags(cfg, split, n)
        samples = [generate_sample(cfg, next_id + i, f) for i, f in enumerate(flags)]
        next_id += n
        part = SampleSet.from_samples(samples, split)
        report = DatasetValidator.run_quality_checks(part)
        invalid = int((~report["registro_conforme"]).sum())
        if invalid:
            logger.warning("[ALERTA] %d amostras inconsistentes em '%s'", invalid, split)
        parts[split] = part
        logger.info(
            "[GERAR] %s: %d amostras, %d com artefato, %d difíceis",
            split,
            n,
            int(part.artefact_flags.sum()),
            int(part.hard_flags.sum()),
        )
    return SplitDataset(
        train=parts["train"],
        val=parts["val"],
        holdout=parts["holdout"],
        config=cfg.model_dump(),
        seed=cfg.seed,
    )
