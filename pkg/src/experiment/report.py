from __future__ import annotations

import json
import logging
import os
from typing import Dict, List, Optional, Tuple

import pandas as pd

from src.errors import MissingArtifactError
from src.iqa.evaluation import cohens_kappa, contingency, quadrant_report
from src.iqa.models import RunManifest
from .config import ExperimentConfig
from .plots import write_curve_svg
from .runner import MANIFEST_NAME, dataset_for, execute, write_csv
from .study import CELLS_DIR

logger = logging.getLogger(__name__)

RUN_COLUMNS = [
    "run_id",
    "command",
    "mode",
    "phi",
    "seed",
    "strategy",
    "s_rej",
    "rule",
    "status",
    "n_updates",
    "converged",
    "train_run_id",
    "path",
]

DEVIATIONS = """# Decisões de implementação

Decisões que resolvem pontos em aberto do método ou o adaptam à escala de
bancada. Cada item vale para todas as execuções deste relatório.

- **Contagem retida na avaliação:** ⌈(1 − k)·H⌉ amostras de maior nota; empates
  pelo id crescente.
- **Contagem mantida na recompensa selective:** ⌊(1 − s_rej)·M⌋; M′ = 0 é erro.
- **Sentido da rejeição selective:** descarta as notas mais baixas; o sentido
  inverso existe só como ablação (`reward.keep_lowest`).
- **Recorte por média móvel:** na primeira observação R̄ = R̃ e R = 0.
- **Vantagem do controlador:** retorno menos a linha de base anterior (começa
  em 0), atualizada depois de cada atualização da política.
- **Recompensa moldada:** com φ < 1 as amostras de validação treinam o
  controlador por um termo de regressão de peso 0,1·(1 − φ) rumo a
  φ·σ(R) + (1 − φ)·h_a; com φ = 1 o caminho de código é idêntico ao modo
  task-specific.
- **Dice:** máscaras vazias nas duas pontas valem 1; seleção vazia pula o
  passo do preditor e é registrada.
- **Convenção das tabelas de contingência:** positivo = baixa qualidade nas
  duas ordenações (bottom-k); declarada em cada linha das tabelas.
- **Verdade de campo task-specific:** artefato dentro da região do alvo ou
  caso difícil.
- **Desvio-padrão entre sementes:** amostral (ddof = 1); 0 com uma execução.
- **Manifestos:** sem relógio de parede; tempos ficam em `timing.json`.
- **Escala:** rasters sintéticos 32×32 e redes pequenas; os números não são
  comparáveis aos valores clínicos publicados, só as direções e as formas.
"""


class RunStore:
    """
    Camada de leitura dos diretórios de execução.

    Os artefatos são lidos uma única vez e reutilizados; os getters devolvem
    cópias. Artefatos ausentes não interrompem a leitura: são anotados em
    `missing` para o relatório parcial.

    Attributes:
        run_dirs (List[str]): Diretórios informados (execuções ou estudos).
        missing (List[str]): Artefatos esperados e não encontrados.
    """

    def __init__(self, run_dirs: List[str]):
        self.run_dirs = [os.path.normpath(d) for d in run_dirs]
        self.missing: List[str] = []
        self._manifests: Dict[str, RunManifest] = {}
        self._loaded = False

    def load(self) -> None:
        """Descobre todas as execuções, descendo nas células de estudos. Idempotente."""
        if self._loaded:
            return
        for run_dir in self.run_dirs:
            for path in self._expand(run_dir):
                self._load_manifest(path)
        self._loaded = True

    def _expand(self, run_dir: str) -> List[str]:
        found = [run_dir]
        cells = os.path.join(run_dir, CELLS_DIR)
        if os.path.isdir(cells):
            for cell in sorted(os.listdir(cells)):
                for sub in ("train", "eval", "baseline"):
                    path = os.path.join(cells, cell, sub)
                    if os.path.isdir(path):
                        found.append(path)
        return found

    def _load_manifest(self, path: str) -> None:
        manifest_path = os.path.join(path, MANIFEST_NAME)
        if not os.path.exists(manifest_path):
            logger.error("[ERRO] Manifesto não encontrado: %s", manifest_path)
            self.missing.append(manifest_path)
            return
        try:
            with open(manifest_path, encoding="utf-8") as f:
                self._manifests[path] = RunManifest.model_validate(json.load(f))
        except Exception as exc:
            logger.exception("[ERRO] Manifesto ilegível %s: %s", manifest_path, exc)
            self.missing.append(manifest_path)

    def manifests(self, command: Optional[str] = None) -> List[Tuple[str, RunManifest]]:
        self.load()
        return [
            (path, m.model_copy(deep=True))
            for path, m in sorted(self._manifests.items())
            if command is None or m.command == command
        ]

    def artifact(self, path: str, name: str) -> Optional[pd.DataFrame]:
        """CSV de uma execução; None (e anotado em `missing`) quando ausente."""
        csv_path = os.path.join(path, name)
        if not os.path.exists(csv_path):
            self.missing.append(csv_path)
            return None
        return pd.read_csv(csv_path)

    def train_of(self, eval_manifest: RunManifest) -> Optional[Tuple[str, RunManifest]]:
        """Execução de treino referenciada por uma avaliação."""
        train_id = eval_manifest.summary.get("train_run_id")
        for path, m in self.manifests("train"):
            if m.run_id == train_id:
                return path, m
        return None


def _train_labels(manifest: RunManifest) -> Dict[str, object]:
    cfg = manifest.config
    reward = cfg.get("reward", {})
    return {
        "mode": manifest.mode,
        "phi": manifest.phi,
        "strategy": reward.get("strategy"),
        "s_rej": reward.get("s_rej"),
        "rule": cfg.get("policy", {}).get("rule"),
    }


def _curve_label(labels: Dict[str, object]) -> str:
    label = str(labels["mode"])
    if labels["mode"] == "shaped":
        label += f" phi={labels['phi']:g}"
    label += f" {labels['strategy']}"
    if labels.get("s_rej"):
        label += f" s_rej={labels['s_rej']:g}"
    return f"{label} {labels['rule']}"


def runs_table(store: RunStore) -> pd.DataFrame:
    rows = []
    for path, m in store.manifests():
        labels = _train_labels(m)
        rows.append(
            {
                **labels,
                "run_id": m.run_id,
                "command": m.command,
                "seed": m.seed,
                "status": m.status,
                "n_updates": m.n_updates,
                "converged": m.converged,
                "train_run_id": m.summary.get("train_run_id", ""),
                "path": path,
            }
        )
    df = pd.DataFrame(rows, columns=RUN_COLUMNS)
    return df.sort_values(["command", "run_id", "path"]).reset_index(drop=True)


def merged_curves(store: RunStore) -> pd.DataFrame:
    """
    Curvas de todas as avaliações, agregadas por configuração de treino:
    média das execuções e desvio entre execuções (faixa ± desvio).
    """
    frames = []
    for path, m in store.manifests("eval"):
        if m.status != "ok":
            continue
        curve = store.artifact(path, "curve.csv")
        train = store.train_of(m)
        if curve is None or train is None:
            continue
        curve["label"] = _curve_label(_train_labels(train[1]))
        frames.append(curve)
    if not frames:
        return pd.DataFrame(columns=["label", "k", "mean", "std", "n_runs", "n_retained", "run_id"])
    long = pd.concat(frames, ignore_index=True)
    grouped = long.groupby(["label", "k"])
    out = grouped["mean"].agg(["mean", "std", "count"]).reset_index()
    out["std"] = out["std"].fillna(0.0)
    out["n_retained"] = grouped["n_retained"].first().values
    out["run_id"] = grouped["run_id"].apply(lambda ids: ";".join(sorted(set(ids)))).values
    return out.rename(columns={"count": "n_runs"}).sort_values(["label", "k"]).reset_index(drop=True)


def _pairs(store: RunStore) -> Dict[int, Dict[str, Tuple[str, RunManifest, RunManifest]]]:
    """Avaliações por semente e papel: ts (task-specific ou φ=1), ta (task-agnostic ou φ=0), φ intermediários."""
    out: Dict[int, Dict[str, Tuple[str, RunManifest, RunManifest]]] = {}
    for path, m in store.manifests("eval"):
        train = store.train_of(m)
        if m.status != "ok" or train is None:
            continue
        tm = train[1]
        if tm.mode == "task_specific" or (tm.mode == "shaped" and tm.phi == 1.0):
            role = "ts"
        elif tm.mode == "task_agnostic" or (tm.mode == "shaped" and tm.phi == 0.0):
            role = "ta"
        else:
            role = f"shaped{tm.phi:g}"
        out.setdefault(tm.seed, {}).setdefault(role, (path, m, tm))
    return out


def kappa_tables(store: RunStore, kappa_k: float) -> pd.DataFrame:
    """κ entre os bottom-k de controladores task-specific e task-agnostic da mesma semente."""
    rows = []
    for seed, roles in sorted(_pairs(store).items()):
        if "ts" not in roles or "ta" not in roles:
            continue
        ts = store.artifact(roles["ts"][0], "holdout_scores.csv")
        ta = store.artifact(roles["ta"][0], "holdout_scores.csv")
        if ts is None or ta is None:
            continue
        merged = ts.merge(ta, on="sample_id", suffixes=("_ts", "_ta")).sort_values("sample_id")
        table = contingency(
            merged["score_ts"].to_numpy(),
            merged["score_ta"].to_numpy(),
            kappa_k,
            kappa_k,
            ids=merged["sample_id"].to_numpy(),
        )
        rows.append(
            {
                "seed": seed,
                **table.to_dict(),
                "kappa": cohens_kappa(table),
                "k": kappa_k,
                "convention": table.convention,
                "run_id": f"{roles['ts'][1].run_id};{roles['ta'][1].run_id}",
            }
        )
    return pd.DataFrame(rows)


def quadrant_summary(store: RunStore, quadrant_k: float) -> pd.DataFrame:
    """Mediana da nota moldada por quadrante TP/FP/FN/TN (ts × ta) para cada φ intermediário."""
    rows = []
    for seed, roles in sorted(_pairs(store).items()):
        if "ts" not in roles or "ta" not in roles:
            continue
        ts = store.artifact(roles["ts"][0], "holdout_scores.csv")
        ta = store.artifact(roles["ta"][0], "holdout_scores.csv")
        if ts is None or ta is None:
            continue
        cfg = ExperimentConfig.model_validate(roles["ts"][2].config)
        meta = dataset_for(cfg).holdout.meta.sort_values("sample_id").reset_index(drop=True)
        shaped_roles = sorted(r for r in roles if r.startswith("shaped")) or ["ts"]
        for role in shaped_roles:
            shaped = store.artifact(roles[role][0], "holdout_scores.csv")
            if shaped is None:
                continue
            by_id = [frame.set_index("sample_id").loc[meta["sample_id"], "score"].to_numpy() for frame in (ts, ta, shaped)]
            report = quadrant_report(by_id[0], by_id[1], meta, quadrant_k, shaped_scores=by_id[2])
            for quadrant, median in report.medians.items():
                rows.append(
                    {
                        "seed": seed,
                        "phi": roles[role][2].phi,
                        "quadrant": quadrant,
                        "n": int(report.ids(quadrant).size),
                        "median_shaped_score": median,
                        "run_id": roles[role][1].run_id,
                    }
                )
    return pd.DataFrame(rows)


def build_report(run_dirs: List[str], out_dir: str, kappa_k: float = 0.1, quadrant_k: float = 0.1) -> Dict[str, str]:
    """
    Relatório consolidado de uma ou mais execuções.

    Fluxo de Execução:
    1. **Leitura:** `RunStore` descobre manifestos (inclusive células de estudo).
    2. **Tabelas:** runs.csv, curves.csv (+ curves.svg), tables/kappa.csv,
       tables/contingency.csv e tables/quadrant_summary.csv.
    3. **Registro:** deviations.md e missing.txt (vazio quando nada falta).

    Reexecutar sobre os mesmos diretórios produz os mesmos bytes.

    Raises:
        MissingArtifactError: Nenhuma execução concluída entre os diretórios.
    """
    store = RunStore(run_dirs)
    store.load()
    if not any(m.status == "ok" for _, m in store.manifests()):
        raise MissingArtifactError(", ".join(run_dirs), "nenhuma execução concluída")
    tables_dir = os.path.join(out_dir, "tables")
    os.makedirs(tables_dir, exist_ok=True)
    written: Dict[str, str] = {}

    write_csv(runs_table(store), os.path.join(out_dir, "runs.csv"))
    written["runs"] = "runs.csv"

    curves = merged_curves(store)
    write_csv(curves, os.path.join(out_dir, "curves.csv"))
    written["curves"] = "curves.csv"
    if not curves.empty:
        write_curve_svg(curves, os.path.join(out_dir, "curves.svg"), group="label")
        written["curves_svg"] = "curves.svg"

    contingency_frames = []
    for path, m in store.manifests("eval"):
        table = store.artifact(path, "table.csv") if m.status == "ok" else None
        if table is not None:
            contingency_frames.append(table)
    if contingency_frames:
        write_csv(pd.concat(contingency_frames, ignore_index=True), os.path.join(tables_dir, "contingency.csv"))
        written["contingency"] = os.path.join("tables", "contingency.csv")

    kappa = kappa_tables(store, kappa_k)
    if not kappa.empty:
        write_csv(kappa, os.path.join(tables_dir, "kappa.csv"))
        written["kappa"] = os.path.join("tables", "kappa.csv")
    quadrants = quadrant_summary(store, quadrant_k)
    if not quadrants.empty:
        write_csv(quadrants, os.path.join(tables_dir, "quadrant_summary.csv"))
        written["quadrant_summary"] = os.path.join("tables", "quadrant_summary.csv")

    with open(os.path.join(out_dir, "deviations.md"), "w", encoding="utf-8") as f:
        f.write(DEVIATIONS)
    written["deviations"] = "deviations.md"
    missing = sorted(set(store.missing))
    with open(os.path.join(out_dir, "missing.txt"), "w", encoding="utf-8") as f:
        f.writelines(f"{line}\n" for line in missing)
    written["missing"] = "missing.txt"
    if missing:
        logger.warning("[ALERTA] Relatório parcial: %d artefatos ausentes", len(missing))
    logger.info("[SUCESSO] Relatório gravado em %s", out_dir)
    return written


def report_command(cfg: ExperimentConfig, run_dir: str, run_dirs: List[str]) -> RunManifest:
    """`report`: consolida `run_dirs` em `run_dir`, com manifesto próprio."""

    def body(manifest: RunManifest) -> RunManifest:
        manifest.artifacts.update(
            build_report(run_dirs, run_dir, cfg.evaluation.kappa_k, cfg.evaluation.quadrant_k)
        )
        manifest.summary["sources"] = [os.path.normpath(d) for d in run_dirs]
        return manifest

    return execute("report", cfg, run_dir, body)
