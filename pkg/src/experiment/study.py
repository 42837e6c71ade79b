from __future__ import annotations

import logging
import os
import traceback
from multiprocessing import Pool
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from src.errors import AmenabilityError, CellFailureError, MissingArtifactError
from src.iqa.evaluation import (
    cohens_kappa,
    contingency,
    paired_ttest,
    prevalence_k,
    quadrant_report,
    task_impact_flags,
)
from src.iqa.models import RunManifest
from .config import ExperimentConfig
from .runner import (
    CHECKPOINT_DIR,
    baseline_command,
    dataset_for,
    evaluate_command,
    execute,
    read_manifest,
    train_command,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)

CELLS_DIR = "cells"
GRID_AXIS = {"shaped": "phi", "srej": "s_rej", "strategies": "strategy", "rules": "rule"}


class StudyCell(BaseModel):
    """
    Uma célula independente do estudo: um treino seguido da sua avaliação.

    Attributes:
        name (str): Nome determinístico; também é o subdiretório da célula.
        stage (int): Estágio (células do estágio n dependem só de estágios < n).
        seed (int): Semente mestre da célula.
        overrides (Dict[str, Any]): Chaves pontuadas aplicadas sobre a base.
        depends_on (str, optional): Célula cujo controlador congelado é o h_a.
        baseline (bool): True para a linha de base não seletiva (sem controlador).
        labels (Dict[str, Any]): Coordenadas da célula na grade (phi, s_rej, ...).
    """

    name: str
    stage: int = 0
    seed: int
    overrides: Dict[str, Any] = Field(default_factory=dict)
    depends_on: Optional[str] = None
    baseline: bool = False
    labels: Dict[str, Any] = Field(default_factory=dict)


class StudyPlan(BaseModel):
    """Estágios ordenados de células; a ordem de execução respeita as dependências."""

    kind: str
    ks: List[float]
    cells: List[StudyCell] = Field(default_factory=list)

    def stages(self) -> List[List[StudyCell]]:
        by_stage: Dict[int, List[StudyCell]] = {}
        for cell in self.cells:
            by_stage.setdefault(cell.stage, []).append(cell)
        return [by_stage[s] for s in sorted(by_stage)]

    def cell(self, name: str) -> StudyCell:
        for cell in self.cells:
            if cell.name == name:
                return cell
        raise KeyError(name)


def _controller_path(cell_name: str) -> str:
    return os.path.join(CELLS_DIR, cell_name, "train", CHECKPOINT_DIR, "controller")


def build_plan(cfg: ExperimentConfig) -> StudyPlan:
    """
    Monta o plano do estudo configurado em `[study]`.

    - **shaped:** estágio 0 treina o controlador task-agnostic de cada semente;
      estágio 1 treina o modo moldado para cada (semente, φ), com o h_a da
      mesma semente congelado.
    - **srej:** estratégia selective para cada s_rej.
    - **strategies:** as três estratégias de recompensa e a linha de base não
      seletiva, por semente.
    - **rules:** REINFORCE contra o surrogate recortado.

    Raises:
        InfeasibleConfigError: Nunca diretamente; grades vazias são barradas
            na validação da configuração.
    """
    study = cfg.study
    plan = StudyPlan(kind=study.kind, ks=list(cfg.evaluation.ks))
    for seed in study.seeds:
        if study.kind == "shaped":
            agnostic = f"agnostic-seed{seed}"
            plan.cells.append(
                StudyCell(
                    name=agnostic,
                    seed=seed,
                    overrides={"trainer.mode": "task_agnostic"},
                    labels={"role": "task_agnostic"},
                )
            )
            for phi in study.phis:
                plan.cells.append(
                    StudyCell(
                        name=f"shaped-phi{phi:g}-seed{seed}",
                        stage=1,
                        seed=seed,
                        overrides={
                            "trainer.mode": "shaped",
                            "trainer.shaping_source": "controller",
                            "trainer.h_a_checkpoint": _controller_path(agnostic),
                            "reward.phi": phi,
                        },
                        depends_on=agnostic,
                        labels={"phi": phi},
                    )
                )
        elif study.kind == "srej":
            for s_rej in study.s_rejs:
                plan.cells.append(
                    StudyCell(
                        name=f"srej{s_rej:g}-seed{seed}",
                        seed=seed,
                        overrides={"reward.strategy": "selective", "reward.s_rej": s_rej},
                        labels={"s_rej": s_rej},
                    )
                )
        elif study.kind == "strategies":
            for strategy in study.strategies:
                s_rej = study.selective_s_rej if strategy == "selective" else 0.0
                plan.cells.append(
                    StudyCell(
                        name=f"{strategy}-seed{seed}",
                        seed=seed,
                        overrides={"reward.strategy": strategy, "reward.s_rej": s_rej},
                        labels={"strategy": strategy},
                    )
                )
            plan.cells.append(
                StudyCell(
                    name=f"non_selective-seed{seed}",
                    seed=seed,
                    baseline=True,
                    labels={"strategy": "non_selective"},
                )
            )
        else:
            for rule in study.rules:
                plan.cells.append(
                    StudyCell(
                        name=f"{rule}-seed{seed}",
                        seed=seed,
                        overrides={"policy.rule": rule},
                        labels={"rule": rule},
                    )
                )
    return plan


def cell_config(base: ExperimentConfig, cell: StudyCell) -> ExperimentConfig:
    """Configuração resolvida da célula (a semente da célula substitui a mestre)."""
    return base.with_overrides({"seed": cell.seed, **cell.overrides})


def _run_cell(job: Tuple[Dict[str, Any], Dict[str, Any], str]) -> Dict[str, Any]:
    """
    Executa uma célula em um processo de trabalho.

    Recebe só estruturas serializáveis (configuração resolvida, célula e
    diretório do estudo) e devolve um registro de status; falhas viram
    registro, nunca derrubam o pool.
    """
    raw_cfg, raw_cell, study_dir = job
    cfg = ExperimentConfig.model_validate(raw_cfg)
    cell = StudyCell.model_validate(raw_cell)
    cell_dir = os.path.join(study_dir, CELLS_DIR, cell.name)
    record = {"name": cell.name, "status": "ok", "exit_code": 0, "failure": None}
    try:
        data = dataset_for(cfg)
        if cell.baseline:
            os.makedirs(os.path.join(cell_dir, "baseline"), exist_ok=True)
            baseline_command(cfg, os.path.join(cell_dir, "baseline"), data=data)
        else:
            for sub in ("train", "eval"):
                os.makedirs(os.path.join(cell_dir, sub), exist_ok=True)
            train_command(cfg, os.path.join(cell_dir, "train"), data=data, base_dir=study_dir)
            evaluate_command(
                cfg, os.path.join(cell_dir, "eval"), os.path.join(cell_dir, "train"), data=data
            )
    except AmenabilityError as exc:
        record.update(status="failed", exit_code=exc.exit_code, failure=str(exc))
    except Exception as exc:
        record.update(status="failed", exit_code=1, failure=f"{type(exc).__name__}: {exc}")
        logger.debug("[ERRO] %s", traceback.format_exc())
    logger.info("[ESTUDO] célula=%s status=%s", cell.name, record["status"])
    return record


def run_plan(
    base: ExperimentConfig, plan: StudyPlan, study_dir: str, jobs: int = 1
) -> List[Dict[str, Any]]:
    """
    Executa os estágios em ordem; dentro de um estágio as células rodam em
    paralelo (`jobs` processos). Uma célula cuja dependência falhou é marcada
    como falha sem rodar.
    """
    records: List[Dict[str, Any]] = []
    failed = set()
    for stage in plan.stages():
        runnable, blocked = [], []
        for cell in stage:
            (blocked if cell.depends_on in failed else runnable).append(cell)
        for cell in blocked:
            failed.add(cell.name)
            records.append(
                {
                    "name": cell.name,
                    "status": "failed",
                    "exit_code": MissingArtifactError.exit_code,
                    "failure": f"dependência falhou: {cell.depends_on}",
                }
            )
        jobs_args = [
            (cell_config(base, c).model_dump(mode="json"), c.model_dump(mode="json"), study_dir)
            for c in runnable
        ]
        if jobs > 1 and len(jobs_args) > 1:
            with Pool(min(jobs, len(jobs_args))) as pool:
                results = pool.map(_run_cell, jobs_args)
        else:
            results = [_run_cell(job) for job in jobs_args]
        for result in results:
            if result["status"] != "ok":
                failed.add(result["name"])
        records += results
    return sorted(records, key=lambda r: r["name"])


def _read_csv(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    return pd.read_csv(path)


def collect_curves(plan: StudyPlan, study_dir: str, ok: set) -> pd.DataFrame:
    """Curvas de todas as células concluídas em formato longo, com as coordenadas da grade."""
    frames = []
    for cell in plan.cells:
        if cell.name not in ok or cell.baseline:
            continue
        curve = _read_csv(os.path.join(study_dir, CELLS_DIR, cell.name, "eval", "curve.csv"))
        curve.insert(0, "seed", cell.seed)
        curve.insert(0, "cell", cell.name)
        for key, value in cell.labels.items():
            curve[key] = value
        frames.append(curve)
    if not frames:
        return pd.DataFrame()
    return pd.concat(frames, ignore_index=True)


def grid_table(long: pd.DataFrame, axis: str) -> pd.DataFrame:
    """Grade eixo × k com média e desvio entre sementes (análogo à tabela φ × k)."""
    rows = long.dropna(subset=[axis]) if axis in long else long.iloc[0:0]
    grouped = rows.groupby([axis, "k"])["mean"]
    stats = grouped.agg(["mean", "std", "count"]).reset_index()
    stats["std"] = stats["std"].fillna(0.0)
    stats["run_id"] = (
        rows.groupby([axis, "k"])["run_id"].apply(lambda ids: ";".join(sorted(set(ids)))).values
    )
    return stats.rename(columns={"count": "n_seeds"})


def _holdout_scores(study_dir: str, cell: str) -> pd.DataFrame:
    return _read_csv(os.path.join(study_dir, CELLS_DIR, cell, "eval", "holdout_scores.csv"))


def shaped_tables(
    base: ExperimentConfig, plan: StudyPlan, study_dir: str, ok: set, out_dir: str
) -> Dict[str, str]:
    """
    Tabelas do estudo moldado: κ entre φ=1 e φ=0 (e de cada um contra o seu
    eixo de verdade de campo) e quadrantes TP/FP/FN/TN por φ intermediário.
    """
    k = base.evaluation.kappa_k
    kappa_rows, quadrant_rows, artifacts = [], [], {}
    for seed in base.study.seeds:
        cells = {c.labels.get("phi"): c.name for c in plan.cells if c.seed == seed and "phi" in c.labels}
        agnostic = f"agnostic-seed{seed}"
        if agnostic not in ok:
            continue
        holdout = dataset_for(cell_config(base, plan.cell(agnostic))).holdout
        meta = holdout.meta.reset_index(drop=True)
        truth = {"task_impact": task_impact_flags(meta), "artefact_flag": meta["artefact_flag"].to_numpy(dtype=bool)}
        scores = {phi: _holdout_scores(study_dir, name) for phi, name in cells.items() if name in ok}
        ta = _holdout_scores(study_dir, agnostic)

        if 1.0 in scores and 0.0 in scores:
            ts_s, ta_s = scores[1.0], scores[0.0]
            impact, flagged = truth["task_impact"], truth["artefact_flag"]
            # contra rótulos, k = prevalência do rótulo
            pairs = [
                ("phi1_vs_phi0", ts_s["score"].to_numpy(), ta_s["score"].to_numpy(), k),
                ("phi1_vs_task_impact", ts_s["score"].to_numpy(), impact, prevalence_k(impact)),
                ("phi0_vs_artefact_flag", ta_s["score"].to_numpy(), flagged, prevalence_k(flagged)),
            ]
            run_ids = f"{ts_s['run_id'].iloc[0]};{ta_s['run_id'].iloc[0]}"
            for comparison, a, b, kk in pairs:
                table = contingency(a, b, kk, kk, ids=meta["sample_id"].to_numpy())
                kappa_rows.append(
                    {
                        "seed": seed,
                        "comparison": comparison,
                        **table.to_dict(),
                        "kappa": cohens_kappa(table),
                        "k": kk,
                        "convention": table.convention,
                        "run_id": run_ids,
                    }
                )

        if 1.0 not in scores:
            continue
        for phi, shaped in sorted(scores.items()):
            report = quadrant_report(
                scores[1.0]["score"].to_numpy(),
                ta["score"].to_numpy(),
                meta,
                base.evaluation.quadrant_k,
                shaped_scores=shaped["score"].to_numpy(),
            )
            frame = report.frame.copy()
            frame["run_id"] = shaped["run_id"].iloc[0]
            name = f"quadrants_phi{phi:g}_seed{seed}.csv"
            write_csv(frame, os.path.join(out_dir, name))
            artifacts[name] = name
            for quadrant, median in report.medians.items():
                quadrant_rows.append(
                    {
                        "seed": seed,
                        "phi": phi,
                        "quadrant": quadrant,
                        "n": int((frame["quadrant"] == quadrant).sum()),
                        "median_shaped_score": median,
                        "run_id": shaped["run_id"].iloc[0],
                    }
                )
    if kappa_rows:
        write_csv(pd.DataFrame(kappa_rows), os.path.join(out_dir, "kappa.csv"))
        artifacts["kappa"] = "kappa.csv"
    if quadrant_rows:
        write_csv(pd.DataFrame(quadrant_rows), os.path.join(out_dir, "quadrant_summary.csv"))
        artifacts["quadrant_summary"] = "quadrant_summary.csv"
    return artifacts


def strategy_stats(
    base: ExperimentConfig, plan: StudyPlan, study_dir: str, ok: set, long: pd.DataFrame
) -> pd.DataFrame:
    """
    Teste t pareado unilateral (entre sementes) de cada estratégia em cada k
    contra a linha de base não seletiva e contra o seu próprio ponto k = 0.
    """
    baseline = {}
    for cell in plan.cells:
        if cell.baseline and cell.name in ok:
            manifest = read_manifest(os.path.join(study_dir, CELLS_DIR, cell.name, "baseline"))
            baseline[cell.seed] = (manifest.summary["holdout_metric"], manifest.run_id)
    rows = []
    for strategy, part in long.groupby("strategy"):
        at_zero = part[part["k"] == 0.0].set_index("seed")["mean"]
        for k, sub in part.groupby("k"):
            sub = sub.set_index("seed").sort_index()
            seeds = [s for s in sub.index if s in baseline]
            row = {"strategy": strategy, "k": k, "mean": float(sub["mean"].mean()), "n_seeds": len(sub)}
            if len(seeds) >= 2:
                base_values = [baseline[s][0] for s in seeds]
                row["baseline_mean"] = float(np.mean(base_values))
                row["p_vs_baseline"] = paired_ttest(base_values, sub.loc[seeds, "mean"].tolist())
            if k > 0.0 and len(at_zero) >= 2:
                common = [s for s in sub.index if s in at_zero.index]
                row["p_vs_k0"] = paired_ttest(at_zero.loc[common].tolist(), sub.loc[common, "mean"].tolist())
            row["run_id"] = ";".join(sorted(set(sub["run_id"]) | {baseline[s][1] for s in seeds}))
            rows.append(row)
    return pd.DataFrame(rows)


def aggregate(
    base: ExperimentConfig, plan: StudyPlan, study_dir: str, records: List[Dict[str, Any]]
) -> Dict[str, str]:
    """Consolida as células concluídas em CSVs na raiz do estudo."""
    ok = {r["name"] for r in records if r["status"] == "ok"}
    artifacts: Dict[str, str] = {}
    long = collect_curves(plan, study_dir, ok)
    if long.empty:
        logger.warning("[ALERTA] Nenhuma célula concluída; estudo sem agregados")
        return artifacts
    write_csv(long, os.path.join(study_dir, "grid_long.csv"))
    artifacts["grid_long"] = "grid_long.csv"

    axis = GRID_AXIS[plan.kind]
    write_csv(grid_table(long, axis), os.path.join(study_dir, "grid.csv"))
    artifacts["grid"] = "grid.csv"
    wide = long.dropna(subset=[axis]).pivot_table(index=axis, columns="k", values="mean", aggfunc="mean")
    wide.columns = [f"k={k:g}" for k in wide.columns]
    write_csv(wide.reset_index(), os.path.join(study_dir, "grid_wide.csv"))
    artifacts["grid_wide"] = "grid_wide.csv"

    if plan.kind == "shaped":
        artifacts.update(shaped_tables(base, plan, study_dir, ok, study_dir))
    elif plan.kind == "strategies":
        write_csv(strategy_stats(base, plan, study_dir, ok, long), os.path.join(study_dir, "stats.csv"))
        artifacts["stats"] = "stats.csv"
    return artifacts


def study_command(cfg: ExperimentConfig, run_dir: str) -> RunManifest:
    """
    `study`: executa o plano, consolida os resultados e grava o manifesto.

    Células com falha não interrompem as demais; ao final o comando falha
    com `CellFailureError` (código de saída da pior falha), depois de
    agregar o que foi concluído.
    """

    def body(manifest: RunManifest) -> RunManifest:
        plan = build_plan(cfg)
        write_json(os.path.join(run_dir, "plan.json"), plan.model_dump(mode="json"))
        logger.info(
            "[ESTUDO] kind=%s células=%d estágios=%d jobs=%d",
            plan.kind,
            len(plan.cells),
            len(plan.stages()),
            cfg.output.jobs,
        )
        records = run_plan(cfg, plan, run_dir, cfg.output.jobs)
        write_csv(pd.DataFrame(records), os.path.join(run_dir, "cells.csv"))
        manifest.artifacts.update({"plan": "plan.json", "cells": "cells.csv"})
        manifest.artifacts.update(aggregate(cfg, plan, run_dir, records))
        manifest.summary["cells"] = {r["name"]: r["status"] for r in records}
        failures = {r["name"]: (r["exit_code"], r["failure"]) for r in records if r["status"] != "ok"}
        if failures:
            raise CellFailureError(failures)
        logger.info("[SUCESSO] Estudo %s concluído: %d células", plan.kind, len(records))
        return manifest

    return execute("study", cfg, run_dir, body)
