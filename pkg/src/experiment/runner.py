from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from datetime import datetime, timezone
from typing import Callable, Optional

import pandas as pd

from src.errors import MissingArtifactError
from src.iqa.controller import ControllerModel, load_controller, score
from src.iqa.evaluation import (
    cohens_kappa,
    contingency,
    detection_auc,
    prevalence_k,
    rejection_sweep,
    task_impact_flags,
)
from src.iqa.models import RunManifest
from src.iqa.tasks import PredictorModel, performance, predict
from src.iqa.trainer import history_frame, resolve_task, train_iqa, train_non_selective
from src.nn import load_checkpoint
from src.synth import SplitDataset, generate, load_dataset, save_dataset
from .config import ExperimentConfig

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TIMING_NAME = "timing.json"
CHECKPOINT_DIR = "checkpoints"


def run_id_for(cfg: ExperimentConfig, command: str) -> str:
    """Id determinístico: hash da configuração resolvida, do comando e da semente."""
    payload = json.dumps(
        {"command": command, "seed": cfg.seed, "config": cfg.model_dump(mode="json")},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def new_run_dir(root: str, command: str, seed: int) -> str:
    """Diretório `<root>/<comando>-<timestamp>-seed<N>`, único mesmo no mesmo segundo."""
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = os.path.join(root, f"{command}-{stamp}-seed{seed}")
    path, n = base, 1
    while os.path.exists(path):
        n += 1
        path = f"{base}-{n}"
    os.makedirs(path)
    return path


def write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, allow_nan=True)
        f.write("\n")


def write_manifest(run_dir: str, manifest: RunManifest) -> str:
    path = os.path.join(run_dir, MANIFEST_NAME)
    write_json(path, manifest.model_dump(mode="json"))
    return path


def read_manifest(run_dir: str) -> RunManifest:
    path = os.path.join(run_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise MissingArtifactError(path, "manifesto da execução")
    with open(path, encoding="utf-8") as f:
        return RunManifest.model_validate(json.load(f))


def write_csv(df: pd.DataFrame, path: str) -> None:
    df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def dataset_for(cfg: ExperimentConfig) -> SplitDataset:
    """Lê o conjunto de `output.dataset_dir` quando existir; senão gera em memória."""
    directory = cfg.output.dataset_dir
    if directory and os.path.exists(os.path.join(directory, "manifest.json")):
        logger.info("[INFO] Usando conjunto gravado em %s", directory)
        return load_dataset(directory)
    return generate(cfg.data)


def execute(
    command: str,
    cfg: ExperimentConfig,
    run_dir: str,
    body: Callable[[RunManifest], RunManifest],
) -> RunManifest:
    """
    Executa `body` com manifesto garantido.

    O manifesto é gravado sempre, inclusive na falha (com a causa); o relógio
    de parede vai para `timing.json`, fora do manifesto.

    Raises:
        Exception: Qualquer erro de `body`, repassado depois de gravado o
            manifesto da falha.
    """
    manifest = RunManifest(
        run_id=run_id_for(cfg, command),
        command=command,
        mode=cfg.trainer.mode,
        seed=cfg.seed,
        config=cfg.model_dump(mode="json"),
    )
    started = time.time()
    try:
        manifest = body(manifest)
        manifest.status = "ok"
    except Exception as exc:
        manifest.status = "failed"
        manifest.failure = f"{type(exc).__name__}: {exc}"
        if getattr(exc, "state", None):
            manifest.summary["diagnostics"] = exc.state
        logger.error("[ERRO] %s falhou: %s", command, exc)
        raise
    finally:
        manifest.run_id = manifest.run_id or run_id_for(cfg, command)
        write_manifest(run_dir, manifest)
        write_json(
            os.path.join(run_dir, TIMING_NAME),
            {
                "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
                "wall_clock_seconds": round(time.time() - started, 3),
            },
        )
    return manifest


def generate_command(cfg: ExperimentConfig, run_dir: str) -> RunManifest:
    """`gen`: gera o benchmark e grava o contêiner "data-v1" em `<run_dir>/dataset`."""

    def body(manifest: RunManifest) -> RunManifest:
        data = generate(cfg.data)
        digest = save_dataset(data, os.path.join(run_dir, "dataset"))
        manifest.artifacts["dataset"] = "dataset"
        manifest.summary.update(
            {"checksum": digest, "splits": {k: len(v) for k, v in data.splits().items()}}
        )
        return manifest

    return execute("gen", cfg, run_dir, body)


def _holdout_scores(ctrl: ControllerModel, data: SplitDataset, run_id: str) -> pd.DataFrame:
    holdout = data.holdout
    return pd.DataFrame(
        {"sample_id": holdout.ids, "score": score(ctrl, holdout.images), "run_id": run_id}
    )


def _detection_summary(ctrl: ControllerModel, data: SplitDataset) -> dict:
    """AUC das notas baixas contra as flags do gerador (treino e holdout)."""
    out = {}
    for name, part in (("train", data.train), ("holdout", data.holdout)):
        scores = score(ctrl, part.images)
        art = part.artefact_flags
        clean = ~art
        hard = part.hard_flags
        impact = task_impact_flags(part.meta)
        if 0 < art.sum() < art.size:
            out[f"{name}_auc_artefact"] = detection_auc(scores, art)
        if clean.any() and 0 < hard[clean].sum() < clean.sum():
            out[f"{name}_auc_hard_clean"] = detection_auc(scores[clean], hard[clean])
        if 0 < impact.sum() < impact.size:
            out[f"{name}_auc_task_impact"] = detection_auc(scores, impact)
    return out


def train_command(
    cfg: ExperimentConfig,
    run_dir: str,
    data: Optional[SplitDataset] = None,
    base_dir: str = "",
) -> RunManifest:
    """
    `train`: treina no modo configurado e grava checkpoints, histórico e notas do holdout.

    Args:
        base_dir (str): Base para um `trainer.h_a_checkpoint` relativo (o
            estudo grava caminhos relativos ao seu diretório).
    """

    def body(manifest: RunManifest) -> RunManifest:
        dataset = data if data is not None else dataset_for(cfg)
        tcfg = cfg.trainer_config()
        h_a = None
        if tcfg.mode == "shaped" and tcfg.shaping_source == "controller":
            if not tcfg.h_a_checkpoint:
                raise MissingArtifactError("<trainer.h_a_checkpoint>", "modo shaped sem h_a")
            h_a = load_controller(os.path.join(base_dir, tcfg.h_a_checkpoint))
        ckpt_dir = os.path.join(run_dir, CHECKPOINT_DIR)
        _, controller, trained = train_iqa(
            tcfg, dataset, frozen_h_a=h_a, checkpoint_dir=ckpt_dir
        )

        trained.run_id = manifest.run_id
        trained.command = "train"
        trained.config = manifest.config
        trained.artifacts = {
            k: os.path.join(CHECKPOINT_DIR, v) for k, v in trained.artifacts.items()
        }
        write_csv(history_frame(trained), os.path.join(run_dir, "history.csv"))
        write_csv(
            _holdout_scores(controller, dataset, trained.run_id),
            os.path.join(run_dir, "holdout_scores.csv"),
        )
        trained.artifacts.update(
            {"history": "history.csv", "holdout_scores": "holdout_scores.csv"}
        )
        trained.summary.update(_detection_summary(controller, dataset))
        return trained

    return execute("train", cfg, run_dir, body)


def baseline_command(
    cfg: ExperimentConfig, run_dir: str, data: Optional[SplitDataset] = None
) -> RunManifest:
    """Linha de base não seletiva: desempenho no holdout inteiro."""

    def body(manifest: RunManifest) -> RunManifest:
        dataset = data if data is not None else dataset_for(cfg)
        tcfg = cfg.trainer_config()
        predictor, trained = train_non_selective(tcfg, dataset)
        per_sample = performance(predictor.task, predict(predictor.task, predictor, dataset.holdout).metric_values)
        trained.run_id = manifest.run_id
        trained.command = "baseline"
        trained.config = manifest.config
        trained.summary["holdout_metric"] = float(per_sample.mean())
        write_csv(history_frame(trained), os.path.join(run_dir, "history.csv"))
        trained.artifacts["history"] = "history.csv"
        return trained

    return execute("baseline", cfg, run_dir, body)


def load_trained(train_dir: str):
    """Manifesto, configuração, controlador e preditor de uma execução `train`."""
    manifest = read_manifest(train_dir)
    if manifest.status != "ok":
        raise MissingArtifactError(train_dir, f"execução de treino com status {manifest.status}")
    cfg = ExperimentConfig.model_validate(manifest.config)
    ckpt = os.path.join(train_dir, CHECKPOINT_DIR)
    controller = load_controller(os.path.join(ckpt, "controller"), cfg.policy)
    net, _ = load_checkpoint(os.path.join(ckpt, "predictor"))
    predictor = PredictorModel(task=resolve_task(cfg.trainer_config()), net=net)
    return manifest, cfg, controller, predictor


def evaluate_command(
    cfg: ExperimentConfig,
    run_dir: str,
    train_dir: str,
    data: Optional[SplitDataset] = None,
) -> RunManifest:
    """
    `eval`: curva de rejeição no holdout e tabelas de contingência contra as
    flags do gerador, para uma execução `train`.

    O conjunto é regenerado a partir da configuração gravada no treino, o que
    garante o mesmo holdout.
    """

    def body(manifest: RunManifest) -> RunManifest:
        train_manifest, train_cfg, controller, predictor = load_trained(train_dir)
        # a mesma configuração de avaliação sobre treinos distintos gera ids distintos
        manifest.run_id = hashlib.sha256(
            f"{manifest.run_id}:{train_manifest.run_id}".encode("utf-8")
        ).hexdigest()[:12]
        dataset = data if data is not None else dataset_for(train_cfg)
        holdout = dataset.holdout
        ks = cfg.evaluation.ks
        curve = rejection_sweep([controller], [predictor], holdout, ks, run_ids=[train_manifest.run_id])
        frame = curve.frame[["k", "mean", "std", "n_retained"]].copy()
        frame["run_id"] = train_manifest.run_id
        write_csv(frame, os.path.join(run_dir, "curve.csv"))

        scores = score(controller, holdout.images)
        rows = []
        references = {
            "artefact_flag": holdout.artefact_flags,
            "task_impact": task_impact_flags(holdout.meta),
        }
        for name, flags in references.items():
            k = prevalence_k(flags)
            table = contingency(scores, flags, k, ids=holdout.ids)
            rows.append(
                {
                    **table.to_dict(),
                    "kappa": cohens_kappa(table),
                    "reference": name,
                    "k": k,
                    "convention": table.convention,
                    "run_id": train_manifest.run_id,
                }
            )
        write_csv(pd.DataFrame(rows), os.path.join(run_dir, "table.csv"))
        write_csv(
            _holdout_scores(controller, dataset, train_manifest.run_id),
            os.path.join(run_dir, "holdout_scores.csv"),
        )
        manifest.mode = train_manifest.mode
        manifest.phi = train_manifest.phi
        manifest.artifacts.update(
            {"curve": "curve.csv", "table": "table.csv", "holdout_scores": "holdout_scores.csv"}
        )
        manifest.summary.update(
            {
                "train_run_id": train_manifest.run_id,
                "curve": {f"{k:g}": float(v) for k, v in zip(frame["k"], frame["mean"])},
                "kappa": {r["reference"]: r["kappa"] for r in rows},
            }
        )
        return manifest

    return execute("eval", cfg, run_dir, body)


def latest_run(root: str, command: str) -> str:
    """Execução mais recente de um comando sob `root` (ordem lexicográfica do timestamp)."""
    if not os.path.isdir(root):
        raise MissingArtifactError(root, "diretório de execuções")
    candidates = sorted(
        d for d in os.listdir(root) if d.startswith(f"{command}-") and os.path.isdir(os.path.join(root, d))
    )
    if not candidates:
        raise MissingArtifactError(os.path.join(root, f"{command}-*"), "nenhuma execução encontrada")
    return os.path.join(root, candidates[-1])
