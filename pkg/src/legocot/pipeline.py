"""Config-driven training, evaluation and attention exports with run directories."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import THEORY_STAGED, ExperimentConfig
from .model import ModelParams, init_params, save_checkpoint
from .training import (
    LossSpec, Stage, TrainRun, curriculum_schedule, joint_schedule, run_schedule,
    self_training_schedule, write_metrics,
)

# stream labels for SeedSequence([seed, label, ...])
INIT_STREAM, TRAIN_STREAM, EVAL_STREAM, ATTN_STREAM, PERM_STREAM = 100, 200, 300, 400, 500

DECLARED_CHOICES = [
    "task.n_x", "model.m", "model.heads", "model.srelu.rho", "train.batch_size",
    "train.nominal_corpus", "train.threshold", "train.max_steps",
]


def stream(seed: int, *labels: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, labels)]))


def init_model(cfg: ExperimentConfig) -> ModelParams:
    vocab = cfg.vocab()
    d = vocab.d
    return init_params(
        vocab, cfg.model.m, stream(cfg.seed, INIT_STREAM), heads=cfg.model.heads,
        sparsity=cfg.model.sparsity, srelu_cfg=cfg.srelu_config(d), sigma0=cfg.sigma0(d),
        clip_const=cfg.model.C_B,
    )


def build_schedule(cfg: ExperimentConfig, d: int) -> tuple[list[Stage], dict[str, str]]:
    """Stages for ``cfg`` and the checkpoint name of every stage that gets one."""
    t = cfg.train
    theta = cfg.threshold(d)
    st_lr = t.self_train_lr or t.lr
    st_batch = t.self_train_batch or t.batch_size
    common = dict(optimizer=t.optimizer, betas=tuple(t.betas), eps=t.adam_eps, ema_decay=t.ema_decay)

    def tune(stages):
        return [_with(s, **common) for s in stages]

    if t.mode == THEORY_STAGED:
        if t.algorithm == "curriculum":
            stages = curriculum_schedule(lr=t.lr, batch_size=t.batch_size, steps_w=t.steps_w,
                                         steps_q=t.steps_q, optimizer=t.optimizer)
            return tune(stages), {"1": "stage1", "2": "stage2"}
        stages = self_training_schedule(t.K, lr=t.lr, batch_size=t.batch_size, steps_w=t.steps_w,
                                        steps_q=t.steps_q, threshold=theta, max_steps=t.max_steps,
                                        optimizer=t.optimizer)
        stages = tune(stages)
        stages = stages[:2] + [_with(s, lr=st_lr, batch_size=st_batch) for s in stages[2:]]
        names = {"1.2": "T1"} | {str(k): f"T{k}" for k in range(2, t.K + 1)}
        return stages, names

    stages = tune(joint_schedule(t.train_L, lr=t.lr, batch_size=t.batch_size,
                                 steps=t.joint_steps(), optimizer=t.optimizer))
    if t.algorithm == "curriculum":
        return stages, {"joint": "joint"}
    stages[0] = _with(stages[0], name="1")
    for k, Lk in zip(range(2, t.K + 1), t.stage_lengths()):
        stages.append(Stage(str(k), ("Q",), LossSpec(Lk, (2,), (5,)), st_lr, st_batch,
                            threshold=theta, max_steps=t.max_steps, bootstrap_from_previous=True,
                            **common))
    return stages, {str(k): f"T{k}" for k in range(1, t.K + 1)}


def _with(stage: Stage, **kw) -> Stage:
    from dataclasses import replace
    return replace(stage, **kw)


def stage_train_length(stage: Stage) -> int:
    return stage.loss.L


# run directories ----------------------------------------------------------------

def run_dir_for(cfg: ExperimentConfig, out_dir: str | None = None) -> Path:
    base = out_dir or os.environ.get("OUT_DIR") or cfg.out_dir
    return Path(base) / cfg.run_id


def git_blob_hash(data: bytes) -> str:
    """Same digest as ``git hash-object``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def derived_constants(cfg: ExperimentConfig) -> dict:
    vocab = cfg.vocab()
    d = vocab.d
    sigma0 = cfg.sigma0(d)
    sr = cfg.srelu_config(d)
    return {
        "d": d, "d_c": 5 * d, "n_actions": vocab.n_g, "sigma0": sigma0, "rho": sr.rho,
        "bias": sigma0 * np.log(d), "B": cfg.model.C_B * np.log(d),
        "joint_steps": cfg.train.joint_steps(), "threshold": cfg.threshold(d),
    }


def write_manifest(run_dir: Path, cfg: ExperimentConfig, extra: dict | None = None) -> dict:
    files = {}
    for p in sorted(run_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(run_dir).as_posix()] = git_blob_hash(p.read_bytes())
    manifest = {
        "run_id": cfg.run_id,
        "files": files,
        "derived": {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                    for k, v in derived_constants(cfg).items()},
        "declared_choices": DECLARED_CHOICES,
        "threads": os.environ.get("THREADS", "1"),
    }
    if extra:
        manifest.update(extra)
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def verify_manifest(run_dir: Path) -> list[str]:
    """Files whose content no longer matches the manifest (or are missing)."""
    manifest = json.loads((Path(run_dir) / "manifest.json").read_text())
    bad = []
    for rel, digest in manifest["files"].items():
        p = Path(run_dir) / rel
        if not p.is_file() or git_blob_hash(p.read_bytes()) != digest:
            bad.append(rel)
    return bad


def train(cfg: ExperimentConfig, out_dir: str | None = None, log=None, keep_snapshots: bool = False
          ) -> tuple[TrainRun, Path]:
    """Run the configured pipeline and write a complete run directory."""
    cfg.validate()
    run_dir = run_dir_for(cfg, out_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.json")
    params = init_model(cfg)
    stages, ckpt_names = build_schedule(cfg, params.d)
    lengths = {s.name: stage_train_length(s) for s in stages}

    def on_end(res, p):
        name = ckpt_names.get(res.name)
        if name is not None:
            save_checkpoint(run_dir / "checkpoints" / f"{name}.ckpt", p)

    run = run_schedule(params, stages, stream(cfg.seed, TRAIN_STREAM), run_id=cfg.run_id,
                       keep_snapshots=keep_snapshots, record_wallclock=cfg.record_wallclock,
                       on_stage_end=on_end, log=log)
    write_metrics(run_dir / "metrics.csv", run.metrics)
    summary = []
    for res in run.stages:
        row = asdict(res)
        row["train_L"] = lengths[res.name]
        row["checkpoint"] = (f"checkpoints/{ckpt_names[res.name]}.ckpt"
                             if res.name in ckpt_names else None)
        summary.append(row)
    (run_dir / "stages.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    write_manifest(run_dir, cfg)
    return run, run_dir


# evaluation -----------------------------------------------------------------------

def evaluate(params: ModelParams, lengths, n_eval: int, seed: int, teacher_forced: bool = True
             ) -> list[ev.AccReport]:
    """One report per distinct length, ascending; each length has its own stream."""
    out = []
    for L in sorted(set(int(x) for x in lengths)):
        out.append(ev.acc_rollout(params, L, n_eval, stream(seed, EVAL_STREAM, L), seed=seed,
                                  teacher_forced=teacher_forced))
    return out


def attention_exports(params: ModelParams, L: int, n_samples: int, seed: int, out_dir) -> dict:
    """Heatmap, per-step diagnostics and the permutation report under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    diag = ev.attention_diagnostics(params, L, n_samples, stream(seed, ATTN_STREAM, L))
    ev.write_heatmap(out / f"heatmap_L{L}.csv", diag)
    ev.write_diagnostics(out / f"diagnostics_L{L}.csv", diag)
    perm = ev.permutation_ablation(params, L, n_samples, stream(seed, PERM_STREAM, L))
    ev.write_permutation_report(out / f"permutation_L{L}.csv", perm)
    return {"diagnostics": diag, "permutation": perm}
