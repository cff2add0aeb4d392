"""Experiment configuration: JSON round-trip, validation and presets."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

from .activations import MAIN, MODIFIED, SReluConfig
from .groups import ACTION_KINDS, MAX_SYMMETRY_STATES, SYMMETRY
from .model import SPARSITY_MODES

THEORY_STAGED = "theory_staged"
EXPERIMENT_JOINT = "experiment_joint"
MODES = (THEORY_STAGED, EXPERIMENT_JOINT)
ALGORITHMS = ("curriculum", "self_training")


class ConfigError(ValueError):
    pass


@dataclass
class TaskConfig:
    action_kind: str = "cyclic"
    n_y: int = 6
    n_x: int = 24


@dataclass
class SReluSection:
    q: int = 4
    rho: float | None = None        # None: 1 / log(d)^2
    variant: str = MAIN
    varpi: float | None = None
    cap: float | None = None


@dataclass
class ModelConfig:
    m: int = 16
    heads: int = 1
    sparsity: str = "blocks43_44"
    srelu: SReluSection = field(default_factory=SReluSection)
    sigma0: float | None = None     # None: d^(-1/2)
    C_B: float = 20.0


@dataclass
class TrainConfig:
    mode: str = EXPERIMENT_JOINT
    algorithm: str = "curriculum"
    optimizer: str = "adam"
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 256
    train_L: int = 5
    epochs: int = 300
    nominal_corpus: int = 10000
    steps_w: int = 2000
    steps_q: int = 2000
    K: int = 1
    threshold: float = 1e-2
    E1: float | None = None
    max_steps: int = 20000
    ema_decay: float = 0.99
    self_train_lr: float | None = None   # None: same as lr
    self_train_batch: int | None = None  # None: same as batch_size

    def joint_steps(self) -> int:
        """Fresh-batch steps equivalent to ``epochs`` passes over ``nominal_corpus`` sentences."""
        return math.ceil(self.epochs * self.nominal_corpus / self.batch_size)

    def stage_lengths(self) -> list[int]:
        """Training length ``L_k`` of self-training stages ``k = 2..K``.

        Staged mode doubles from the two-step base (``2^k``); joint mode doubles
        from ``train_L``.
        """
        if self.mode == THEORY_STAGED:
            return [2 ** k for k in range(2, self.K + 1)]
        return [self.train_L * 2 ** (k - 1) for k in range(2, self.K + 1)]


@dataclass
class EvalConfig:
    lengths: list[int] = field(default_factory=lambda: [5, 10, 20])
    n_eval: int = 500
    teacher_forced: bool = True
    attn_L: int = 5
    attn_samples: int = 100


@dataclass
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    run_id: str = "run"
    out_dir: str = "runs"
    record_wallclock: bool = False
    notes: str = ""

    # ---------------------------------------------------------------- io
    def to_dict(self) -> dict:
        out = asdict(self)
        out["train"]["betas"] = list(self.train.betas)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _build(cls, obj, "")
        cfg.train.betas = tuple(cfg.train.betas)
        cfg.eval.lengths = list(cfg.eval.lengths)
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(obj)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    # ---------------------------------------------------------------- derived
    def vocab(self):
        from .corpus import Vocabulary
        t = self.task
        return Vocabulary(t.n_x, t.action_kind, t.n_y)

    def srelu_config(self, d: int) -> SReluConfig:
        s = self.model.srelu
        rho = s.rho if s.rho is not None else 1.0 / math.log(d) ** 2
        return SReluConfig(q=s.q, rho=rho, variant=s.variant, varpi=s.varpi, cap=s.cap)

    def sigma0(self, d: int) -> float:
        return self.model.sigma0 if self.model.sigma0 is not None else d ** -0.5

    def threshold(self, d: int) -> float:
        t = self.train
        return d ** -t.E1 if t.E1 is not None else t.threshold

    def all_lengths(self) -> list[int]:
        t = self.train
        out = [t.train_L, self.eval.attn_L] + list(self.eval.lengths)
        if t.algorithm == "self_training":
            out += t.stage_lengths()
            if t.mode == THEORY_STAGED:
                out.append(2)
        elif t.mode == THEORY_STAGED:
            out.append(2)
        return out

    # ---------------------------------------------------------------- checks
    def problems(self) -> list[str]:
        errs = []
        t, m, tr, ev = self.task, self.model, self.train, self.eval
        if t.action_kind not in ACTION_KINDS:
            errs.append(f"task.action_kind must be one of {ACTION_KINDS}")
        if t.n_y < 2:
            errs.append("task.n_y must be >= 2")
        if t.action_kind == SYMMETRY and t.n_y > MAX_SYMMETRY_STATES:
            errs.append(f"symmetry action needs task.n_y <= {MAX_SYMMETRY_STATES}")
        if t.n_x < 2:
            errs.append("task.n_x must be >= 2")
        if m.m < 1 or m.heads < 1:
            errs.append("model.m and model.heads must be >= 1")
        if m.sparsity not in SPARSITY_MODES:
            errs.append(f"model.sparsity must be one of {SPARSITY_MODES}")
        s = m.srelu
        if s.q < 4 or s.q % 2:
            errs.append("model.srelu.q must be an even integer >= 4")
        if s.rho is not None and not s.rho > 0:
            errs.append("model.srelu.rho must be positive")
        if s.variant not in (MAIN, MODIFIED):
            errs.append(f"model.srelu.variant must be {MAIN!r} or {MODIFIED!r}")
        if s.variant == MODIFIED and (s.varpi is None or s.cap is None):
            errs.append("modified sReLU needs model.srelu.varpi and model.srelu.cap")
        if m.sigma0 is not None and not m.sigma0 > 0:
            errs.append("model.sigma0 must be positive")
        if not m.C_B > 0:
            errs.append("model.C_B must be positive")
        if tr.mode not in MODES:
            errs.append(f"train.mode must be one of {MODES}")
        if tr.algorithm not in ALGORITHMS:
            errs.append(f"train.algorithm must be one of {ALGORITHMS}")
        if tr.optimizer not in ("adam", "gd"):
            errs.append("train.optimizer must be 'adam' or 'gd'")
        for name in ("lr", "adam_eps", "threshold"):
            if not getattr(tr, name) > 0:
                errs.append(f"train.{name} must be positive")
        for name in ("batch_size", "epochs", "nominal_corpus", "K", "max_steps", "train_L"):
            if getattr(tr, name) < 1:
                errs.append(f"train.{name} must be >= 1")
        for name in ("steps_w", "steps_q"):
            if getattr(tr, name) < 0:
                errs.append(f"train.{name} must be >= 0")
        if len(tr.betas) != 2 or not all(0 <= b < 1 for b in tr.betas):
            errs.append("train.betas must be two numbers in [0, 1)")
        if not 0 < tr.ema_decay < 1:
            errs.append("train.ema_decay must lie in (0, 1)")
        if tr.self_train_lr is not None and not tr.self_train_lr > 0:
            errs.append("train.self_train_lr must be positive")
        if tr.self_train_batch is not None and tr.self_train_batch < 1:
            errs.append("train.self_train_batch must be >= 1")
        if ev.n_eval < 1 or ev.attn_samples < 1:
            errs.append("eval.n_eval and eval.attn_samples must be >= 1")
        if not ev.lengths:
            errs.append("eval.lengths must be non-empty")
        for L in self.all_lengths():
            if L < 1:
                errs.append(f"length {L} must be >= 1")
            elif L + 1 > t.n_x:
                errs.append(f"length {L} needs L + 1 <= task.n_x = {t.n_x}")
        return errs

    def validate(self) -> "ExperimentConfig":
        try:
            errs = self.problems()
        except TypeError as exc:
            raise ConfigError(f"wrongly typed field: {exc}") from exc
        if errs:
            raise ConfigError("; ".join(errs))
        return self


def _build(cls, obj: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(obj) - set(known))
    if unknown:
        raise ConfigError(f"unknown field(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in obj:
            continue
        val = obj[name]
        sub = _SECTIONS.get((cls, name))
        if sub is not None:
            if not isinstance(val, dict):
                raise ConfigError(f"{where}{name} must be an object")
            val = _build(sub, val, f"{where}{name}.")
        kwargs[name] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


_SECTIONS = {
    (ExperimentConfig, "task"): TaskConfig,
    (ExperimentConfig, "model"): ModelConfig,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "eval"): EvalConfig,
    (ModelConfig, "srelu"): SReluSection,
}


# presets ----------------------------------------------------------------------
#
# n_x, m, the batch size, the nominal corpus and rho are not given by the
# experiments being mirrored; the symmetry preset also departs on the learning
# rate and the stage cap.  See the README for how they were chosen.

def _c6() -> ExperimentConfig:
    return ExperimentConfig(
        task=TaskConfig("cyclic", 6, 24),
        model=ModelConfig(m=32, heads=2, sparsity="blocks43_44",
                          srelu=SReluSection(q=4, rho=1.0), C_B=20.0),
        train=TrainConfig(mode=EXPERIMENT_JOINT, optimizer="adam", lr=1e-4, batch_size=8,
                          train_L=5, epochs=300, nominal_corpus=1400),
        eval=EvalConfig(lengths=[5, 10, 20], n_eval=500, attn_L=5, attn_samples=100),
        seed=0, run_id="c6-lengthgen",
    )


def _s5() -> ExperimentConfig:
    return ExperimentConfig(
        task=TaskConfig("symmetry", 5, 41),
        model=ModelConfig(m=16, heads=2, sparsity="blocks43_44",
                          srelu=SReluSection(q=4, rho=1.0), C_B=20.0),
        train=TrainConfig(mode=EXPERIMENT_JOINT, algorithm="self_training", optimizer="adam",
                          lr=1e-3, batch_size=8, train_L=5, epochs=300, nominal_corpus=400,
                          K=3, threshold=1e-2, max_steps=2000),
        eval=EvalConfig(lengths=[5, 10, 20, 40], n_eval=500, attn_L=5, attn_samples=100),
        seed=0, run_id="s5-selfimprove",
    )


PRESETS = {"c6-lengthgen": _c6, "s5-selfimprove": _s5}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
