"""Per-bag training loop, learning-rate grid search, and run storage.

Training follows a fixed protocol: Adam with decoupled weight decay
(the decay shrinks parameters before the Adam delta is applied), a
per-epoch cosine schedule lr_e = lr0/2 * (1 + cos(pi * e / epochs)),
batches of one bag, and a seed-keyed shuffle stream per epoch.  Binary
heads use cross-entropy on the bag score; multi-class heads use NLL on
renormalized class scores.

A run aborts with TrainingDiverged as soon as the loss, a parameter, or
an optimizer moment goes non-finite, or a validation score is NaN; the
grid search tolerates such cells and picks the best surviving learning
rate (ties to the smaller lr).

Saved runs round-trip exactly: floats are serialized with repr, which
float() parses back to the same double.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng
from .bags import Bag, Dataset
from .heads import ModelParams, ModelSpec, bag_output, init_params, positive_score
from .losses import make_loss_tape
from .autodiff import param_gradients
from .metrics import binary_auc, macro_auc

SELECTION_MODES = ("best_val_auc", "last_epoch")
WORKERS_ENV = "MILBENCH_WORKERS"


class TrainingDiverged(RuntimeError):
    """Loss, parameters, optimizer state, or val score went non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    selection: str = "best_val_auc"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not (math.isfinite(self.lr) and self.lr > 0.0):
            raise ValueError(f"lr must be positive and finite, got {self.lr}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.selection not in SELECTION_MODES:
            raise ValueError(f"selection must be one of {SELECTION_MODES}, got {self.selection!r}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_auc: float


@dataclass
class RunResult:
    method: str
    tag: str
    seed: int
    lr: float
    selection: str
    selected_epoch: int
    history: list[EpochStats]
    test_auc: float
    test_per_class: list[float] | None = None
    wall_time_sec: float = 0.0

    @property
    def selected_val_auc(self) -> float:
        return self.history[self.selected_epoch].val_auc


def cosine_lr(lr0: float, epoch: int, total_epochs: int) -> float:
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * epoch / total_epochs))


class Adam:
    """Adam with decoupled weight decay over named parameter arrays."""

    def __init__(self, params: ModelParams, config: TrainConfig):
        self.config = config
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
        cfg = self.config
        self.t += 1
        bias1 = 1.0 - cfg.beta1**self.t
        bias2 = 1.0 - cfg.beta2**self.t
        for name, arr in params.arrays.items():
            g = grads[name]
            if cfg.weight_decay:
                arr -= lr * cfg.weight_decay * arr
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            arr -= lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.m.values()) and all(
            np.all(np.isfinite(v)) for v in self.v.values()
        )


def _check_dataset(spec: ModelSpec, dataset: Dataset) -> None:
    if spec.feature_dim != dataset.feature_dim:
        raise ValueError(
            f"model expects {spec.feature_dim}-dim features, dataset has {dataset.feature_dim}"
        )
    expected = 1 if dataset.num_classes == 2 else dataset.num_classes
    if spec.num_classes != expected:
        raise ValueError(
            f"dataset with {dataset.num_classes} classes needs a head with "
            f"num_classes={expected}, got {spec.num_classes}"
        )
    for split in ("train", "val"):
        if not dataset.split(split):
            raise ValueError(f"dataset has no {split!r} bags")
    for split in ("val", "test"):
        labels = {b.label for b in dataset.split(split)}
        if dataset.split(split) and len(labels) < 2:
            raise ValueError(f"{split!r} split needs at least two classes for AUC")


def spec_for_dataset(kind: str, dataset: Dataset, **kwargs) -> ModelSpec:
    """Build the head spec matching a dataset (2 classes -> binary head)."""
    classes = 1 if dataset.num_classes == 2 else dataset.num_classes
    return ModelSpec(kind=kind, feature_dim=dataset.feature_dim, num_classes=classes, **kwargs)


def evaluate(params: ModelParams, bags: list[Bag]) -> tuple[float, list[float] | None]:
    """(AUC, per-class AUCs) on a bag list; macro AUC for C > 1 heads."""
    if not bags:
        raise ValueError("cannot evaluate on an empty bag list")
    outputs = [bag_output(params, b.features) for b in bags]
    labels = np.array([b.label for b in bags])
    if params.spec.num_classes == 1:
        scores = np.array([positive_score(o) for o in outputs])
        if not np.all(np.isfinite(scores)):
            raise TrainingDiverged("non-finite bag scores during evaluation")
        return binary_auc(scores, labels), None
    scores = np.stack([o.bag_scores for o in outputs])
    if not np.all(np.isfinite(scores)):
        raise TrainingDiverged("non-finite bag scores during evaluation")
    mean, per_class = macro_auc(scores, labels, return_per_class=True)
    return mean, per_class


def train_one(
    spec: ModelSpec,
    dataset: Dataset,
    config: TrainConfig,
) -> tuple[RunResult, ModelParams]:
    """Train one head on one dataset; returns the run and the selected
    parameters (best-val-AUC snapshot or last epoch, per config)."""
    _check_dataset(spec, dataset)
    start = time.perf_counter()
    params = init_params(spec, config.seed)
    optimizer = Adam(params, config)
    train_bags = dataset.split("train")
    val_bags = dataset.split("val")
    history: list[EpochStats] = []
    best_auc = -math.inf
    best_epoch = 0
    best_params = params.copy()
    for epoch in range(config.epochs):
        lr = cosine_lr(config.lr, epoch, config.epochs)
        order = rng.stream(config.seed, rng.PURPOSE_SHUFFLE, epoch).permutation(len(train_bags))
        losses = []
        for bag_index in order:
            bag = train_bags[int(bag_index)]
            tape = make_loss_tape(params, bag.features, bag.label)
            loss = tape.output_value
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, bag {bag.slide_id!r}"
                )
            losses.append(loss)
            grads = param_gradients(tape)
            optimizer.step(params, grads, lr)
            if not all(np.all(np.isfinite(a)) for a in params.arrays.values()) or not optimizer.is_finite():
                raise TrainingDiverged(f"non-finite parameters after epoch {epoch} step")
        val_auc, _ = evaluate(params, val_bags)
        if math.isnan(val_auc):
            raise TrainingDiverged(f"NaN validation AUC at epoch {epoch}")
        history.append(EpochStats(epoch=epoch, lr=lr, train_loss=float(np.mean(losses)),
                                  val_auc=val_auc))
        if val_auc > best_auc:
            best_auc = val_auc
            best_epoch = epoch
            best_params = params.copy()
    if config.selection == "best_val_auc":
        selected_epoch, selected_params = best_epoch, best_params
    else:
        selected_epoch, selected_params = config.epochs - 1, params
    test_bags = dataset.split("test")
    if test_bags:
        test_auc, per_class = evaluate(selected_params, test_bags)
    else:
        test_auc, per_class = math.nan, None
    result = RunResult(
        method=spec.kind,
        tag=dataset.name,
        seed=config.seed,
        lr=config.lr,
        selection=config.selection,
        selected_epoch=selected_epoch,
        history=history,
        test_auc=test_auc,
        test_per_class=per_class,
        wall_time_sec=time.perf_counter() - start,
    )
    return result, selected_params


# ---------------------------------------------------------------------------
# Grid search.


@dataclass
class GridResult:
    """All grid cells for one (method, dataset) pair.

    ``runs`` maps (lr, seed) to a RunResult; ``failures`` maps failed
    cells to their diagnostic.  ``best_lr`` maximizes the mean selected
    validation AUC over surviving seeds, ties to the smaller lr.
    """

    method: str
    tag: str
    best_lr: float
    runs: dict[tuple[float, int], RunResult] = field(default_factory=dict)
    failures: dict[tuple[float, int], str] = field(default_factory=dict)

    @property
    def best_runs(self) -> list[RunResult]:
        return [r for (lr, _), r in sorted(self.runs.items()) if lr == self.best_lr]


def _grid_cell(args) -> tuple[float, int, RunResult | None, str | None]:
    spec, dataset, config = args
    try:
        result, _ = train_one(spec, dataset, config)
        return config.lr, config.seed, result, None
    except TrainingDiverged as exc:
        return config.lr, config.seed, None, str(exc)


def resolve_workers(requested: int | None) -> int:
    """Worker count: the MILBENCH_WORKERS env var wins over the argument."""
    env = os.environ.get(WORKERS_ENV)
    if env is not None:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        return max(1, value)
    return max(1, requested or 1)


def grid_search(
    spec: ModelSpec,
    dataset: Dataset,
    lrs: list[float],
    seeds: list[int],
    config: TrainConfig,
    workers: int = 1,
) -> GridResult:
    """Train every (lr, seed) cell and pick the best lr.

    Cells run independently, so any worker count produces the same
    results; outputs are keyed and sorted, never ordered by completion.
    """
    if not lrs or not seeds:
        raise ValueError("grid search needs at least one lr and one seed")
    if len(set(lrs)) != len(lrs) or len(set(seeds)) != len(seeds):
        raise ValueError("duplicate lrs or seeds in the grid")
    jobs = [
        (spec, dataset, replace(config, lr=lr, seed=seed))
        for lr in sorted(lrs)
        for seed in sorted(seeds)
    ]
    if workers > 1:
        try:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_grid_cell, jobs))
        except (OSError, PermissionError):
            outcomes = [_grid_cell(job) for job in jobs]
    else:
        outcomes = [_grid_cell(job) for job in jobs]

    result = GridResult(method=spec.kind, tag=dataset.name, best_lr=math.nan)
    for lr, seed, run, error in outcomes:
        if run is not None:
            result.runs[(lr, seed)] = run
        else:
            result.failures[(lr, seed)] = error
    scores: dict[float, float] = {}
    for lr in sorted(lrs):
        cells = [r for (cell_lr, _), r in result.runs.items() if cell_lr == lr]
        if len(cells) == len(seeds):  # an lr with any failed seed is out
            scores[lr] = float(np.mean([r.selected_val_auc for r in cells]))
    if not scores:
        raise TrainingDiverged(
            f"every learning rate diverged for {spec.kind} on {dataset.name!r}"
        )
    best = max(sorted(scores), key=lambda lr: scores[lr])  # ties: smaller lr
    result.best_lr = best
    return result


# ---------------------------------------------------------------------------
# Run storage: result.txt (key: value) + history.csv per run directory.


def save_run(run: RunResult, run_dir: str | Path) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    per_class = (
        "none" if run.test_per_class is None else ";".join(repr(v) for v in run.test_per_class)
    )
    lines = [
        f"method: {run.method}",
        f"tag: {run.tag}",
        f"seed: {run.seed}",
        f"lr: {repr(run.lr)}",
        f"selection: {run.selection}",
        f"selected_epoch: {run.selected_epoch}",
        f"epochs: {len(run.history)}",
        f"test_auc: {repr(run.test_auc)}",
        f"test_per_class: {per_class}",
        f"wall_time_sec: {repr(run.wall_time_sec)}",
    ]
    (run_dir / "result.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    rows = ["epoch,lr,train_loss,val_auc"]
    for h in run.history:
        rows.append(f"{h.epoch},{repr(h.lr)},{repr(h.train_loss)},{repr(h.val_auc)}")
    (run_dir / "history.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return run_dir


def load_run(run_dir: str | Path) -> RunResult:
    run_dir = Path(run_dir)
    fields: dict[str, str] = {}
    for line in (run_dir / "result.txt").read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition(": ")
            fields[key] = value
    history = []
    hist_lines = (run_dir / "history.csv").read_text(encoding="utf-8").splitlines()
    for line in hist_lines[1:]:
        epoch_s, lr_s, loss_s, auc_s = line.split(",")
        history.append(EpochStats(int(epoch_s), float(lr_s), float(loss_s), float(auc_s)))
    if len(history) != int(fields["epochs"]):
        raise ValueError(
            f"{run_dir}: history has {len(history)} epochs, result.txt says {fields['epochs']}"
        )
    per_class_s = fields["test_per_class"]
    per_class = None if per_class_s == "none" else [float(v) for v in per_class_s.split(";")]
    return RunResult(
        method=fields["method"],
        tag=fields["tag"],
        seed=int(fields["seed"]),
        lr=float(fields["lr"]),
        selection=fields["selection"],
        selected_epoch=int(fields["selected_epoch"]),
        history=history,
        test_auc=float(fields["test_auc"]),
        test_per_class=per_class,
        wall_time_sec=float(fields["wall_time_sec"]),
    )


def save_failure(message: str, run_dir: str | Path) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "FAILED.txt").write_text(message + "\n", encoding="utf-8")
    return run_dir


# ---------------------------------------------------------------------------
# Parameter snapshots (one .npy per array + a small spec file).


def save_params(params: ModelParams, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = params.spec
    lines = [
        f"kind: {spec.kind}",
        f"feature_dim: {spec.feature_dim}",
        f"num_classes: {spec.num_classes}",
        f"attention_dim: {spec.attention_dim}",
        f"query_dim: {spec.query_dim}",
        f"mix_literal_sum: {int(spec.mix_literal_sum)}",
        f"arrays: {','.join(params.arrays)}",
    ]
    (out_dir / "spec.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for name, arr in params.arrays.items():
        np.save(out_dir / f"{name}.npy", arr)
    return out_dir


def load_params(in_dir: str | Path) -> ModelParams:
    in_dir = Path(in_dir)
    fields: dict[str, str] = {}
    for line in (in_dir / "spec.txt").read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition(": ")
            fields[key] = value
    spec = ModelSpec(
        kind=fields["kind"],
        feature_dim=int(fields["feature_dim"]),
        num_classes=int(fields["num_classes"]),
        attention_dim=int(fields["attention_dim"]),
        query_dim=int(fields["query_dim"]),
        mix_literal_sum=bool(int(fields["mix_literal_sum"])),
    )
    arrays = {name: np.load(in_dir / f"{name}.npy") for name in fields["arrays"].split(",")}
    return ModelParams(spec, arrays)
