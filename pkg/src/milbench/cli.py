"""Command-line interface.

Subcommands: ``synth`` (write a synthetic dataset), ``train`` (one
training run with optional heatmap export), ``bench`` (grid search over
methods/lrs/seeds plus reports), ``report`` (rebuild reports from a
bench directory), ``heatmap`` (export heatmaps for a saved run).

Option precedence: command-line flag > config file > built-in default.
The config file is INI-style with one section per subcommand, e.g.::

    [bench]
    models = MaxMIL,ABMIL
    lrs = 0.001,0.005

Exit codes: 0 on success, 1 with a one-line diagnostic on any handled
failure, 2 on argument errors (argparse's convention).
"""

from __future__ import annotations

import argparse
import configparser
import re
import sys
from pathlib import Path

import numpy as np

from .bags import DataError, Dataset, load_dataset
from .heads import KINDS, bag_output, canonical_kind, positive_score
from .heatmap import VALUE_MODES, export_heatmap, heatmap_values
from .metrics import RunPoint, render_boxplot_csv, render_csv, render_markdown, summarize
from .synth import SynthConfig, generate_dataset, write_dataset
from .trainer import (
    SELECTION_MODES,
    TrainConfig,
    TrainingDiverged,
    grid_search,
    load_params,
    load_run,
    resolve_workers,
    save_failure,
    save_params,
    save_run,
    spec_for_dataset,
    train_one,
)

_TAG_RE = re.compile(r"[A-Za-z0-9._-]+")

DEFAULT_MODELS = ",".join(KINDS)
DEFAULT_LRS = "0.001,0.005"
DEFAULT_SEEDS = "0,1,2"


def _as_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


class Options:
    """flag > config-file section > default."""

    def __init__(self, args: argparse.Namespace, section: str):
        self.args = args
        self.section = section
        self.config = configparser.ConfigParser()
        if args.config is not None:
            path = Path(args.config)
            if not path.is_file():
                raise DataError(f"config file not found: {path}")
            self.config.read(path, encoding="utf-8")

    def _raw(self, key: str):
        flag = getattr(self.args, key.replace("-", "_"), None)
        if flag is not None:
            return flag
        if self.config.has_option(self.section, key):
            return self.config.get(self.section, key)
        return None

    def get(self, key: str, default, cast):
        raw = self._raw(key)
        if raw is None:
            return default
        if isinstance(raw, str) and cast is not str:
            return cast(raw)
        return raw

    def str(self, key: str, default: str | None = None) -> str | None:
        return self.get(key, default, str)

    def int(self, key: str, default: int | None = None) -> int | None:
        return self.get(key, default, int)

    def float(self, key: str, default: float | None = None) -> float | None:
        return self.get(key, default, float)

    def bool(self, key: str, default: bool) -> bool:
        return self.get(key, default, _as_bool)

    def floats(self, key: str, default: str) -> list[float]:
        raw = self._raw(key)
        text = raw if raw is not None else default
        return [float(v) for v in str(text).split(",") if v.strip()]

    def ints(self, key: str, default: str) -> list[int]:
        raw = self._raw(key)
        text = raw if raw is not None else default
        return [int(v) for v in str(text).split(",") if v.strip()]

    def strs(self, key: str, default: str) -> list[str]:
        raw = self._raw(key)
        text = raw if raw is not None else default
        return [v.strip() for v in str(text).split(",") if v.strip()]


def _require(opts: Options, key: str) -> str:
    value = opts.str(key)
    if value is None:
        raise DataError(f"missing required option --{key}")
    return value


def _check_tag(tag: str) -> str:
    if not _TAG_RE.fullmatch(tag):
        raise DataError(f"dataset tag {tag!r} must match {_TAG_RE.pattern}")
    return tag


# ---------------------------------------------------------------------------
# synth


def _per_class(total: int, classes: int, label: str) -> int:
    if total % classes:
        raise DataError(f"--{label} ({total}) must divide evenly by {classes} classes")
    if total < classes:
        raise DataError(f"--{label} ({total}) needs at least one bag per class")
    return total // classes


def cmd_synth(args: argparse.Namespace) -> int:
    opts = Options(args, "synth")
    classes = opts.int("classes", 2)
    cfg = SynthConfig(
        feature_dim=opts.int("feature-dim", 16),
        num_classes=classes,
        witness_rate=opts.float("witness-rate", 0.1),
        witness_mean=opts.float("witness-mean", 6.0),
        k_min=opts.int("k-min", 32),
        k_max=opts.int("k-max", 64),
        train_per_class=_per_class(opts.int("bags-train", 200), classes, "bags-train"),
        val_per_class=_per_class(opts.int("bags-val", 50), classes, "bags-val"),
        test_per_class=_per_class(opts.int("bags-test", 100), classes, "bags-test"),
        seed=opts.int("seed", 0),
        with_coords=opts.bool("coords", True),
        name=_check_tag(opts.str("name", "synth")),
    )
    out_dir = Path(_require(opts, "out"))
    manifest = write_dataset(generate_dataset(cfg).dataset, out_dir)
    print(f"wrote {manifest}")
    return 0


# ---------------------------------------------------------------------------
# train


def _train_config(opts: Options, seed: int, lr: float) -> TrainConfig:
    return TrainConfig(
        epochs=opts.int("epochs", 100),
        lr=lr,
        weight_decay=opts.float("weight-decay", 1e-5),
        selection=opts.str("selection", "best_val_auc"),
        seed=seed,
    )


def _export_run_heatmaps(params, dataset: Dataset, split: str, count: int,
                         mode: str, out_dir: Path) -> int:
    bags = dataset.split(split)
    with_coords = [b for b in bags if b.coords is not None]
    if not with_coords or count < 1:
        return 0
    scored = sorted(
        with_coords, key=lambda b: (positive_score(bag_output(params, b.features)), b.slide_id)
    )
    chosen: dict[str, object] = {}
    for bag in list(scored[-count:]) + list(scored[:count]):
        chosen[bag.slide_id] = bag
    written = 0
    for slide_id in sorted(chosen):
        bag = chosen[slide_id]
        out = bag_output(params, bag.features)
        values = heatmap_values(out, mode, params.spec.kind)
        export_heatmap(bag, values, out_dir / slide_id)
        written += 1
    return written


def cmd_train(args: argparse.Namespace) -> int:
    opts = Options(args, "train")
    manifest = Path(_require(opts, "manifest"))
    out_dir = Path(_require(opts, "out"))
    dataset = load_dataset(manifest)
    _check_tag(dataset.name)
    kind = canonical_kind(_require(opts, "model"))
    spec = spec_for_dataset(kind, dataset, mix_literal_sum=opts.bool("mix-literal-sum", False))
    config = _train_config(opts, opts.int("seed", 0), opts.float("lr", 1e-3))
    run, params = train_one(spec, dataset, config)
    save_run(run, out_dir)
    save_params(params, out_dir / "params")
    n_maps = _export_run_heatmaps(
        params, dataset, "test", opts.int("heatmaps", 0),
        opts.str("heatmap-values", "auto"), out_dir / "heatmaps",
    )
    extra = f", {n_maps} heatmaps" if n_maps else ""
    print(f"test_auc={run.test_auc!r} (selected epoch {run.selected_epoch}{extra})")
    return 0


# ---------------------------------------------------------------------------
# bench / report


def _load_datasets(opts: Options) -> list[Dataset]:
    paths = getattr(opts.args, "manifest", None) or opts.strs("manifests", "")
    if not paths:
        raise DataError("bench needs at least one --manifest")
    datasets = []
    seen = set()
    for path in paths:
        ds = load_dataset(Path(path))
        _check_tag(ds.name)
        if ds.name in seen:
            raise DataError(f"duplicate dataset tag {ds.name!r}; rename the dataset directories")
        seen.add(ds.name)
        datasets.append(ds)
    return datasets


def _cell_dir(root: Path, tag: str, method: str, lr: float, seed: int) -> Path:
    return root / "runs" / tag / method / f"lr{lr!r}" / f"seed{seed}"


def build_reports(out_dir: Path) -> Path:
    """Rebuild report.md/report.csv/boxplot.csv from saved runs only."""
    runs_root = out_dir / "runs"
    if not runs_root.is_dir():
        raise DataError(f"no runs directory under {out_dir}")
    points: list[RunPoint] = []
    for tag_dir in sorted(runs_root.iterdir()):
        if not tag_dir.is_dir():
            continue
        for method_dir in sorted(tag_dir.iterdir()):
            runs: dict[tuple[float, int], object] = {}
            seeds: set[int] = set()
            lrs: set[float] = set()
            for cell in sorted(method_dir.glob("lr*/seed*")):
                lr = float(cell.parent.name[2:])
                seed = int(cell.name[4:])
                lrs.add(lr)
                seeds.add(seed)
                if (cell / "result.txt").is_file():
                    runs[(lr, seed)] = load_run(cell)
            scores: dict[float, float] = {}
            for lr in sorted(lrs):
                cells = [runs[(lr, s)] for s in seeds if (lr, s) in runs]
                if len(cells) == len(seeds):
                    scores[lr] = float(np.mean([r.selected_val_auc for r in cells]))
            if not scores:
                continue
            best = max(sorted(scores), key=lambda lr: scores[lr])
            for seed in sorted(seeds):
                run = runs[(best, seed)]
                points.append(
                    RunPoint(method=method_dir.name, tag=tag_dir.name, seed=seed,
                             value=run.test_auc * 100.0)
                )
    if not points:
        raise DataError(f"no completed runs under {runs_root}")
    summary = summarize(points)
    (out_dir / "report.md").write_text(render_markdown(summary), encoding="utf-8")
    (out_dir / "report.csv").write_text(render_csv(summary), encoding="utf-8")
    (out_dir / "boxplot.csv").write_text(render_boxplot_csv(points), encoding="utf-8")
    return out_dir / "report.md"


def cmd_bench(args: argparse.Namespace) -> int:
    opts = Options(args, "bench")
    out_dir = Path(_require(opts, "out"))
    datasets = _load_datasets(opts)
    models = [canonical_kind(m) for m in opts.strs("models", DEFAULT_MODELS)]
    if len(set(models)) != len(models):
        raise DataError("duplicate models in --models")
    lrs = opts.floats("lrs", DEFAULT_LRS)
    seeds = opts.ints("seeds", DEFAULT_SEEDS)
    workers = resolve_workers(opts.int("workers", 1))
    base = _train_config(opts, seed=0, lr=lrs[0])
    mix_literal = opts.bool("mix-literal-sum", False)
    for dataset in datasets:
        for kind in models:
            spec = spec_for_dataset(kind, dataset, mix_literal_sum=mix_literal)
            grid = grid_search(spec, dataset, lrs, seeds, base, workers=workers)
            for (lr, seed), run in sorted(grid.runs.items()):
                save_run(run, _cell_dir(out_dir, dataset.name, kind, lr, seed))
            for (lr, seed), message in sorted(grid.failures.items()):
                save_failure(message, _cell_dir(out_dir, dataset.name, kind, lr, seed))
    report = build_reports(out_dir)
    print(f"wrote {report}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    opts = Options(args, "report")
    runs_dir = Path(_require(opts, "runs"))
    report = build_reports(runs_dir)
    print(f"wrote {report}")
    return 0


# ---------------------------------------------------------------------------
# heatmap


def cmd_heatmap(args: argparse.Namespace) -> int:
    opts = Options(args, "heatmap")
    run_dir = Path(_require(opts, "run"))
    manifest = Path(_require(opts, "manifest"))
    out_dir = Path(_require(opts, "out"))
    mode = opts.str("values", "auto")
    if mode not in VALUE_MODES:
        raise DataError(f"--values must be one of {VALUE_MODES}, got {mode!r}")
    params = load_params(run_dir / "params")
    dataset = load_dataset(manifest)
    split = opts.str("split", "test")
    bags = {b.slide_id: b for b in dataset.split(split)}
    slides = opts.strs("slides", "")
    if slides:
        missing = [s for s in slides if s not in bags]
        if missing:
            raise DataError(f"slides not in split {split!r}: {', '.join(missing)}")
        chosen = [bags[s] for s in slides]
    else:
        count = opts.int("count", 4)
        with_coords = [b for b in bags.values() if b.coords is not None]
        scored = sorted(
            with_coords,
            key=lambda b: (positive_score(bag_output(params, b.features)), b.slide_id),
        )
        top_bottom = (scored[-count:] + scored[:count]) if count > 0 else []
        chosen = list({b.slide_id: b for b in top_bottom}.values())
    written = 0
    for bag in sorted(chosen, key=lambda b: b.slide_id):
        if bag.coords is None:
            raise DataError(f"bag {bag.slide_id!r} has no coordinates")
        out = bag_output(params, bag.features)
        values = heatmap_values(out, mode, params.spec.kind)
        export_heatmap(bag, values, out_dir / bag.slide_id)
        written += 1
    print(f"wrote {written} heatmaps to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="milbench",
        description="Multiple-instance learning benchmark on bag-of-features datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file; flags override it")
        p.add_argument("--seed", type=int, help="root random seed")

    p = sub.add_parser("synth", help="generate a synthetic witness dataset")
    common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--name", help="dataset tag (default synth)")
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--witness-rate", type=float)
    p.add_argument("--witness-mean", type=float)
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--bags-train", type=int, help="total training bags (all classes)")
    p.add_argument("--bags-val", type=int)
    p.add_argument("--bags-test", type=int)
    p.add_argument("--coords", action=argparse.BooleanOptionalAction, default=None,
                   help="store grid coordinates (default on)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one head on one dataset")
    common(p)
    p.add_argument("--manifest", help="dataset manifest.csv")
    p.add_argument("--model", help=f"one of {', '.join(KINDS)}")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--selection", choices=SELECTION_MODES)
    p.add_argument("--mix-literal-sum", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--heatmaps", type=int, help="export this many top and bottom test bags")
    p.add_argument("--heatmap-values", choices=VALUE_MODES)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="grid-search several methods and write reports")
    common(p)
    p.add_argument("--out", help="benchmark output directory")
    p.add_argument("--manifest", action="append", help="dataset manifest (repeatable)")
    p.add_argument("--models", help="comma-separated method names")
    p.add_argument("--lrs", help="comma-separated learning rates")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--selection", choices=SELECTION_MODES)
    p.add_argument("--mix-literal-sum", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--workers", type=int, help="parallel cells (env MILBENCH_WORKERS wins)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="rebuild reports from a bench directory")
    common(p)
    p.add_argument("--runs", help="bench output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("heatmap", help="export heatmaps for a saved training run")
    common(p)
    p.add_argument("--run", help="train output directory (with params/)")
    p.add_argument("--manifest", help="dataset manifest.csv")
    p.add_argument("--out", help="heatmap output directory")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--slides", help="comma-separated slide ids")
    p.add_argument("--count", type=int, help="top/bottom bags to export when no --slides")
    p.add_argument("--values", choices=VALUE_MODES)
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
