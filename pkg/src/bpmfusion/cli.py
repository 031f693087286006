"""Command-line entry point: ``bpmfusion gen-data | train | cv | ablate | gradcheck``.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 numerical failure (non-finite loss or failed gradient check).
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

from .data import generate_synthetic_cohort, load_atlas, load_manifest, to_arrays, write_cohort
from .errors import ConfigError, DataError, NumericalError
from .kvconfig import format_config, parse_config
from .model import ModelConfig, save_checkpoint
from .train_eval import (
    METRIC_NAMES,
    TrainConfig,
    cross_validate,
    fit,
    kfold_split,
    metrics_csv,
    text_report,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MODE_ALIASES = {"multimodal": "multimodal", "fused": "multimodal", "smri": "smri_only", "fmri": "fmri_only",
                "smri_only": "smri_only", "fmri_only": "fmri_only"}
ABLATION_ROWS = (("smri", "smri_only"), ("fmri", "fmri_only"), ("fused", "multimodal"))

logger = logging.getLogger("bpmfusion")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    folds: int = 5

    def to_flat(self) -> dict[str, str]:
        return {**self.model.to_flat(), **self.train.to_flat(), "folds": str(self.folds)}


MODEL_KEYS = frozenset(ModelConfig().to_flat())
TRAIN_KEYS = frozenset(TrainConfig().to_flat())


def build_run_config(flat: dict[str, str], overrides: dict[str, str] | None = None) -> RunConfig:
    """Validate ``key -> value`` pairs (file first, then overrides) against the schema."""
    merged = {**flat, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    unknown = sorted(set(merged) - MODEL_KEYS - TRAIN_KEYS - {"folds"})
    if unknown:
        raise ConfigError(f"unknown config key: {unknown[0]}")
    if "mode" in merged:
        if merged["mode"] not in MODE_ALIASES:
            raise ConfigError(f"mode: expected one of multimodal|smri|fmri, got {merged['mode']!r}")
        merged["mode"] = MODE_ALIASES[merged["mode"]]
    try:
        folds = int(merged.pop("folds", "5"))
    except ValueError:
        raise ConfigError("folds: expected an integer") from None
    if folds < 2:
        raise ConfigError("folds: need at least 2")
    model = ModelConfig.from_flat({k: v for k, v in merged.items() if k in MODEL_KEYS})
    train = TrainConfig.from_flat({k: v for k, v in merged.items() if k in TRAIN_KEYS})
    return RunConfig(model, train, folds)


def load_run_config(path: str | None, overrides: dict[str, str]) -> RunConfig:
    flat = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        flat = parse_config(text)
    return build_run_config(flat, overrides)


@contextlib.contextmanager
def staged_output(out: str):
    """Write into a sibling temp directory and move it into place only on success."""
    target = Path(out)
    if target.exists() and (not target.is_dir() or any(target.iterdir())):
        raise ConfigError(f"output directory {out} exists and is not empty")
    target.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    if target.exists():
        target.rmdir()
    os.replace(stage, target)


def _load_data(args):
    try:
        atlas = load_atlas(args.atlas) if getattr(args, "atlas", None) else None
        return to_arrays(load_manifest(args.manifest, atlas))
    except OSError as exc:
        raise DataError(str(exc)) from None


def _overrides(args) -> dict[str, str]:
    keys = {"mode": getattr(args, "mode", None), "seed": getattr(args, "seed", None),
            "epochs": getattr(args, "epochs", None), "folds": getattr(args, "folds", None)}
    return {k: str(v) for k, v in keys.items() if v is not None}


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    extents = tuple(int(x) for x in args.extents.split(","))
    if len(extents) != 3 or min(extents) < 1:
        raise ConfigError("extents: expected three positive integers, e.g. 32,32,24")
    if args.subjects < 1:
        raise ConfigError("subjects: must be >= 1")
    manifest = generate_synthetic_cohort(
        args.subjects, args.class_ratio, extents, args.frames, args.regions, args.effect, args.seed,
        fmri_effect_strength=args.fmri_effect,
    )
    with staged_output(args.out) as stage:
        write_cohort(manifest, stage)
    print(f"wrote {len(manifest)} subjects ({manifest.class_counts()}) to {args.out}")
    return EXIT_OK


def _save_fold_checkpoints(report, model: ModelConfig, stage: Path, mode: str) -> None:
    for fold in report.folds:
        save_checkpoint(stage / "folds" / f"fold_{fold.index}", fold.params, model, mode)


def _folds_table(split) -> str:
    rows = [(sid, f) for f, (_, test) in enumerate(split) for sid in test]
    return "".join(f"{sid}\t{f}\n" for sid, f in sorted(rows))


def _regions_config(model: ModelConfig, data) -> ModelConfig:
    return replace(model, sfam=replace(model.sfam, regions=data.series.shape[2]))


def cmd_train(args) -> int:
    run = load_run_config(args.config, _overrides(args))
    data = _load_data(args)
    with staged_output(args.out) as stage:
        cfg, params, history = fit(run.model, data, run.train)
        save_checkpoint(stage / "checkpoint", params, cfg, run.train.mode)
        (stage / "history.csv").write_text(
            "epoch,loss\n" + "".join(f"{i},{v:.8f}\n" for i, v in enumerate(history, 1)), encoding="utf-8")
        (stage / "config.txt").write_text(format_config(replace(run, model=cfg).to_flat()), encoding="utf-8")
    print(f"trained {run.train.mode} model on {len(data)} subjects; final loss {history[-1]:.6f}")
    return EXIT_OK


def cmd_cv(args) -> int:
    run = load_run_config(args.config, _overrides(args))
    data = _load_data(args)
    run = replace(run, model=_regions_config(run.model, data))
    split = kfold_split(data.ids, data.targets, run.folds, run.train.seed)
    with staged_output(args.out) as stage:
        report = cross_validate(run.model, data, run.train, run.folds, split=split, keep_params=True)
        _save_fold_checkpoints(report, run.model, stage, run.train.mode)
        (stage / "metrics.csv").write_text(metrics_csv(report), encoding="utf-8")
        (stage / "report.txt").write_text(text_report(report, run.train.mode), encoding="utf-8")
        (stage / "folds.tsv").write_text(_folds_table(split), encoding="utf-8")
        (stage / "config.txt").write_text(format_config(run.to_flat()), encoding="utf-8")
    print(metrics_csv(report), end="")
    return EXIT_OK


def ablation_table(reports: dict[str, object]) -> str:
    lines = ["mode," + ",".join(METRIC_NAMES)]
    for row, report in reports.items():
        lines.append(row + "," + ",".join(f"{report.mean[m]:.6f}" for m in METRIC_NAMES))
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    run = load_run_config(args.config, _overrides(args))
    data = _load_data(args)
    run = replace(run, model=_regions_config(run.model, data))
    split = kfold_split(data.ids, data.targets, run.folds, run.train.seed)
    with staged_output(args.out) as stage:
        reports = {}
        for row, mode in ABLATION_ROWS:
            train_cfg = replace(run.train, mode=mode)
            report = cross_validate(run.model, data, train_cfg, run.folds, split=split)
            reports[row] = report
            (stage / row).mkdir()
            (stage / row / "metrics.csv").write_text(metrics_csv(report), encoding="utf-8")
            (stage / row / "report.txt").write_text(text_report(report, row), encoding="utf-8")
        (stage / "ablation.csv").write_text(ablation_table(reports), encoding="utf-8")
        (stage / "folds.tsv").write_text(_folds_table(split), encoding="utf-8")
        (stage / "config.txt").write_text(format_config(run.to_flat()), encoding="utf-8")
    print(ablation_table(reports), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import verify

    results = verify.run_suite(seed=args.seed, include_model=not args.ops_only)
    print(verify.format_results(results), end="")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bpmfusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-fold progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic cohort with planted class effects")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--effect", type=float, default=1.0, help="sMRI blob peak (and fMRI effect unless overridden)")
    p.add_argument("--fmri-effect", type=float, default=None, help="fMRI ROI-pair effect; tanh gives the correlation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--class-ratio", type=float, default=0.5, help="fraction of BD subjects")
    p.add_argument("--extents", default="32,32,24", help="volume D,H,W")
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--regions", type=int, default=116)
    p.set_defaults(func=cmd_gen_data)

    def common(p, with_mode=True):
        p.add_argument("--manifest", required=True)
        p.add_argument("--config", default=None, help="key = value file")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--atlas", default=None, help="BPMA atlas, needed when the manifest lists 4-D fMRI")
        if with_mode:
            p.add_argument("--mode", choices=("multimodal", "smri", "fmri"), default=None)

    p = sub.add_parser("train", help="train one model on the whole cohort")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    common(p)
    p.add_argument("--folds", type=int, default=None)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("ablate", help="sMRI-only vs fMRI-only vs fused under identical folds")
    common(p, with_mode=False)
    p.add_argument("--folds", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operator")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops-only", action="store_true", help="skip the end-to-end tiny model")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
