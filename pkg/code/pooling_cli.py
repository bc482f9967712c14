"""
Command-line entry point: gen | train | ablate | gradcheck | profile
====================================================================

Exit codes: 0 success, 1 validation error (bad config, shapes, dataset
format, missing paths), 2 runtime failure. Errors go to stderr as a single
`error: <ErrorClass>: <message>` line.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from ablation_runner import GRADCHECK_SCOPES, VARIANT_TABLES, resolve_variants, run_ablation, run_gradcheck, \
    write_ablation
from errors import ConfigError, DatasetFormatError, DimensionError
from models.data_models import RunConfig, TaskKind
from services.profiler import PRESET_NAMES, count_flops, count_params, profile_frame, profile_preset, render_text
from services.synthetic_data import SyntheticDataset, generate
from services.tpf_container import read_dataset, write_dataset
from services.trainer import build_model, prepare_dataset, train
from settings import get_settings

logger = logging.getLogger(__name__)

VALIDATION_ERRORS = (ConfigError, DimensionError, DatasetFormatError, ValidationError, FileNotFoundError)
DEFAULT_PROFILE_PRESETS = ["bert-512", "bert-2048"]


class _Parser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they map to exit code 1"""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tpool", description="Late temporal pooling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a synthetic TPF1 dataset")
    gen.add_argument("--task", choices=[t.value for t in TaskKind], default=TaskKind.ORDER.value)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--t", type=int, default=8)
    gen.add_argument("--d", type=int, default=16)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    for name, help_text in (("train", "Train one pooler"), ("ablate", "Train and compare pooler variants")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True)
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--epochs", type=int)
        cmd.add_argument("--output-dir")
        if name == "ablate":
            cmd.add_argument("--table", choices=sorted(VARIANT_TABLES))
            cmd.add_argument("--max-workers", type=int)

    grad = sub.add_parser("gradcheck", help="Finite-difference gradient suites")
    grad.add_argument("--scope", choices=GRADCHECK_SCOPES, default="ops")
    grad.add_argument("--seeds", type=int, default=10)

    prof = sub.add_parser("profile", help="Parameter and FLOP reports")
    prof.add_argument("--config")
    prof.add_argument("--preset", action="append", choices=PRESET_NAMES)
    prof.add_argument("--flops-per-mac", type=int, choices=(1, 2))
    prof.add_argument("--output-dir")
    return parser


# *** config plumbing ***

def _resolve(path: str, base: Path) -> Path:
    candidate = Path(path)
    if not candidate.is_absolute() and not candidate.exists():
        candidate = base / candidate
    if not candidate.exists():
        raise FileNotFoundError(f"path not found: {path}")
    return candidate


def load_run_config(path: str, overrides: Optional[dict] = None) -> RunConfig:
    """Parse the JSON document, apply flag overrides, validate every input path"""
    config_path = Path(path)
    if not config_path.exists():
        raise FileNotFoundError(f"config not found: {config_path}")
    try:
        data = json.loads(config_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{config_path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{config_path} must hold a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    run = RunConfig.model_validate(data)

    base = config_path.parent
    updates = {}
    for key in ("train_path", "test_path"):
        value = getattr(run, key)
        if value is not None:
            updates[key] = str(_resolve(value, base))
    return run.model_copy(update=updates)


def _output_dir(run: Optional[RunConfig], flag: Optional[str]) -> Path:
    chosen = flag or (run.output_dir if run is not None else None) or get_settings().output_dir
    out = Path(chosen)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _datasets(run: RunConfig):
    if run.train_path is None:
        raise ConfigError("config needs a train_path")
    train_ds = read_dataset(run.train_path)
    test_ds = read_dataset(run.test_path) if run.test_path else None
    if test_ds is not None and test_ds.features.shape[1:] != train_ds.features.shape[1:]:
        raise DimensionError("datasets", train_ds.features.shape, test_ds.features.shape,
                             detail="train and test sequences must share T and D")
    return train_ds, test_ds


def _summary(ds: SyntheticDataset) -> str:
    N, T, D = ds.features.shape
    balance = ", ".join(f"{share:.3f}" for share in ds.class_balance())
    return f"N={N} T={T} D={D} task={ds.task_kind.value} classes={ds.n_classes} balance=[{balance}]"


# *** commands ***

def cmd_gen(args) -> int:
    ds = generate(TaskKind(args.task), args.n, args.t, args.d, args.seed)
    path = write_dataset(ds, args.out)
    print(f"✅ wrote {path}: {_summary(ds)}")
    return 0


def cmd_train(args) -> int:
    run = load_run_config(args.config, {"seed": args.seed, "epochs": args.epochs})
    out_dir = _output_dir(run, args.output_dir)
    train_ds, test_ds = _datasets(run)
    cfg = run.train_config(get_settings().dtype)
    train_view = prepare_dataset(train_ds, cfg)
    test_view = prepare_dataset(test_ds, cfg, seed_offset=1) if test_ds is not None else None
    model = build_model(cfg, train_view)
    history = train(model, train_view, cfg, test_view)
    metrics_path = history.to_csv(out_dir / "metrics.csv")

    print(f"✅ {model.kind}: {count_params(model).total:,} params, {len(history)} metric rows -> {metrics_path}")
    for split in ("train", "test"):
        final = history.final(split)
        if final is not None:
            print(f"   final {split}: loss {final.loss:.4f} top1 {final.top1:.4f}")
    return 0


def cmd_ablate(args) -> int:
    run = load_run_config(args.config, {"seed": args.seed, "epochs": args.epochs, "max_workers": args.max_workers})
    out_dir = _output_dir(run, args.output_dir)
    train_ds, test_ds = _datasets(run)
    rows = run_ablation(run, train_ds, test_ds, resolve_variants(run, args.table))
    csv_path, txt_path = write_ablation(rows, out_dir)
    print(txt_path.read_text(), end="")
    failed = [row for row in rows if row.error]
    for row in failed:
        print(f"❌ {row.variant}: {row.error}", file=sys.stderr)
    print(f"✅ {len(rows) - len(failed)}/{len(rows)} variants -> {csv_path}")
    return 0 if len(failed) < len(rows) else 2


def cmd_gradcheck(args) -> int:
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    results = run_gradcheck(args.scope, seeds=args.seeds)
    width = max(len(r.component) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.component:<{width}}  {r.worst_error:.3e}  < {r.threshold:g}  "
              f"zero-grad {r.invariant_grad:.1e}  {status}")
    failed = [r for r in results if not r.passed]
    print(f"{'✅' if not failed else '❌'} {args.scope}: {len(results) - len(failed)}/{len(results)} passed")
    return 0 if not failed else 2


def _profile_configured(run: RunConfig, fpm: int, out_dir: Path) -> None:
    train_ds, _ = _datasets(run)
    cfg = run.train_config(get_settings().dtype)
    view = prepare_dataset(train_ds, cfg)
    model = build_model(cfg, view)
    geometry = {"T": view.steps, "D": view.dim}
    if hasattr(view, "fast_dim"):
        geometry.update(T_fast=view.fast.shape[1], D_fast=view.fast_dim)
    params, flops = count_params(model), count_flops(model, geometry, fpm)
    print(render_text(f"config:{model.kind}", params, flops))
    profile_frame(params, flops).to_csv(out_dir / "profile-config.csv", index=False)


def cmd_profile(args) -> int:
    run = load_run_config(args.config) if args.config else None
    out_dir = _output_dir(run, args.output_dir)
    fpm = args.flops_per_mac or (run.flops_per_mac if run is not None else 2)
    presets: List[str] = args.preset or (run.profile_presets if run is not None and run.profile_presets else
                                         DEFAULT_PROFILE_PRESETS)
    unknown = [p for p in presets if p not in PRESET_NAMES]
    if unknown:
        raise ConfigError(f"unknown profile presets {unknown}, expected some of {list(PRESET_NAMES)}")

    for name in presets:
        params, flops = profile_preset(name, fpm)
        print(render_text(name, params, flops))
        profile_frame(params, flops).to_csv(out_dir / f"profile-{name}.csv", index=False)
    if run is not None and run.train_path is not None:
        _profile_configured(run, fpm, out_dir)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "profile": cmd_profile,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        settings = get_settings()
        logging.basicConfig(level=settings.numeric_log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except VALIDATION_ERRORS as exc:
        _report(exc)
        return 1
    except Exception as exc:
        logger.exception("❌ command failed")
        _report(exc)
        return 2


def _report(exc: BaseException) -> None:
    message = " ".join(str(exc).split())
    print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
