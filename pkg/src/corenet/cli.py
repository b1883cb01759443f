"""``corenet`` command line: synth, train, ptl, restore, eval, plot.

Every command takes an optional JSON ``--config`` plus flag overrides and
writes the resolved configuration next to its outputs. Exit codes: 0 ok,
2 configuration error, 3 data error, 4 numerical abort.

The only environment knob is ``CORENET_THREADS`` (kernel thread count).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import models
from .autodiff import kernels
from .checkpoint import CheckpointError, load_checkpoint
from .dataset import SPLITS, DatasetConfig, DatasetError, build_dataset, read_manifest, read_split
from .evaluation import EvalError, EvalReport, evaluate, passes_svg, read_csv, report_svg, write_report
from .models import ARConfig, MRConfig
from .ptl import InferenceChain, PTLPlan, restore_dataset, run_ptl
from .training import NumericalAbort, TrainConfig, train_corenet

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
TOY_WIDTH = 8
TOY_EPOCHS = 20

log = logging.getLogger("corenet")


class ConfigError(ValueError):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _dataset_config(args, cfg: dict) -> DatasetConfig:
    section = dict(cfg.get("dataset", {}))
    if args.seed is not None:
        section["master_seed"] = args.seed
    if args.toy_scale is not None:
        base = DatasetConfig.scaled(args.toy_scale)
        for key in ("train", "val", "test_per_cell"):
            section.setdefault(key, getattr(base, key))
    dc = DatasetConfig.from_dict(section)
    dc.validate()
    return dc


def _model_configs(args, cfg: dict) -> tuple[ARConfig, MRConfig]:
    ar = cfg.get("ar")
    mr = cfg.get("mr")
    if args.toy_scale is not None:
        ar = ar or {"encoder_widths": [TOY_WIDTH] * 5}
        mr = mr or {"widths": [TOY_WIDTH] * 6}
    return (ARConfig.from_dict(ar) if ar else ARConfig(), MRConfig.from_dict(mr) if mr else MRConfig())


def _train_config(args, cfg: dict) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    if args.seed is not None:
        section["seed"] = args.seed
    if args.toy_scale is not None:
        section.setdefault("max_epochs", TOY_EPOCHS)
        section["toy_scale"] = args.toy_scale
    if getattr(args, "epochs", None) is not None:
        section["max_epochs"] = args.epochs
    return TrainConfig.from_dict(section)


def _snapshot(out: Path, command: str, resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "kernel_backend": kernels.get_backend(), **resolved}
    with open(out / f"{command}_config.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg: dict) -> int:
    dc = _dataset_config(args, cfg)
    out = Path(args.out)
    _snapshot(out, "synth", {"dataset": asdict(dc)})
    t0 = time.perf_counter()
    manifest = build_dataset(dc, out, workers=args.workers)
    counts = {s: e["count"] for s, e in manifest["splits"].items()}
    print(f"wrote {sum(counts.values())} records {counts} to {out} in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def cmd_train(args, cfg: dict) -> int:
    ar_cfg, mr_cfg = _model_configs(args, cfg)
    tc = _train_config(args, cfg)
    out = Path(args.out)
    _snapshot(out, "train", {"train": tc.to_dict(), "ar": ar_cfg.to_dict(), "mr": mr_cfg.to_dict(), "data": args.data})
    data = Path(args.data)
    read_manifest(data)
    result = train_corenet(read_split(data, "train"), read_split(data, "val"), tc, ar_cfg, mr_cfg, run_dir=out)
    print(
        f"best val SNR {result.best_val_snr:.3f} dB at epoch {result.best_checkpoint.epoch} "
        f"(corrupted baseline {result.baseline_val_snr:.3f} dB) in {result.elapsed_s:.0f}s"
    )
    return EXIT_OK


def cmd_ptl(args, cfg: dict) -> int:
    ar_cfg, mr_cfg = _model_configs(args, cfg)
    tc = _train_config(args, cfg)
    section = cfg.get("ptl", {})
    passes = args.passes if args.passes is not None else section.get("num_passes", 4)
    plan = PTLPlan(
        num_passes=passes,
        train_config=tc,
        ar_config=ar_cfg,
        mr_config=mr_cfg,
        pass_overrides=tuple(section.get("pass_overrides", ())),
        master_seed=tc.seed,
    )
    out = Path(args.out)
    _snapshot(out, "ptl", {"plan": {"num_passes": passes, "pass_overrides": list(plan.pass_overrides)},
                           "train": tc.to_dict(), "ar": ar_cfg.to_dict(), "mr": mr_cfg.to_dict(), "data": args.data})
    read_manifest(Path(args.data))
    arts = run_ptl(plan, Path(args.data), out)
    for a in arts:
        s = a.summary
        print(f"pass {a.pass_index}: best val {s['best_val_snr']:.3f} dB, test {s['test_snr']:.3f} dB")
    return EXIT_OK


def _load_chain(path: Path) -> InferenceChain:
    if path.suffix == ".json":
        return InferenceChain.from_manifest(path)
    return InferenceChain([load_checkpoint(path)])


def cmd_restore(args, cfg: dict) -> int:
    src = Path(args.checkpoint)
    out = Path(args.out)
    data = Path(args.data)
    _snapshot(out, "restore", {"checkpoint": str(src), "data": str(data)})
    chain = _load_chain(src)
    n_params = sum(models.param_count(p) for _, p in chain.stages)
    t0 = time.perf_counter()
    if src.suffix == ".json":
        with open(src) as fh:
            entries = json.load(fh)["passes"]
        current = data
        for i, entry in enumerate(entries):
            target = out if i == len(entries) - 1 else out / f"stage_{i}"
            restore_dataset(src.parent / entry["checkpoint"], current, target)
            current = target
    else:
        restore_dataset(src, data, out)
    elapsed = time.perf_counter() - t0
    total = sum(e["count"] for e in read_manifest(out)["splits"].values())
    rate = total * len(chain) / elapsed if elapsed > 0 else float("inf")
    print(
        f"restored {total} records through {len(chain)} stage(s): {rate:.1f} signals/s "
        f"({1000 / rate:.3f} ms/signal), apprentice parameters {n_params}"
    )
    return EXIT_OK


def cmd_eval(args, cfg: dict) -> int:
    restored_dir = Path(args.restored)
    reference_dir = Path(args.reference) if args.reference else restored_dir
    out = Path(args.out)
    _snapshot(out, "eval", {"restored": str(restored_dir), "reference": str(reference_dir), "split": args.split})
    candidate = read_split(restored_dir, args.split)
    reference = read_split(reference_dir, args.split)
    manifest = read_manifest(restored_dir)
    pass_index = manifest.get("provenance", {}).get("pass_index")
    report = evaluate(candidate, reference, pass_index)
    write_report(report, out)
    print(
        f"mean SNR {report.overall_mean_snr_db:.4f} dB over {len(candidate)} records "
        f"(corrupted {report.corrupted_baseline_db:.4f} dB, improvement {report.improvement_db:.4f} dB)"
    )
    return EXIT_OK


def cmd_plot(args, cfg: dict) -> int:
    src = Path(args.input)
    out = Path(args.out)
    if (src / "summary.csv").exists() and (src / "chain.json").exists():
        svg = passes_svg(read_csv_plain(src / "summary.csv"))
    elif (src / "summary.json").exists():
        svg = report_svg(_report_from_dir(src))
    else:
        raise DatasetError(f"{src} holds neither a PTL run nor an evaluation report")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    print(f"wrote {out}")
    return EXIT_OK


def read_csv_plain(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _report_from_dir(src: Path) -> EvalReport:
    with open(src / "summary.json") as fh:
        summary = json.load(fh)
    levels = read_csv(src / "per_snr_level.csv")
    mods = read_csv(src / "per_modulation.csv")
    return EvalReport(
        overall_mean_snr_db=summary["overall_mean_snr_db"],
        corrupted_baseline_db=summary["corrupted_baseline_db"],
        per_snr_level={float(r["snr_level_db"]): float(r["restored_snr_db"]) for r in levels},
        per_snr_level_baseline={float(r["snr_level_db"]): float(r["corrupted_snr_db"]) for r in levels},
        per_modulation={r["modulation"]: float(r["improvement_db"]) for r in mods},
        counts={},
        pass_index=summary.get("pass_index"),
    )


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--toy-scale", type=float, help="toy-scale factor (e.g. 0.01)")
    common.add_argument("--out", required=True, help="output directory (or file for plot)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="corenet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="synthesize a dataset")
    s.add_argument("--workers", type=int, default=1)

    for name, hlp in (("train", "train one cooperative pass"), ("ptl", "run chained passes")):
        t = sub.add_parser(name, parents=[common], help=hlp)
        t.add_argument("--data", required=True, help="dataset directory")
        t.add_argument("--epochs", type=int)
        if name == "ptl":
            t.add_argument("--passes", type=int)

    r = sub.add_parser("restore", parents=[common], help="restore a dataset with a checkpoint or chain")
    r.add_argument("--checkpoint", required=True, help="best.ckpt or chain.json")
    r.add_argument("--data", required=True)

    e = sub.add_parser("eval", parents=[common], help="score restored signals")
    e.add_argument("--restored", required=True, help="dataset whose inputs are scored")
    e.add_argument("--reference", help="original dataset (corrupted baseline); defaults to --restored")
    e.add_argument("--split", default="test", choices=SPLITS)

    pl = sub.add_parser("plot", parents=[common], help="SVG from an eval or PTL directory")
    pl.add_argument("--input", required=True)
    return p


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "ptl": cmd_ptl,
    "restore": cmd_restore,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    threads = os.environ.get("CORENET_THREADS")
    try:
        if threads:
            kernels.set_num_threads(int(threads))
        cfg = _load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}\nsnapshot: {json.dumps(exc.snapshot, default=str)}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, EvalError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError, TypeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

