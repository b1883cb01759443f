"""Progressive transfer learning: chained passes over restored datasets.

Pass k trains on r_k, restores every split with its best apprentice and
re-normalises the result, which becomes r_{k+1}. Both networks are
warm-started from pass k's best checkpoint; optimizer moments start fresh.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint
from .corruption import channel_ranges, denormalize, normalize_segment
from .dataset import SPLITS, DatasetError, SignalSet, base_manifest, read_manifest, read_split, sha256_file, write_manifest, write_split
from .metrics import snr_db_batch
from .models import ARConfig, MRConfig
from .training import PassResult, TrainConfig, restore, train_corenet, with_overrides

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("pass", "best_epoch", "best_val_snr", "train_snr", "val_snr", "test_snr")


@dataclass(frozen=True)
class PTLPlan:
    num_passes: int
    train_config: TrainConfig
    ar_config: ARConfig = ARConfig()
    mr_config: MRConfig = MRConfig()
    pass_overrides: tuple[dict, ...] = ()
    master_seed: int = 0

    def __post_init__(self):
        if self.num_passes < 1:
            raise ValueError("num_passes must be at least 1")
        if len(self.pass_overrides) > self.num_passes:
            raise ValueError("more per-pass overrides than passes")

    def config_for(self, k: int) -> TrainConfig:
        cfg = with_overrides(self.train_config, {"seed": self.master_seed})
        if k < len(self.pass_overrides):
            cfg = with_overrides(cfg, self.pass_overrides[k])
        return cfg


@dataclass
class PassArtifacts:
    pass_index: int
    input_dir: Path
    result: PassResult
    restored_dir: Path
    checkpoint_path: Path
    summary: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# restoration
# ---------------------------------------------------------------------------


def renormalize(restored: np.ndarray) -> np.ndarray:
    """Map apprentice outputs back onto the exact [-1, 1] input contract."""
    out, _ = normalize_segment(restored)
    return out


def restore_split(ar_params: models.Params, ar_cfg: ARConfig, data: SignalSet, batch_size: int = 64) -> SignalSet:
    """Replace each record's input by its re-normalised restoration.

    The stored ranges map the restoration back into the clean signal's raw
    amplitude scale, which is where evaluation measures SNR.
    """
    out = restore(data.corrupted, ar_params, ar_cfg, batch_size)
    raw = denormalize(out, data.clean_range)
    restored = data.with_corrupted(renormalize(out), channel_ranges(raw))
    raw_clean = denormalize(data.clean, data.clean_range)
    restored.achieved_snr = snr_db_batch(raw_clean, raw).astype(np.float32)
    return restored


def raw_snr(data: SignalSet) -> np.ndarray:
    """Per-record SNR of the stored input against the clean signal, raw scale."""
    return snr_db_batch(denormalize(data.clean, data.clean_range), denormalize(data.corrupted, data.corrupted_range))


def _sha256_bytes(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def restore_dataset(checkpoint, in_dir, out_dir, splits=None, batch_size: int = 64) -> dict:
    """Restore every split of the dataset at ``in_dir`` into ``out_dir``.

    ``checkpoint`` is a path or a loaded :class:`Checkpoint`. Returns the
    written manifest, whose ``provenance`` links back to the input dataset
    and the checkpoint.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    if isinstance(checkpoint, Checkpoint):
        ckpt, ckpt_path, ckpt_sha = checkpoint, None, None
    else:
        ckpt_path = Path(checkpoint)
        ckpt, ckpt_sha = load_checkpoint(ckpt_path), _sha256_bytes(ckpt_path)
    ar_cfg = ARConfig.from_dict(ckpt.ar_config)
    ar = models.from_arrays(ckpt.ar_params)
    src = read_manifest(in_dir)
    splits = [s for s in SPLITS if s in src["splits"]] if splits is None else list(splits)
    entries = {}
    for split in splits:
        data = read_split(in_dir, split)
        if data.clean.shape[1:] != (ar_cfg.input_channels, ar_cfg.length):
            raise DatasetError(f"{split}: records of shape {data.clean.shape[1:]} do not fit the apprentice")
        entries[split] = write_split(out_dir, split, restore_split(ar, ar_cfg, data, batch_size))
    extra = {
        "provenance": {
            "input_dir": str(in_dir),
            "input_manifest_sha256": sha256_file(in_dir / "manifest.json"),
            "input_splits": {s: src["splits"][s]["sha256"] for s in splits},
            "checkpoint": str(ckpt_path) if ckpt_path else None,
            "checkpoint_sha256": ckpt_sha,
            "pass_index": ckpt.pass_index,
            "renormalized": True,
        },
    }
    for key in ("config", "master_seed", "choices"):
        if key in src:
            extra[key] = src[key]
    manifest = base_manifest(None, entries, extra)
    write_manifest(out_dir, manifest)
    return manifest


# ---------------------------------------------------------------------------
# chain
# ---------------------------------------------------------------------------


class InferenceChain:
    """Applies AR_0, ..., AR_{K-1} in order, re-normalising between passes."""

    def __init__(self, checkpoints: list[Checkpoint]):
        if not checkpoints:
            raise ValueError("empty chain")
        self.stages = [(ARConfig.from_dict(c.ar_config), models.from_arrays(c.ar_params)) for c in checkpoints]

    @classmethod
    def from_manifest(cls, path) -> "InferenceChain":
        path = Path(path)
        with open(path) as fh:
            chain = json.load(fh)
        ckpts = []
        for entry in chain["passes"]:
            ckpt_path = path.parent / entry["checkpoint"]
            if _sha256_bytes(ckpt_path) != entry["checkpoint_sha256"]:
                raise CheckpointError(f"{ckpt_path}: checksum does not match the chain manifest")
            ckpts.append(load_checkpoint(ckpt_path))
        return cls(ckpts)

    def __len__(self) -> int:
        return len(self.stages)

    def __call__(self, signals: np.ndarray, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(signals, dtype=np.float32)
        single = x.ndim == 2
        x = x[None] if single else x
        for cfg, params in self.stages:
            x = renormalize(restore(x, params, cfg, batch_size))
        return x[0] if single else x


def _summary_row(k: int, result: PassResult, restored_dir: Path) -> dict:
    row = {
        "pass": k,
        "best_epoch": result.best_checkpoint.epoch,
        "best_val_snr": result.best_val_snr,
    }
    for split in ("train", "val", "test"):
        path = restored_dir / f"{split}.bin"
        row[f"{split}_snr"] = float(np.mean(raw_snr(read_split(restored_dir, split)))) if path.exists() else float("nan")
    return row


def _write_chain(out_dir: Path, plan: PTLPlan, base_dir: Path, passes: list[dict], status: str) -> None:
    chain = {
        "num_passes": plan.num_passes,
        "master_seed": plan.master_seed,
        "base_dataset": str(base_dir),
        "base_manifest_sha256": sha256_file(base_dir / "manifest.json"),
        "ar_config": plan.ar_config.to_dict(),
        "mr_config": plan.mr_config.to_dict(),
        "choices": {
            "renormalize_between_passes": True,
            "val_test_advance_through_chain": True,
            "warm_start": "AR and MR from previous best checkpoint",
            "optimizer_state": "reset each pass",
        },
        "status": status,
        "passes": passes,
    }
    payload = json.dumps(chain, indent=2, sort_keys=True).encode() + b"\n"
    tmp = out_dir / "chain.json.partial"
    tmp.write_bytes(payload)
    tmp.replace(out_dir / "chain.json")
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for p in passes:
            w.writerow([p["summary"][c] for c in SUMMARY_COLUMNS])


def run_ptl(plan: PTLPlan, base_dir, out_dir, splits=None) -> list[PassArtifacts]:
    """Run ``plan.num_passes`` chained passes starting from ``base_dir``.

    A failing pass stops the chain; everything finished before it stays on
    disk and the chain manifest records the failure.
    """
    base_dir, out_dir = Path(base_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: list[PassArtifacts] = []
    passes: list[dict] = []
    inputs = base_dir
    init = None
    for k in range(plan.num_passes):
        pass_dir = out_dir / f"pass_{k}"
        try:
            train = read_split(inputs, "train")
            val = read_split(inputs, "val")
            result = train_corenet(
                train, val, plan.config_for(k), plan.ar_config, plan.mr_config,
                init=init, pass_index=k, run_dir=pass_dir / "run",
            )
            ckpt_path = pass_dir / "run" / "best.ckpt"
            restored_dir = pass_dir / "restored"
            manifest = restore_dataset(ckpt_path, inputs, restored_dir, splits)
        except BaseException as exc:
            _write_chain(out_dir, plan, base_dir, passes, f"failed at pass {k}: {type(exc).__name__}: {exc}")
            raise
        summary = _summary_row(k, result, restored_dir)
        passes.append(
            {
                "pass_index": k,
                "input_dir": str(inputs),
                "input_manifest_sha256": sha256_file(inputs / "manifest.json"),
                "initial_params_sha256": result.initial_sha256,
                "checkpoint": str(ckpt_path.relative_to(out_dir)),
                "checkpoint_sha256": result.files["best.ckpt"],
                "restored_dir": str(restored_dir.relative_to(out_dir)),
                "restored_manifest_sha256": sha256_file(restored_dir / "manifest.json"),
                "restored_splits": {s: e["sha256"] for s, e in manifest["splits"].items()},
                "summary": summary,
            }
        )
        _write_chain(out_dir, plan, base_dir, passes, "complete" if k == plan.num_passes - 1 else "running")
        artifacts.append(PassArtifacts(k, inputs, result, restored_dir, ckpt_path, summary))
        log.info("pass %d done: best val %.3f dB at epoch %d", k, result.best_val_snr, result.best_checkpoint.epoch)
        best = result.best_checkpoint
        init = (best.ar_params, best.mr_params)
        inputs = restored_dir
    return artifacts
