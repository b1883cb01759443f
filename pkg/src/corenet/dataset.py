"""Paired clean/corrupted dataset synthesis and its on-disk format.

A dataset directory holds, per split ``name``:

``name.bin``
    little-endian packed records: ``u32`` modulation tag, ``f32`` target
    SNR, ``f32`` achieved SNR, ``1024x2 f32`` clean (sample-major, I/Q
    interleaved) and ``1024x2 f32`` corrupted.
``name.norm.bin``
    ``f64 [N, 2, 2, 2]``: for (clean, corrupted) x (I, Q) the raw
    ``(min, max)`` undone by normalisation. Lets evaluation measure SNR in
    the raw amplitude domain.

plus ``manifest.json`` with counts, split offsets, seeds and format version.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .corruption import ARTIFACT_SUBSETS, SNR_RANGE, Artifact, make_pair, sample_recipe
from .waveforms import MODULATIONS, SEGMENT_LENGTH, Modulation, random_spec

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
_SPLIT_ID = {name: i for i, name in enumerate(SPLITS)}

RECORD_DTYPE = np.dtype(
    [
        ("tag", "<u4"),
        ("target_snr", "<f4"),
        ("achieved_snr", "<f4"),
        ("clean", "<f4", (SEGMENT_LENGTH, 2)),
        ("corrupted", "<f4", (SEGMENT_LENGTH, 2)),
    ]
)
NORM_DTYPE = np.dtype("<f8")

FULL_TRAIN = 49_920
FULL_VAL = 12_480
FULL_TEST_PER_CELL = 150
MIN_TEST_PER_CELL = 10
TEST_SNR_GRID = tuple(float(v) for v in range(-14, 11, 2))


class DatasetError(Exception):
    """Malformed or inconsistent dataset files."""


@dataclass
class SignalSet:
    """In-memory split: ``clean``/``corrupted`` are ``[N, 2, L]`` float32."""

    tags: np.ndarray
    target_snr: np.ndarray
    achieved_snr: np.ndarray
    clean: np.ndarray
    corrupted: np.ndarray
    clean_range: np.ndarray  # [N, 2, 2]
    corrupted_range: np.ndarray  # [N, 2, 2]

    def __len__(self) -> int:
        return len(self.tags)

    def subset(self, index) -> "SignalSet":
        return SignalSet(*(getattr(self, f)[index] for f in self.__dataclass_fields__))

    def with_corrupted(self, corrupted: np.ndarray, corrupted_range: np.ndarray) -> "SignalSet":
        return replace(self, corrupted=corrupted, corrupted_range=corrupted_range)


@dataclass
class DatasetConfig:
    train: int = FULL_TRAIN
    val: int = FULL_VAL
    test_per_cell: int = FULL_TEST_PER_CELL
    snr_range: tuple[float, float] = SNR_RANGE
    test_snr_grid: tuple[float, ...] = TEST_SNR_GRID
    subsets: tuple[tuple[str, ...], ...] = field(
        default_factory=lambda: tuple(tuple(sorted(a.value for a in s)) for s in ARTIFACT_SUBSETS)
    )
    modulations: tuple[str, ...] = tuple(m.value for m in MODULATIONS)
    master_seed: int = 0

    @classmethod
    def scaled(cls, scale: float, **overrides) -> "DatasetConfig":
        """Full-size counts multiplied by ``scale`` (test cells keep >= 10)."""
        if not scale > 0:
            raise ValueError("scale must be positive")
        total = round((FULL_TRAIN + FULL_VAL) * scale)
        train = round(total * 0.8)
        cfg = cls(
            train=train,
            val=total - train,
            test_per_cell=max(MIN_TEST_PER_CELL, round(FULL_TEST_PER_CELL * scale)),
        )
        return replace(cfg, **overrides)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        if "snr_range" in d:
            d["snr_range"] = tuple(d["snr_range"])
        if "test_snr_grid" in d:
            d["test_snr_grid"] = tuple(float(v) for v in d["test_snr_grid"])
        if "subsets" in d:
            d["subsets"] = tuple(tuple(s) for s in d["subsets"])
        if "modulations" in d:
            d["modulations"] = tuple(d["modulations"])
        return cls(**d)

    def validate(self) -> None:
        if self.train < 1 or self.val < 1 or self.test_per_cell < 0:
            raise ValueError("split sizes must be positive")
        lo, hi = self.snr_range
        if not lo <= hi:
            raise ValueError("snr_range must be ordered")
        for s in self.subsets:
            if not s:
                raise ValueError("empty artifact subset")
            for a in s:
                Artifact(a)
        for m in self.modulations:
            Modulation(m)

    def split_count(self, split: str) -> int:
        if split == "test":
            return len(self.modulations) * len(self.test_snr_grid) * self.test_per_cell
        return getattr(self, split)


# ---------------------------------------------------------------------------
# record generation
# ---------------------------------------------------------------------------


def record_seeds(master_seed: int, split: str, index: int) -> tuple[int, int]:
    """Independent (waveform, recipe) seeds for one record."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(_SPLIT_ID[split], int(index)))
    wave_seed, recipe_seed = (int(v) for v in ss.generate_state(2, dtype=np.uint64))
    return wave_seed, recipe_seed


def _record_plan(cfg: DatasetConfig, split: str, index: int) -> tuple[Modulation, float | None]:
    mods = [Modulation(m) for m in cfg.modulations]
    if split != "test":
        return mods[index % len(mods)], None
    per_mod = len(cfg.test_snr_grid) * cfg.test_per_cell
    mod = mods[index // per_mod]
    level = cfg.test_snr_grid[(index % per_mod) // cfg.test_per_cell]
    return mod, level


def generate_record(cfg: DatasetConfig, split: str, index: int):
    mod, level = _record_plan(cfg, split, index)
    wave_seed, recipe_seed = record_seeds(cfg.master_seed, split, index)
    spec = random_spec(mod, wave_seed)
    subsets = tuple(frozenset(Artifact(a) for a in s) for s in cfg.subsets)
    recipe = sample_recipe(recipe_seed, level, cfg.snr_range, subsets, exclude_seed=wave_seed)
    return make_pair(spec, recipe)


def _generate_chunk(args) -> tuple[np.ndarray, np.ndarray]:
    cfg, split, start, stop = args
    recs = np.zeros(stop - start, dtype=RECORD_DTYPE)
    norms = np.zeros((stop - start, 2, 2, 2), dtype=NORM_DTYPE)
    for j, index in enumerate(range(start, stop)):
        pair = generate_record(cfg, split, index)
        recs[j]["tag"] = pair.modulation.tag
        recs[j]["target_snr"] = pair.recipe.target_snr_db
        recs[j]["achieved_snr"] = pair.achieved_snr_db
        recs[j]["clean"] = pair.clean.T
        recs[j]["corrupted"] = pair.corrupted.T
        norms[j, 0] = pair.clean_range
        norms[j, 1] = pair.corrupted_range
    return recs, norms


def generate_split(cfg: DatasetConfig, split: str, workers: int = 1, chunk: int = 512) -> SignalSet:
    """Synthesize one split in memory; the result does not depend on ``workers``."""
    n = cfg.split_count(split)
    jobs = [(cfg, split, s, min(s + chunk, n)) for s in range(0, n, chunk)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_generate_chunk, jobs))
    else:
        parts = [_generate_chunk(j) for j in jobs]
    if parts:
        recs = np.concatenate([p[0] for p in parts])
        norms = np.concatenate([p[1] for p in parts])
    else:
        recs = np.zeros(0, dtype=RECORD_DTYPE)
        norms = np.zeros((0, 2, 2, 2), dtype=NORM_DTYPE)
    return _from_records(recs, norms)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def _to_records(data: SignalSet) -> tuple[np.ndarray, np.ndarray]:
    n = len(data)
    recs = np.zeros(n, dtype=RECORD_DTYPE)
    recs["tag"] = data.tags
    recs["target_snr"] = data.target_snr
    recs["achieved_snr"] = data.achieved_snr
    recs["clean"] = np.asarray(data.clean, dtype=np.float32).transpose(0, 2, 1)
    recs["corrupted"] = np.asarray(data.corrupted, dtype=np.float32).transpose(0, 2, 1)
    norms = np.stack([data.clean_range, data.corrupted_range], axis=1).astype(NORM_DTYPE)
    return recs, norms


def _from_records(recs: np.ndarray, norms: np.ndarray) -> SignalSet:
    return SignalSet(
        tags=recs["tag"].astype(np.uint32),
        target_snr=recs["target_snr"].astype(np.float32),
        achieved_snr=recs["achieved_snr"].astype(np.float32),
        clean=np.ascontiguousarray(recs["clean"].transpose(0, 2, 1)),
        corrupted=np.ascontiguousarray(recs["corrupted"].transpose(0, 2, 1)),
        clean_range=np.ascontiguousarray(norms[:, 0]),
        corrupted_range=np.ascontiguousarray(norms[:, 1]),
    )


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".partial")
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_split(directory: Path, split: str, data: SignalSet) -> dict:
    """Write ``split.bin`` and ``split.norm.bin``; returns the manifest entry."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    recs, norms = _to_records(data)
    _atomic_write(directory / f"{split}.bin", recs.tobytes())
    _atomic_write(directory / f"{split}.norm.bin", norms.tobytes())
    return {
        "count": len(data),
        "file": f"{split}.bin",
        "norm_file": f"{split}.norm.bin",
        "sha256": sha256_file(directory / f"{split}.bin"),
    }


def read_split(directory: Path, split: str) -> SignalSet:
    directory = Path(directory)
    path = directory / f"{split}.bin"
    norm_path = directory / f"{split}.norm.bin"
    size = path.stat().st_size
    if size % RECORD_DTYPE.itemsize:
        raise DatasetError(f"{path}: size {size} is not a multiple of {RECORD_DTYPE.itemsize}")
    recs = np.fromfile(path, dtype=RECORD_DTYPE)
    norms = np.fromfile(norm_path, dtype=NORM_DTYPE)
    if norms.size != len(recs) * 8:
        raise DatasetError(f"{norm_path}: expected {len(recs) * 8} values, found {norms.size}")
    return _from_records(recs, norms.reshape(-1, 2, 2, 2))


def read_manifest(directory: Path) -> dict:
    with open(Path(directory) / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format {manifest.get('format_version')}")
    return manifest


def write_manifest(directory: Path, manifest: dict) -> None:
    payload = json.dumps(manifest, indent=2, sort_keys=True).encode() + b"\n"
    _atomic_write(Path(directory) / "manifest.json", payload)


def base_manifest(cfg: DatasetConfig | None, splits: dict[str, dict], extra: dict | None = None) -> dict:
    offsets, pos = {}, 0
    for name in SPLITS:
        if name in splits:
            offsets[name] = [pos, pos + splits[name]["count"]]
            pos += splits[name]["count"]
    manifest = {
        "format_version": FORMAT_VERSION,
        "record_layout": "u32 tag, f32 target_snr, f32 achieved_snr, f32[1024][2] clean, f32[1024][2] corrupted",
        "norm_layout": "f64[N][2 (clean, corrupted)][2 (I, Q)][2 (min, max)]",
        "modulation_tags": {m.value: m.tag for m in MODULATIONS},
        "splits": splits,
        "split_boundaries": offsets,
        "total": pos,
    }
    if cfg is not None:
        manifest["config"] = asdict(cfg)
        manifest["master_seed"] = cfg.master_seed
        manifest["choices"] = {
            "weight_distribution": "uniform(0.1, 1.0)",
            "subset_selection": "uniform over configured subsets",
            "echo_delay": "uniform integer [32, 512], zero-padded",
            "interference": "fresh waveform from the 12-family generator",
        }
    if extra:
        manifest.update(extra)
    return manifest


def build_dataset(cfg: DatasetConfig, out_dir: Path, splits=SPLITS, workers: int = 1) -> dict:
    """Synthesize the requested splits into ``out_dir``; returns the manifest."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    written: list[Path] = []
    try:
        for split in splits:
            data = generate_split(cfg, split, workers=workers)
            entries[split] = write_split(out_dir, split, data)
            written += [out_dir / f"{split}.bin", out_dir / f"{split}.norm.bin"]
        manifest = base_manifest(cfg, entries)
        write_manifest(out_dir, manifest)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return manifest
