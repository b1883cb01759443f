import csv
import json
from collections import defaultdict

import numpy as np
import pytest

from corenet.checkpoint import load_checkpoint
from corenet.cli import main
from corenet.dataset import read_manifest, read_split, write_split
from corenet.evaluation import EvalError, evaluate, read_csv
from corenet.metrics import MSE_FLOOR
from corenet.models import ARConfig
from corenet.training import validate
from corenet import models

SMALL = {
    "dataset": {"train": 24, "val": 8, "test_per_cell": 2, "test_snr_grid": [-10.0, 0.0, 8.0], "master_seed": 3},
    "ar": {"encoder_widths": [4] * 5},
    "mr": {"widths": [4] * 6},
    "train": {"max_epochs": 2, "batch_size": 8, "eval_batch_size": 8, "seed": 6},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root, cfg


def independent_record_snr(directory, split):
    """Re-derive per-record SNR straight from the byte layout."""
    dtype = np.dtype([("tag", "<u4"), ("target", "<f4"), ("achieved", "<f4"),
                      ("clean", "<f4", (1024, 2)), ("corrupted", "<f4", (1024, 2))])
    recs = np.fromfile(directory / f"{split}.bin", dtype=dtype)
    norms = np.fromfile(directory / f"{split}.norm.bin", dtype="<f8").reshape(-1, 2, 2, 2)
    out = []
    for rec, nm in zip(recs, norms):
        raw = []
        for which, field in enumerate(("clean", "corrupted")):
            x = rec[field].astype(np.float64).T
            lo, hi = nm[which, :, 0:1], nm[which, :, 1:2]
            raw.append((x + 1) / 2 * (hi - lo) + lo)
        err = max(float(np.sum((raw[0] - raw[1]) ** 2)), MSE_FLOOR)
        out.append(10 * np.log10(np.sum(raw[0] ** 2) / err))
    return recs["tag"], recs["target"], np.array(out)


def test_toy_synth_counts_and_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--toy-scale", "0.01", "--seed", "2", "--out", str(a)]) == 0
    m = read_manifest(a)
    assert m["splits"]["train"]["count"] + m["splits"]["val"]["count"] == 624
    assert m["splits"]["test"]["count"] == 1560
    assert m["master_seed"] == 2
    assert main(["synth", "--toy-scale", "0.01", "--seed", "2", "--workers", "2", "--out", str(b)]) == 0
    for name in ("train.bin", "val.bin", "test.bin", "test.norm.bin", "manifest.json", "synth_config.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_eval_corrupted_levels(workspace, tmp_path):
    root, _ = workspace
    assert main(["eval", "--restored", str(root / "data"), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "per_snr_level.csv")
    assert [float(r["snr_level_db"]) for r in rows] == [-10.0, 0.0, 8.0]
    for r in rows:
        assert abs(float(r["restored_snr_db"]) - float(r["snr_level_db"])) < 1e-3
    cells = read_csv(tmp_path / "cells.csv")
    assert len(cells) == 36 and {int(c["count"]) for c in cells} == {2}
    assert sum(int(c["count"]) for c in cells) == read_manifest(root / "data")["splits"]["test"]["count"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["improvement_db"] == 0.0
    assert (tmp_path / "per_snr_level.csv").read_text().startswith("# corenet-eval/1")


def test_clean_vs_clean_ceiling(workspace):
    root, _ = workspace
    ref = read_split(root / "data", "test")
    clean = ref.with_corrupted(ref.clean, ref.clean_range)
    report = evaluate(clean, ref)
    raw = (ref.clean.astype(np.float64) + 1) / 2 * (ref.clean_range[..., 1:2] - ref.clean_range[..., 0:1]) + ref.clean_range[..., 0:1]
    ceiling = 10 * np.log10(np.sum(raw**2, axis=(1, 2)) / MSE_FLOOR)
    np.testing.assert_allclose(report.record_snr, ceiling, rtol=1e-12)
    assert all(v > 100 for v in report.per_snr_level.values())


def test_eval_matches_independent_recomputation(workspace, tmp_path):
    root, cfg = workspace
    restored = tmp_path / "restored"
    assert main(["restore", "--checkpoint", str(root / "run" / "best.ckpt"), "--data", str(root / "data"),
                 "--out", str(restored)]) == 0
    assert main(["eval", "--restored", str(restored), "--reference", str(root / "data"),
                 "--out", str(tmp_path / "report")]) == 0
    tags, target, snr = independent_record_snr(restored, "test")
    _, _, base = independent_record_snr(root / "data", "test")
    by_level, by_mod = defaultdict(list), defaultdict(list)
    for t, lv, s, b in zip(tags, target, snr, base):
        by_level[float(lv)].append(s)
        by_mod[int(t)].append(s - b)
    for r in read_csv(tmp_path / "report" / "per_snr_level.csv"):
        assert abs(float(r["restored_snr_db"]) - np.mean(by_level[float(r["snr_level_db"])])) < 1e-6
    names = read_manifest(root / "data")["modulation_tags"]
    for r in read_csv(tmp_path / "report" / "per_modulation.csv"):
        assert abs(float(r["improvement_db"]) - np.mean(by_mod[names[r["modulation"]]])) < 1e-6
    summary = json.loads((tmp_path / "report" / "summary.json").read_text())
    assert abs(summary["overall_mean_snr_db"] - snr.mean()) < 1e-6
    assert summary["records"] == len(snr)


def test_restore_bounds_throughput_and_chain_of_one(workspace, tmp_path, capsys):
    root, _ = workspace
    assert main(["restore", "--checkpoint", str(root / "run" / "best.ckpt"), "--data", str(root / "data"),
                 "--out", str(tmp_path / "single")]) == 0
    line = capsys.readouterr().out
    assert "signals/s" in line and "ms/signal" in line and "parameters" in line
    ckpt_sha = read_manifest(tmp_path / "single")["provenance"]["checkpoint_sha256"]
    chain = {"passes": [{"checkpoint": "run/best.ckpt", "checkpoint_sha256": ckpt_sha}]}
    (root / "chain1.json").write_text(json.dumps(chain))
    assert main(["restore", "--checkpoint", str(root / "chain1.json"), "--data", str(root / "data"),
                 "--out", str(tmp_path / "chain")]) == 0
    for split in ("train", "val", "test"):
        a = read_split(tmp_path / "single", split)
        b = read_split(tmp_path / "chain", split)
        assert np.array_equal(a.corrupted, b.corrupted)
        assert np.abs(a.corrupted).max() <= 1


def test_train_reload_reproduces_best(workspace):
    root, _ = workspace
    best = load_checkpoint(root / "run" / "best.ckpt")
    val = read_split(root / "data", "val")
    assert validate(models.from_arrays(best.ar_params), ARConfig.from_dict(best.ar_config), val, 8) == best.val_snr_db
    snap = json.loads((root / "run" / "train_config.json").read_text())
    assert snap["train"]["max_epochs"] == 2 and snap["command"] == "train"


def test_ptl_single_pass_equals_train(workspace, tmp_path):
    root, cfg = workspace
    assert main(["ptl", "--config", str(cfg), "--data", str(root / "data"), "--passes", "1",
                 "--out", str(tmp_path)]) == 0
    for name in ("best.ckpt", "last.ckpt", "epoch_log.csv"):
        assert (tmp_path / "pass_0" / "run" / name).read_bytes() == (root / "run" / name).read_bytes()
    with open(tmp_path / "summary.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 1


def test_plot_is_deterministic(workspace, tmp_path):
    root, _ = workspace
    assert main(["eval", "--restored", str(root / "data"), "--out", str(tmp_path / "rep")]) == 0
    for name in ("a.svg", "b.svg"):
        assert main(["plot", "--input", str(tmp_path / "rep"), "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a.svg").read_text()
    assert a == (tmp_path / "b.svg").read_text()
    assert a.startswith("<svg") and "polyline" in a and "<rect" in a
    assert a == (tmp_path / "rep" / "report.svg").read_text()


def test_exit_codes(workspace, tmp_path):
    root, cfg = workspace
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{not json")
    assert main(["synth", "--config", str(bad_json), "--out", str(tmp_path / "x")]) == 2
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"train": {"learning_speed": 3}}))
    assert main(["train", "--config", str(unknown), "--data", str(root / "data"), "--out", str(tmp_path / "y")]) == 2
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "z")]) == 3
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes((root / "run" / "best.ckpt").read_bytes()[:100])
    assert main(["restore", "--checkpoint", str(broken), "--data", str(root / "data"), "--out", str(tmp_path / "w")]) == 3
    assert main(["eval", "--restored", str(root / "data"), "--split", "val",
                 "--reference", str(tmp_path / "nope"), "--out", str(tmp_path / "v")]) == 3

    # a dataset with a non-finite input aborts training with code 4
    nan_dir = tmp_path / "nan"
    for split in ("train", "val"):
        data = read_split(root / "data", split)
        corrupted = data.corrupted.copy()
        corrupted[0, 0, 0] = np.nan
        write_split(nan_dir, split, data.with_corrupted(corrupted, data.corrupted_range))
    (nan_dir / "manifest.json").write_text((root / "data" / "manifest.json").read_text())
    assert main(["train", "--config", str(cfg), "--data", str(nan_dir), "--out", str(tmp_path / "u")]) == 4


def test_eval_rejects_misaligned(workspace):
    root, _ = workspace
    ref = read_split(root / "data", "test")
    with pytest.raises(EvalError):
        evaluate(ref.subset(slice(0, 5)), ref)
    shuffled = ref.subset(np.roll(np.arange(len(ref)), 1))
    with pytest.raises(EvalError):
        evaluate(shuffled, ref)
