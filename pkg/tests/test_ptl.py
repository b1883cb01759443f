import csv
import json

import numpy as np
import pytest

from corenet import models, ptl
from corenet.checkpoint import load_checkpoint
from corenet.dataset import DatasetConfig, DatasetError, build_dataset, read_manifest, read_split, sha256_file
from corenet.models import ARConfig, MRConfig
from corenet.ptl import InferenceChain, PTLPlan, raw_snr, restore_dataset, run_ptl
from corenet.training import TrainConfig, params_sha256, train_corenet, validate

AR, MR = ARConfig.uniform(4), MRConfig.uniform(4)
TRAIN = TrainConfig(max_epochs=2, batch_size=8, eval_batch_size=8)


@pytest.fixture(scope="module")
def base(tmp_path_factory):
    d = tmp_path_factory.mktemp("base")
    cfg = DatasetConfig(train=24, val=8, test_per_cell=1, test_snr_grid=(-4.0, 6.0), master_seed=8)
    build_dataset(cfg, d)
    return d


@pytest.fixture(scope="module")
def chain_run(base, tmp_path_factory):
    out = tmp_path_factory.mktemp("ptl")
    plan = PTLPlan(2, TRAIN, AR, MR, master_seed=4)
    return out, run_ptl(plan, base, out)


def test_plan_validation():
    with pytest.raises(ValueError):
        PTLPlan(0, TRAIN)
    with pytest.raises(ValueError):
        PTLPlan(1, TRAIN, pass_overrides=({}, {}))
    plan = PTLPlan(2, TRAIN, master_seed=9, pass_overrides=({"lr_ar": 1e-3},))
    assert plan.config_for(0).lr_ar == 1e-3 and plan.config_for(1).lr_ar == TRAIN.lr_ar
    assert plan.config_for(1).seed == 9


def test_restored_datasets_preserve_records(base, chain_run):
    out, arts = chain_run
    for art in arts:
        for split in ("train", "val", "test"):
            src = read_split(art.input_dir, split)
            dst = read_split(art.restored_dir, split)
            assert len(src) == len(dst)
            assert np.array_equal(src.tags, dst.tags)
            assert np.array_equal(src.clean, dst.clean)
            assert np.array_equal(src.clean_range, dst.clean_range)
            assert np.all(dst.corrupted.min(axis=2) == -1) and np.all(dst.corrupted.max(axis=2) == 1)
            np.testing.assert_allclose(dst.achieved_snr, raw_snr(dst), atol=1e-4)


def test_single_pass_equals_train(base, tmp_path):
    arts = run_ptl(PTLPlan(1, TRAIN, AR, MR, master_seed=4), base, tmp_path / "ptl")
    direct = train_corenet(
        read_split(base, "train"), read_split(base, "val"), TrainConfig.from_dict({**TRAIN.to_dict(), "seed": 4}),
        AR, MR, run_dir=tmp_path / "train",
    )
    for name in ("best.ckpt", "last.ckpt", "epoch_log.csv"):
        assert (tmp_path / "ptl" / "pass_0" / "run" / name).read_bytes() == (tmp_path / "train" / name).read_bytes()
    assert arts[0].result.best_val_snr == direct.best_val_snr


def test_chain_manifest_links(base, chain_run):
    out, arts = chain_run
    chain = json.loads((out / "chain.json").read_text())
    assert chain["status"] == "complete" and len(chain["passes"]) == 2
    assert chain["base_manifest_sha256"] == sha256_file(base / "manifest.json")
    p0, p1 = chain["passes"]
    for p in chain["passes"]:
        assert sha256_file(out / p["checkpoint"]) == p["checkpoint_sha256"]
        restored = out / p["restored_dir"]
        prov = read_manifest(restored)["provenance"]
        assert prov["checkpoint_sha256"] == p["checkpoint_sha256"]
        assert prov["pass_index"] == p["pass_index"]
        assert sha256_file(restored / "manifest.json") == p["restored_manifest_sha256"]
    assert p1["input_manifest_sha256"] == p0["restored_manifest_sha256"]
    assert read_manifest(out / p1["restored_dir"])["provenance"]["input_splits"] == p0["restored_splits"]


def test_warm_start_bit_exact(chain_run):
    _, (a0, a1) = chain_run
    best = a0.result.best_checkpoint
    assert a1.result.initial_sha256 == params_sha256(best.ar_params, best.mr_params)
    assert load_checkpoint(a0.checkpoint_path).ar_params.keys() == best.ar_params.keys()
    # epoch-0 validation of pass 1 is the loaded apprentice on the restored val split
    val1 = read_split(a1.input_dir, "val")
    assert a1.result.epoch_log[0].val_snr == validate(models.from_arrays(best.ar_params), AR, val1, 8)


def test_inference_chain_matches_serialized(base, chain_run):
    out, arts = chain_run
    chain = InferenceChain.from_manifest(out / "chain.json")
    assert len(chain) == 2
    test0 = read_split(base, "test")
    final = read_split(arts[-1].restored_dir, "test")
    assert np.array_equal(chain(test0.corrupted, batch_size=8), final.corrupted)
    # record by record
    for i in (0, 5, len(test0) - 1):
        assert np.array_equal(chain(test0.corrupted[i]), final.corrupted[i])


def test_chain_rejects_tampered_checkpoint(chain_run, tmp_path):
    out, _ = chain_run
    chain = json.loads((out / "chain.json").read_text())
    chain["passes"][0]["checkpoint_sha256"] = "0" * 64
    path = out / "tampered.json"
    path.write_text(json.dumps(chain))
    try:
        with pytest.raises(ValueError, match="checksum"):
            InferenceChain.from_manifest(path)
    finally:
        path.unlink()


def test_summary_table(chain_run):
    out, arts = chain_run
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["pass"]) for r in rows] == [0, 1]
    for row, art in zip(rows, arts):
        assert float(row["best_val_snr"]) == art.result.best_val_snr
        test = read_split(art.restored_dir, "test")
        assert float(row["test_snr"]) == pytest.approx(float(np.mean(raw_snr(test))), abs=1e-12)


def test_failure_preserves_completed_passes(base, tmp_path, monkeypatch):
    real = ptl.train_corenet

    def flaky(*args, **kw):
        if kw.get("pass_index") == 1:
            raise RuntimeError("boom")
        return real(*args, **kw)

    monkeypatch.setattr(ptl, "train_corenet", flaky)
    with pytest.raises(RuntimeError, match="boom"):
        run_ptl(PTLPlan(3, TRAIN, AR, MR), base, tmp_path)
    chain = json.loads((tmp_path / "chain.json").read_text())
    assert chain["status"].startswith("failed at pass 1")
    assert len(chain["passes"]) == 1
    assert load_checkpoint(tmp_path / "pass_0" / "run" / "best.ckpt").pass_index == 0
    assert read_manifest(tmp_path / "pass_0" / "restored")["total"] > 0


def test_restore_shape_mismatch(base, chain_run, tmp_path):
    _, arts = chain_run
    ckpt = load_checkpoint(arts[0].checkpoint_path)
    ckpt.ar_config = ARConfig.uniform(4, length=512).to_dict()
    with pytest.raises(DatasetError, match="do not fit"):
        restore_dataset(ckpt, base, tmp_path / "x", splits=["val"])
