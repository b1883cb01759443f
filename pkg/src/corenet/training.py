"""One cooperative training pass: Adam, cosine-restart schedule, validation.

Each mini-batch performs exactly one apprentice update (master frozen, in
evaluation mode) followed by one master update on the detached restoration
from the first step.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import models
from .autodiff import NonFiniteError, Tensor, debug_mode, kernels, no_grad
from .checkpoint import Checkpoint, save_checkpoint
from .dataset import SignalSet
from .metrics import LossWeights, SpectrogramConfig, loss_apprentice, loss_master, snr_db_batch, y_res_batch
from .models import ARConfig, MRConfig

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "L_A", "L_fid", "L_time", "L_freq", "L_M", "val_snr", "mr_val_mse")


class NumericalAbort(RuntimeError):
    """Training hit a non-finite value; ``snapshot`` says where."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 1000
    batch_size: int = 64
    lr_ar: float = 5e-3
    lr_mr: float = 5e-3
    t_max: int = 100
    loss_weights: LossWeights = LossWeights()
    spectrogram: SpectrogramConfig = SpectrogramConfig()
    seed: int = 0
    eval_batch_size: int = 64
    debug: bool = False
    toy_scale: float | None = None

    def __post_init__(self):
        for name in ("max_epochs", "batch_size", "t_max", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not (self.lr_ar > 0 and self.lr_mr > 0):
            raise ValueError("learning rates must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("loss_weights"), dict):
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        if isinstance(d.get("spectrogram"), dict):
            d["spectrogram"] = SpectrogramConfig(**d["spectrogram"])
        return cls(**d)


# ---------------------------------------------------------------------------
# optimiser and schedule
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: models.Params, **kw) -> "OptimizerState":
        return cls(
            {k: np.zeros_like(p.data) for k, p in params.items()},
            {k: np.zeros_like(p.data) for k, p in params.items()},
            **kw,
        )


def adam_step(params: models.Params, grads: dict[str, np.ndarray], state: OptimizerState, lr: float) -> OptimizerState:
    """Bias-corrected Adam update applied in place; missing grads count as zero."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data = p.data - step.astype(p.dtype)
    return state


def cosine_lr(t: float, lr0: float, t_max: int, lr_min: float = 0.0) -> float:
    """Cosine annealing that restarts every ``t_max`` iterations."""
    if t < 0:
        raise ValueError("iteration must be non-negative")
    phase = math.fmod(t, t_max)
    return lr_min + 0.5 * (lr0 - lr_min) * (1 + math.cos(math.pi * phase / t_max))


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

# spawn-key tags so the independent streams never collide
_INIT_AR, _INIT_MR, _SHUFFLE, _DROPOUT = 1, 2, 3, 4


def stream(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


def init_seed(master_seed: int, which: str) -> int:
    tag = _INIT_AR if which == "ar" else _INIT_MR
    return int(np.random.SeedSequence(master_seed, spawn_key=(tag,)).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------


def frozen(params: models.Params) -> models.Params:
    """Views of ``params`` that never collect gradients."""
    return {k: Tensor(p.data) for k, p in params.items()}


def restore(corrupted: np.ndarray, ar_params: models.Params, ar_cfg: ARConfig, batch_size: int = 64) -> np.ndarray:
    """Evaluation-mode apprentice outputs for ``[N, 2, L]`` inputs."""
    dtype = next(iter(ar_params.values())).dtype
    out = np.empty(corrupted.shape, dtype=dtype)
    with no_grad():
        for lo in range(0, len(corrupted), batch_size):
            out[lo : lo + batch_size] = models.ar_forward(corrupted[lo : lo + batch_size], ar_params, ar_cfg).data
    return out


def master_scores(r: np.ndarray, cand: np.ndarray, mr_params: models.Params, mr_cfg: MRConfig, batch_size: int = 64) -> np.ndarray:
    out = np.empty(len(r), dtype=np.float64)
    with no_grad():
        for lo in range(0, len(r), batch_size):
            sl = slice(lo, lo + batch_size)
            out[sl] = models.mr_forward(r[sl], cand[sl], mr_params, mr_cfg).data[:, 0]
    return out


def validate(ar_params: models.Params, ar_cfg: ARConfig, val: SignalSet, batch_size: int = 64) -> float:
    """Mean per-pair SNR (dB) of evaluation-mode restorations of ``val``."""
    if len(val) == 0:
        raise ValueError("validation split is empty")
    restored = restore(val.corrupted, ar_params, ar_cfg, batch_size)
    return float(np.mean(snr_db_batch(val.clean, restored)))


def master_val_mse(
    mr_params: models.Params,
    mr_cfg: MRConfig,
    val: SignalSet,
    restored: np.ndarray,
    psnr_target_db: float = 40.0,
    batch_size: int = 64,
) -> float:
    """Mean squared error of the master against its labels on both pair kinds."""
    on_clean = master_scores(val.corrupted, val.clean, mr_params, mr_cfg, batch_size)
    on_restored = master_scores(val.corrupted, restored, mr_params, mr_cfg, batch_size)
    labels = y_res_batch(val.clean, restored, psnr_target_db)
    return float(0.5 * (np.mean((on_clean - 1.0) ** 2) + np.mean((on_restored - labels) ** 2)))


# ---------------------------------------------------------------------------
# training pass
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    L_A: float
    L_fid: float
    L_time: float
    L_freq: float
    L_M: float
    val_snr: float
    mr_val_mse: float

    def row(self) -> list:
        return [getattr(self, c) for c in LOG_COLUMNS]


@dataclass
class PassResult:
    best_checkpoint: Checkpoint
    last_checkpoint: Checkpoint
    epoch_log: list[EpochRecord]
    pass_index: int
    initial_sha256: str
    baseline_val_snr: float
    elapsed_s: float = 0.0
    run_dir: Path | None = None
    files: dict[str, str] = field(default_factory=dict)

    @property
    def best_val_snr(self) -> float:
        return self.best_checkpoint.val_snr_db


def params_sha256(ar: dict[str, np.ndarray], mr: dict[str, np.ndarray]) -> str:
    """Digest of both parameter maps (names, shapes and float32 bytes)."""
    h = hashlib.sha256()
    for tag, group in (("ar", ar), ("mr", mr)):
        for name in sorted(group):
            arr = np.ascontiguousarray(getattr(group[name], "data", group[name]), dtype="<f4")
            h.update(f"{tag}/{name}{arr.shape}".encode())
            h.update(arr.tobytes())
    return h.hexdigest()


def _grads(params: models.Params) -> dict[str, np.ndarray]:
    return {k: p.grad for k, p in params.items() if p.grad is not None}


def _clear(params: models.Params) -> None:
    for p in params.values():
        p.zero_grad()


def _check_finite(values: dict[str, float], where: dict) -> None:
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise NumericalAbort(f"non-finite loss at {where}: {bad}", {**where, **values})


def train_corenet(
    train: SignalSet,
    val: SignalSet,
    config: TrainConfig,
    ar_cfg: ARConfig,
    mr_cfg: MRConfig,
    init: tuple[dict[str, np.ndarray], dict[str, np.ndarray]] | None = None,
    pass_index: int = 0,
    run_dir: Path | str | None = None,
    hooks=None,
) -> PassResult:
    """Run one cooperative pass and return the best-by-validation-SNR state.

    ``init`` is ``(ar_arrays, mr_arrays)``; when omitted both networks get a
    seeded Xavier initialisation. An epoch-0 validation of the initial
    parameters is logged and competes for best. ``hooks`` (optional) is
    called as ``hooks(stage, batch_index, ar_params, mr_params)`` with stage
    in {"before", "after_ar", "after_mr"}, for instrumentation.
    """
    if len(train) == 0:
        raise ValueError("training split is empty")
    if config.batch_size > len(train):
        raise ValueError(f"batch_size {config.batch_size} exceeds training-set size {len(train)}")
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    if init is None:
        ar = models.init_ar(ar_cfg, init_seed(config.seed, "ar"))
        mr = models.init_mr(mr_cfg, init_seed(config.seed, "mr"))
    else:
        ar = models.from_arrays(init[0])
        mr = models.from_arrays(init[1])
        ar_ref, mr_ref = set(models.ar_shapes(ar_cfg)), set(models.mr_shapes(mr_cfg))
        if set(ar) != ar_ref or set(mr) != mr_ref:
            raise ValueError("initial parameters do not match the model configs")
    initial_sha = params_sha256(ar, mr)
    opt_ar = OptimizerState.zeros_like(ar)
    opt_mr = OptimizerState.zeros_like(mr)
    weights = config.loss_weights
    eb = config.eval_batch_size
    baseline = float(np.mean(snr_db_batch(val.clean, val.corrupted)))

    def make_ckpt(epoch: int, val_snr: float) -> Checkpoint:
        return Checkpoint(
            ar_config=ar_cfg.to_dict(),
            mr_config=mr_cfg.to_dict(),
            ar_params=models.snapshot(ar),
            mr_params=models.snapshot(mr),
            pass_index=pass_index,
            epoch=epoch,
            val_snr_db=val_snr,
            master_seed=config.seed,
            optimizer={
                "ar_adam_m": {k: v.copy() for k, v in opt_ar.first_moment.items()},
                "ar_adam_v": {k: v.copy() for k, v in opt_ar.second_moment.items()},
                "mr_adam_m": {k: v.copy() for k, v in opt_mr.first_moment.items()},
                "mr_adam_v": {k: v.copy() for k, v in opt_mr.second_moment.items()},
            },
            optimizer_steps={"ar": opt_ar.step_count, "mr": opt_mr.step_count},
            meta={"train_config": _jsonable(config.to_dict())},
        )

    def evaluate(epoch: int) -> tuple[float, float]:
        restored = restore(val.corrupted, ar, ar_cfg, eb)
        val_snr = float(np.mean(snr_db_batch(val.clean, restored)))
        mse = master_val_mse(mr, mr_cfg, val, restored, weights.psnr_target_db, eb)
        if not (math.isfinite(val_snr) and math.isfinite(mse)):
            raise NumericalAbort(
                f"non-finite validation metric at epoch {epoch}",
                {"epoch": epoch, "val_snr": val_snr, "mr_val_mse": mse},
            )
        return val_snr, mse

    start = time.perf_counter()
    epoch_log: list[EpochRecord] = []
    writer = _LogWriter(run_dir / "epoch_log.csv") if run_dir is not None else None
    if run_dir is not None:
        _write_manifest(run_dir, config, ar_cfg, mr_cfg, pass_index, initial_sha, baseline)

    with debug_mode(True) if config.debug else nullcontext():
        val_snr, mse = evaluate(0)
        nan = float("nan")
        rec = EpochRecord(0, nan, nan, nan, nan, nan, val_snr, mse)
        epoch_log.append(rec)
        if writer:
            writer.write(rec)
        best = last = make_ckpt(0, val_snr)
        files: dict[str, str] = {}
        if run_dir is not None:
            # saved every epoch so an interrupted run leaves loadable state
            files["best.ckpt"] = save_checkpoint(run_dir / "best.ckpt", best)
            files["last.ckpt"] = save_checkpoint(run_dir / "last.ckpt", last)
        log.info("pass %d epoch 0: val %.3f dB (baseline %.3f dB)", pass_index, val_snr, baseline)

        iteration = 0
        n = len(train)
        for epoch in range(1, config.max_epochs + 1):
            order = stream(config.seed, _SHUFFLE, pass_index, epoch).permutation(n)
            drop_rng = stream(config.seed, _DROPOUT, pass_index, epoch)
            sums = dict.fromkeys(("L_A", "L_fid", "L_time", "L_freq", "L_M"), 0.0)
            batches = 0
            for b, lo in enumerate(range(0, n, config.batch_size)):
                idx = np.sort(order[lo : lo + config.batch_size])
                r = train.corrupted[idx]
                s = train.clean[idx]
                where = {"pass": pass_index, "epoch": epoch, "batch": b}
                if hooks:
                    hooks("before", b, ar, mr)
                try:
                    # Step 1: apprentice update, master frozen
                    mr_fixed = frozen(mr)
                    _clear(ar)
                    restored = models.ar_forward(r, ar, ar_cfg, train=True, rng=drop_rng)
                    la = loss_apprentice(
                        r, s, restored, lambda x, c: models.mr_forward(x, c, mr_fixed, mr_cfg),
                        weights, config.spectrogram,
                    )
                    la_vals = la.values()
                    _check_finite(la_vals, where)
                    la.total.backward()
                    adam_step(ar, _grads(ar), opt_ar, cosine_lr(iteration, config.lr_ar, config.t_max))
                    if hooks:
                        hooks("after_ar", b, ar, mr)

                    # Step 2: master update on the detached restoration
                    _clear(ar)
                    _clear(mr)
                    lm = loss_master(
                        r, s, restored.data,
                        lambda x, c: models.mr_forward(x, c, mr, mr_cfg, train=True, rng=drop_rng),
                        weights.psnr_target_db,
                    )
                    lm_val = lm.item()
                    _check_finite({"L_M": lm_val}, where)
                    lm.backward()
                    adam_step(mr, _grads(mr), opt_mr, cosine_lr(iteration, config.lr_mr, config.t_max))
                    if hooks:
                        hooks("after_mr", b, ar, mr)
                except NonFiniteError as exc:
                    raise NumericalAbort(f"non-finite activation at {where}: {exc}", where) from exc
                _clear(ar)
                _clear(mr)
                for k, v in la_vals.items():
                    sums[k] += v
                sums["L_M"] += lm_val
                batches += 1
                iteration += 1

            val_snr, mse = evaluate(epoch)
            means = {k: v / batches for k, v in sums.items()}
            rec = EpochRecord(epoch, **means, val_snr=val_snr, mr_val_mse=mse)
            epoch_log.append(rec)
            if writer:
                writer.write(rec)
            last = make_ckpt(epoch, val_snr)
            if val_snr > best.val_snr_db:
                best = last
                if run_dir is not None:
                    files["best.ckpt"] = save_checkpoint(run_dir / "best.ckpt", best)
            if run_dir is not None:
                files["last.ckpt"] = save_checkpoint(run_dir / "last.ckpt", last)
            log.info(
                "pass %d epoch %d: L_A %.4f L_M %.4f val %.3f dB mr_mse %.4f",
                pass_index, epoch, means["L_A"], means["L_M"], val_snr, mse,
            )

    result = PassResult(
        best_checkpoint=best,
        last_checkpoint=last,
        epoch_log=epoch_log,
        pass_index=pass_index,
        initial_sha256=initial_sha,
        baseline_val_snr=baseline,
        elapsed_s=time.perf_counter() - start,
        run_dir=run_dir,
        files=files,
    )
    return result


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


class _LogWriter:
    def __init__(self, path: Path):
        self.path = path
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOG_COLUMNS)

    def write(self, rec: EpochRecord) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(v) for v in rec.row()])


def _fmt(v) -> str:
    return str(v) if isinstance(v, int) else repr(float(v))


def read_epoch_log(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochRecord(int(r["epoch"]), *(float(r[c]) for c in LOG_COLUMNS[1:])) for r in rows]


def _write_manifest(run_dir, config, ar_cfg, mr_cfg, pass_index, initial_sha, baseline) -> None:
    manifest = {
        "train_config": _jsonable(config.to_dict()),
        "ar_config": ar_cfg.to_dict(),
        "mr_config": mr_cfg.to_dict(),
        "ar_params": models.ar_param_count(ar_cfg),
        "mr_params": models.mr_param_count(mr_cfg),
        "pass_index": pass_index,
        "initial_params_sha256": initial_sha,
        "baseline_val_snr_db": baseline,
        "choices": {
            "scheduler": "cosine, stepped per iteration, restarts every t_max, lr_min=0",
            "spectrogram": "complex STFT of i+jq, periodic Hann",
            "master_mode_in_apprentice_step": "eval",
            "validation_domain": "normalised",
            "epoch0_validation_competes": True,
        },
        "kernel_backend": kernels.get_backend(),
    }
    with open(run_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def with_overrides(config: TrainConfig, overrides: dict | None) -> TrainConfig:
    if not overrides:
        return config
    merged = config.to_dict()
    merged.update(overrides)
    return TrainConfig.from_dict(merged)


__all__ = [
    "EpochRecord",
    "LOG_COLUMNS",
    "NumericalAbort",
    "OptimizerState",
    "PassResult",
    "TrainConfig",
    "adam_step",
    "cosine_lr",
    "master_scores",
    "master_val_mse",
    "params_sha256",
    "read_epoch_log",
    "restore",
    "train_corenet",
    "validate",
    "with_overrides",
]
