"""Signal-quality metrics and the two cooperative training losses.

Plain-numpy metrics (``mse``, ``psnr``, ``snr_db``, ``spectrogram``,
``y_res``) are used for evaluation and labels; the ``*_t`` variants and the
losses build differentiable graphs on :class:`~corenet.autodiff.Tensor`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, ops

MSE_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    epsilon: float = 1.0
    beta: float = 10.0
    phi: float = 1.0
    psnr_target_db: float = 40.0

    def __post_init__(self):
        for name in ("epsilon", "beta", "phi", "psnr_target_db"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class SpectrogramConfig:
    window_length: int = 64
    hop: int = 16

    def __post_init__(self):
        if not 1 <= self.window_length <= 1024:
            raise ValueError("window_length must be in [1, 1024]")
        if not 1 <= self.hop <= self.window_length:
            raise ValueError("hop must be in [1, window_length]")

    def window(self) -> np.ndarray:
        # periodic Hann
        n = np.arange(self.window_length)
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / self.window_length)

    def frames(self, length: int) -> int:
        return (length - self.window_length) // self.hop + 1


# ---------------------------------------------------------------------------
# numpy metrics
# ---------------------------------------------------------------------------


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(clean, candidate) -> float:
    """Peak SNR in dB with the peak taken as the clean signal's maximum."""
    clean = np.asarray(clean, dtype=np.float64)
    err = max(mse(clean, candidate), MSE_FLOOR)
    return float(10 * np.log10(np.max(clean) ** 2 / err))


def snr_db(clean, candidate) -> float:
    """``10 log10(sum s^2 / sum (s - s_hat)^2)`` over all samples and channels."""
    clean = np.asarray(clean, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    if clean.shape != candidate.shape:
        raise ValueError(f"shape mismatch: {clean.shape} vs {candidate.shape}")
    err = max(float(np.sum((clean - candidate) ** 2)), MSE_FLOOR)
    return float(10 * np.log10(np.sum(clean**2) / err))


def snr_db_batch(clean: np.ndarray, candidate: np.ndarray) -> np.ndarray:
    """Per-item :func:`snr_db` over a leading batch axis."""
    clean = np.asarray(clean, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    if clean.shape != candidate.shape:
        raise ValueError(f"shape mismatch: {clean.shape} vs {candidate.shape}")
    axes = tuple(range(1, clean.ndim))
    err = np.maximum(np.sum((clean - candidate) ** 2, axis=axes), MSE_FLOOR)
    return 10 * np.log10(np.sum(clean**2, axis=axes) / err)


def psnr_batch(clean: np.ndarray, candidate: np.ndarray) -> np.ndarray:
    clean = np.asarray(clean, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    axes = tuple(range(1, clean.ndim))
    err = np.maximum(np.mean((clean - candidate) ** 2, axis=axes), MSE_FLOOR)
    peak = np.max(clean, axis=axes)
    return 10 * np.log10(peak**2 / err)


def spectrogram(x, cfg: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """Magnitude STFT grid ``[frames, bins]`` of the complex signal ``i + jq``.

    Accepts a single ``[2, L]`` signal or a ``[B, 2, L]`` batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    batch = x[None] if single else x
    out = ops.stft_magnitude(Tensor(batch), cfg.window(), cfg.hop).data
    return out[0] if single else out


def y_res(clean, restored, psnr_target_db: float = 40.0) -> float:
    """Normalised PSNR label of a restoration, clamped to [0, 1]."""
    if not psnr_target_db > 0:
        raise ValueError("psnr_target_db must be positive")
    return float(np.clip(psnr(clean, restored) / psnr_target_db, 0.0, 1.0))


def y_res_batch(clean: np.ndarray, restored: np.ndarray, psnr_target_db: float = 40.0) -> np.ndarray:
    return np.clip(psnr_batch(clean, restored) / psnr_target_db, 0.0, 1.0)


# ---------------------------------------------------------------------------
# differentiable pieces
# ---------------------------------------------------------------------------


def psnr_t(pred: Tensor, ref: np.ndarray) -> Tensor:
    """Per-item PSNR ``[B]`` of ``pred`` against the constant reference ``ref``."""
    ref = np.asarray(ref, dtype=pred.dtype)
    axes = tuple(range(1, pred.ndim))
    err = ops.mean(ops.power(ops.sub(pred, ref), 2), axis=axes)
    err = ops.clamp_min(err, MSE_FLOOR)
    peak_db = 10 * np.log10(np.max(ref, axis=axes).astype(np.float64) ** 2).astype(pred.dtype)
    return ops.sub(Tensor(peak_db), ops.mul(ops.log10(err), 10.0))


def spectrogram_t(x: Tensor, cfg: SpectrogramConfig = SpectrogramConfig()) -> Tensor:
    return ops.stft_magnitude(x, cfg.window(), cfg.hop)


def time_loss(restored: Tensor, clean: np.ndarray) -> Tensor:
    return ops.neg(ops.mean(psnr_t(restored, clean)))


def freq_loss(restored: Tensor, clean: np.ndarray, cfg: SpectrogramConfig = SpectrogramConfig()) -> Tensor:
    clean_spec = spectrogram(clean, cfg).astype(restored.dtype)
    return ops.neg(ops.mean(psnr_t(spectrogram_t(restored, cfg), clean_spec)))


def mse_t(pred: Tensor, target) -> Tensor:
    return ops.mean(ops.power(ops.sub(pred, target), 2))


MasterFn = Callable[[Tensor, Tensor], Tensor]


@dataclass
class ApprenticeLoss:
    total: Tensor
    fid: Tensor
    time: Tensor
    freq: Tensor

    def values(self) -> dict[str, float]:
        return {
            "L_A": self.total.item(),
            "L_fid": self.fid.item(),
            "L_time": self.time.item(),
            "L_freq": self.freq.item(),
        }


def loss_apprentice(
    corrupted: np.ndarray | Tensor,
    clean: np.ndarray,
    restored: Tensor,
    master: MasterFn,
    weights: LossWeights = LossWeights(),
    spec_cfg: SpectrogramConfig = SpectrogramConfig(),
) -> ApprenticeLoss:
    """Fidelity + time-domain + frequency-domain loss for the apprentice.

    ``master(r, candidate)`` must return ``[B, 1]`` scores; the caller is
    responsible for freezing the master's parameters.
    """
    r = corrupted if isinstance(corrupted, Tensor) else Tensor(np.asarray(corrupted, dtype=restored.dtype))
    fid = mse_t(master(r, restored), 1.0)
    l_time = time_loss(restored, clean)
    l_freq = freq_loss(restored, clean, spec_cfg)
    total = ops.add(
        ops.add(ops.mul(fid, weights.epsilon), ops.mul(l_time, weights.beta)),
        ops.mul(l_freq, weights.phi),
    )
    return ApprenticeLoss(total, fid, l_time, l_freq)


def loss_master(
    corrupted: np.ndarray | Tensor,
    clean: np.ndarray,
    restored: np.ndarray,
    master: MasterFn,
    psnr_target_db: float = 40.0,
) -> Tensor:
    """Half the sum of the clean-pair and restored-pair regression errors.

    ``restored`` is treated as a constant.
    """
    clean = np.asarray(clean)
    restored = np.asarray(restored.data if isinstance(restored, Tensor) else restored)
    dtype = restored.dtype
    r = corrupted if isinstance(corrupted, Tensor) else Tensor(np.asarray(corrupted, dtype=dtype))
    labels = y_res_batch(clean, restored, psnr_target_db).astype(dtype)[:, None]
    clean_term = mse_t(master(r, Tensor(clean.astype(dtype))), 1.0)
    res_term = mse_t(master(r, Tensor(restored)), labels)
    return ops.mul(ops.add(clean_term, res_term), 0.5)
