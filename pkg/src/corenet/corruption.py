"""Composite artifact model: AWGN, echo and interference at an exact SNR."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .metrics import snr_db
from .waveforms import MODULATIONS, Modulation, WaveformSpec, generate_waveform, random_spec

SNR_RANGE = (-14.0, 10.0)
ECHO_DELAY_RANGE = (32, 512)
WEIGHT_RANGE = (0.1, 1.0)


class Artifact(str, enum.Enum):
    AWGN = "AWGN"
    ECHO = "ECHO"
    INTERFERENCE = "INTERFERENCE"


ARTIFACT_SUBSETS: tuple[frozenset[Artifact], ...] = tuple(
    frozenset(c) for r in (1, 2, 3) for c in itertools.combinations(tuple(Artifact), r)
)


class RecipeError(ValueError):
    """A corruption recipe that cannot produce a disturbance."""


@dataclass(frozen=True)
class CorruptionRecipe:
    active_set: frozenset[Artifact]
    w1: float
    w2: float
    w3: float
    echo_delay: int | None
    interference_spec: WaveformSpec | None
    target_snr_db: float
    rng_seed: int

    def validate(self) -> None:
        if not self.active_set:
            raise RecipeError("active_set is empty")
        for art, w in zip(Artifact, (self.w1, self.w2, self.w3)):
            if w < 0:
                raise RecipeError(f"negative weight for {art.value}")
            if (art in self.active_set) != (w > 0):
                raise RecipeError(f"weight for {art.value} inconsistent with active_set")
        if (Artifact.ECHO in self.active_set) != (self.echo_delay is not None):
            raise RecipeError("echo_delay must be set exactly when ECHO is active")
        if (Artifact.INTERFERENCE in self.active_set) != (self.interference_spec is not None):
            raise RecipeError("interference_spec must be set exactly when INTERFERENCE is active")


@dataclass
class CorruptedPair:
    clean: np.ndarray  # [2, N] float32, normalised
    corrupted: np.ndarray  # [2, N] float32, normalised
    recipe: CorruptionRecipe
    achieved_snr_db: float
    modulation: Modulation | None
    clean_range: np.ndarray  # [2, 2] per-channel (min, max) before normalisation
    corrupted_range: np.ndarray
    degenerate: np.ndarray  # [2, 2] bool, (clean, corrupted) x channel


def sample_recipe(
    rng_seed: int,
    target_snr_db: float | None = None,
    snr_range: tuple[float, float] = SNR_RANGE,
    subsets: tuple[frozenset[Artifact], ...] = ARTIFACT_SUBSETS,
    exclude_seed: int | None = None,
) -> CorruptionRecipe:
    """Random artifact blend; the subset is uniform over ``subsets``.

    A fixed ``target_snr_db`` (test grid) overrides the uniform SNR draw.
    ``exclude_seed`` is the clean waveform's seed, never reused for the
    interferer.
    """
    rng = np.random.default_rng(rng_seed)
    active = subsets[int(rng.integers(len(subsets)))]
    w = rng.uniform(*WEIGHT_RANGE, size=3)
    w1, w2, w3 = (float(w[i]) if art in active else 0.0 for i, art in enumerate(Artifact))
    delay = int(rng.integers(ECHO_DELAY_RANGE[0], ECHO_DELAY_RANGE[1] + 1))
    inter_mod = MODULATIONS[int(rng.integers(len(MODULATIONS)))]
    inter_seed = int(rng.integers(0, 2**63))
    if inter_seed == exclude_seed:
        inter_seed += 1
    snr = float(rng.uniform(*snr_range)) if target_snr_db is None else float(target_snr_db)
    return CorruptionRecipe(
        active_set=active,
        w1=w1,
        w2=w2,
        w3=w3,
        echo_delay=delay if Artifact.ECHO in active else None,
        interference_spec=random_spec(inter_mod, inter_seed) if Artifact.INTERFERENCE in active else None,
        target_snr_db=snr,
        rng_seed=int(rng_seed),
    )


def delayed(x: np.ndarray, tau: int) -> np.ndarray:
    """Non-circular delay: the first ``tau`` samples are zero."""
    out = np.zeros_like(x)
    if tau < x.shape[-1]:
        out[..., tau:] = x[..., : x.shape[-1] - tau]
    return out


def disturbance(clean: np.ndarray, recipe: CorruptionRecipe) -> np.ndarray:
    """Unscaled aggregate ``w1*n + w2*s(t - tau) + w3*i`` as ``[2, N]`` float64."""
    recipe.validate()
    clean = np.asarray(clean, dtype=np.float64)
    d = np.zeros_like(clean)
    if recipe.w1 > 0:
        noise_rng = np.random.default_rng([recipe.rng_seed, 1])
        d += recipe.w1 * noise_rng.standard_normal(clean.shape) / np.sqrt(2.0)
    if recipe.w2 > 0:
        d += recipe.w2 * delayed(clean, recipe.echo_delay)
    if recipe.w3 > 0:
        d += recipe.w3 * generate_waveform(recipe.interference_spec, clean.shape[-1])
    return d


def corrupt(clean: np.ndarray, recipe: CorruptionRecipe) -> tuple[np.ndarray, float]:
    """Raw corrupted signal scaled to the recipe's SNR, plus the scale used."""
    clean = np.asarray(clean, dtype=np.float64)
    d = disturbance(clean, recipe)
    p_d = float(np.sum(d * d))
    if p_d == 0:
        raise RecipeError("disturbance has zero power")
    p_s = float(np.sum(clean * clean))
    alpha = np.sqrt(p_s / (p_d * 10 ** (recipe.target_snr_db / 10)))
    return clean + alpha * d, float(alpha)


def channel_ranges(x: np.ndarray) -> np.ndarray:
    """Per-channel ``(min, max)`` as a ``[C, 2]`` float64 array."""
    x = np.asarray(x, dtype=np.float64)
    return np.stack([x.min(axis=-1), x.max(axis=-1)], axis=-1)


def normalize_segment(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map each channel affinely onto [-1, 1].

    Returns ``(normalised float32, degenerate flags per channel)``; constant
    channels become zeros and are flagged.
    """
    x64 = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x64)):
        raise ValueError("cannot normalise a non-finite segment")
    lo = x64.min(axis=-1, keepdims=True)
    hi = x64.max(axis=-1, keepdims=True)
    span = hi - lo
    degenerate = span[..., 0] == 0
    safe = np.where(span == 0, 1.0, span)
    out = 2 * (x64 - lo) / safe - 1
    out = np.where(span == 0, 0.0, out)
    return out.astype(np.float32), degenerate


def denormalize(xn: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    """Invert :func:`normalize_segment` given the original channel ranges."""
    xn = np.asarray(xn, dtype=np.float64)
    lo = ranges[..., 0:1]
    hi = ranges[..., 1:2]
    return (xn + 1) / 2 * (hi - lo) + lo


def compose_corruption(
    clean: np.ndarray, recipe: CorruptionRecipe, modulation: Modulation | None = None
) -> CorruptedPair:
    """Corrupt ``clean`` at the recipe's SNR and normalise both signals."""
    clean = np.asarray(clean, dtype=np.float64)
    raw, _ = corrupt(clean, recipe)
    achieved = snr_db(clean, raw)
    clean_n, clean_deg = normalize_segment(clean)
    corr_n, corr_deg = normalize_segment(raw)
    return CorruptedPair(
        clean=clean_n,
        corrupted=corr_n,
        recipe=recipe,
        achieved_snr_db=achieved,
        modulation=modulation,
        clean_range=channel_ranges(clean),
        corrupted_range=channel_ranges(raw),
        degenerate=np.stack([clean_deg, corr_deg]),
    )


def make_pair(spec: WaveformSpec, recipe: CorruptionRecipe) -> CorruptedPair:
    if recipe.interference_spec is not None and recipe.interference_spec.seed == spec.seed:
        raise RecipeError("interference must not reuse the clean waveform's seed")
    return compose_corruption(generate_waveform(spec), recipe, Modulation(spec.modulation))
