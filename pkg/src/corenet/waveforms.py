"""Clean LPI radar waveform segments for twelve modulation families.

Every waveform is a unit-modulus complex exponential of length
``SEGMENT_LENGTH`` returned as a ``[2, N]`` array of I and Q channels.
Frequencies are normalised (cycles per sample).

Phase laws (``n`` is the sample index, ``f0`` the carrier):

* LFM: ``2*pi*(f0*n + B*n**2/(2N))``
* Costas: frequency hops ``f0 + h_k*df`` over equal dwells, phase-continuous
* BPSK: carrier plus a Barker code (0 or pi per chip)
* Frank, P1, P2, P3, P4: carrier plus the standard polyphase code of
  length ``M**2``, one code element per chip
* T1-T4: carrier plus Fielding's polytime phase laws quantised to
  ``phase_states`` levels
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

import numpy as np

SEGMENT_LENGTH = 1024


class Modulation(str, enum.Enum):
    LFM = "LFM"
    COSTAS = "Costas"
    BPSK = "BPSK"
    FRANK = "Frank"
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    P4 = "P4"
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"

    @property
    def tag(self) -> int:
        return list(Modulation).index(self)

    @classmethod
    def from_tag(cls, tag: int) -> "Modulation":
        return list(cls)[int(tag)]


MODULATIONS = tuple(Modulation)

BARKER_CODES = {
    7: (1, 1, 1, -1, -1, 1, -1),
    11: (1, 1, 1, -1, -1, -1, 1, -1, -1, 1, -1),
    13: (1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1),
}

# sampling ranges used by random_spec
LFM_BANDWIDTH = (0.05, 0.4)
COSTAS_HOPS = (4, 5, 6, 7, 8)
POLYPHASE_M = (4, 6, 8)
POLYTIME_STATES = (2, 3, 4, 5, 6)
POLYTIME_SEGMENTS = (2, 3, 4, 5, 6)
POLYTIME_BANDWIDTH = (0.05, 0.3)
CARRIER_RANGE = (0.05, 0.45)


class WaveformError(ValueError):
    """Invalid waveform parameters."""


@dataclass(frozen=True)
class WaveformSpec:
    modulation: Modulation
    start_freq: float
    bandwidth: float = 0.0
    hop_sequence: tuple[int, ...] = ()
    hop_spacing: float = 0.0
    code_length: int = 0
    phase_states: int = 0
    segments: int = 0
    seed: int = 0

    def validate(self) -> None:
        m = Modulation(self.modulation)
        if not 0 < self.start_freq < 0.5:
            raise WaveformError(f"start_freq {self.start_freq} outside (0, 0.5)")
        if m is Modulation.LFM:
            if self.bandwidth < 0 or self.start_freq + self.bandwidth >= 0.5:
                raise WaveformError("LFM sweep leaves (0, 0.5)")
        elif m is Modulation.COSTAS:
            if len(self.hop_sequence) == 0:
                raise WaveformError("Costas sequence is empty")
            if sorted(self.hop_sequence) != list(range(len(self.hop_sequence))):
                raise WaveformError("Costas hop sequence is not a permutation of 0..M-1")
            if not is_costas(self.hop_sequence):
                raise WaveformError("hop sequence violates the Costas property")
            top = self.start_freq + (len(self.hop_sequence) - 1) * self.hop_spacing
            if self.hop_spacing <= 0 or top >= 0.5:
                raise WaveformError("Costas hops leave (0, 0.5)")
        elif m is Modulation.BPSK:
            if self.code_length not in BARKER_CODES:
                raise WaveformError(f"no Barker code of length {self.code_length}")
        elif m in (Modulation.FRANK, Modulation.P1, Modulation.P2, Modulation.P3, Modulation.P4):
            root = int(round(np.sqrt(self.code_length)))
            if self.code_length < 4 or root * root != self.code_length:
                raise WaveformError("polyphase code length must be a square M**2 >= 4")
            if m is Modulation.P2 and root % 2:
                raise WaveformError("P2 needs an even M")
        else:
            if self.phase_states < 2:
                raise WaveformError("polytime codes need at least 2 phase states")
            if m in (Modulation.T1, Modulation.T2) and self.segments < 2:
                raise WaveformError("T1/T2 need at least 2 segments")
            if m in (Modulation.T3, Modulation.T4):
                if self.bandwidth <= 0:
                    raise WaveformError("T3/T4 need a positive bandwidth")
                if self.start_freq + self.bandwidth >= 0.5 and m is Modulation.T3:
                    raise WaveformError("T3 sweep leaves (0, 0.5)")
                if m is Modulation.T4 and not (
                    self.start_freq - self.bandwidth / 2 > 0 and self.start_freq + self.bandwidth / 2 < 0.5
                ):
                    raise WaveformError("T4 sweep leaves (0, 0.5)")

    def frequency_band(self) -> tuple[float, float]:
        """Declared instantaneous-frequency band for within-chip samples."""
        m = Modulation(self.modulation)
        f0 = self.start_freq
        if m is Modulation.LFM:
            return f0, f0 + self.bandwidth
        if m is Modulation.COSTAS:
            return f0, f0 + (len(self.hop_sequence) - 1) * self.hop_spacing
        if m is Modulation.T3:
            return f0, f0 + self.bandwidth
        if m is Modulation.T4:
            return f0 - self.bandwidth / 2, f0 + self.bandwidth / 2
        return f0, f0


# ---------------------------------------------------------------------------
# codes
# ---------------------------------------------------------------------------


def is_costas(perm) -> bool:
    """Distinct-difference test: every displacement vector appears once."""
    n = len(perm)
    for shift in range(1, n):
        diffs = [perm[i + shift] - perm[i] for i in range(n - shift)]
        if len(set(diffs)) != len(diffs):
            return False
    return True


@functools.lru_cache(maxsize=None)
def costas_arrays(order: int) -> tuple[tuple[int, ...], ...]:
    """All Costas permutations of ``0..order-1`` by backtracking."""
    if order < 1:
        raise WaveformError("Costas order must be positive")
    found: list[tuple[int, ...]] = []
    perm: list[int] = []
    used = [False] * order

    def extend():
        if len(perm) == order:
            found.append(tuple(perm))
            return
        for v in range(order):
            if used[v]:
                continue
            j = len(perm)
            ok = True
            for i in range(j):
                d = v - perm[i]
                shift = j - i
                # same displacement already seen at this shift?
                for a in range(j - shift):
                    if perm[a + shift] - perm[a] == d:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                used[v] = True
                perm.append(v)
                extend()
                perm.pop()
                used[v] = False

    extend()
    return tuple(found)


def frank_phases(m: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    return (2 * np.pi / m * i * j).ravel()


def p1_phases(m: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(1, m + 1), np.arange(1, m + 1), indexing="ij")
    return (-np.pi / m * (m - (2 * j - 1)) * ((j - 1) * m + (i - 1))).ravel()


def p2_phases(m: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(1, m + 1), np.arange(1, m + 1), indexing="ij")
    return ((np.pi / 2 * (m - 1) / m - np.pi / m * (i - 1)) * (m + 1 - 2 * j)).ravel()


def p3_phases(length: int) -> np.ndarray:
    i = np.arange(length)
    return np.pi * i**2 / length


def p4_phases(length: int) -> np.ndarray:
    i = np.arange(length)
    return np.pi * i**2 / length - np.pi * i


def _chip_index(n_chips: int, length: int = SEGMENT_LENGTH) -> np.ndarray:
    return (np.arange(length) * n_chips) // length


def polytime_phase(spec: WaveformSpec, length: int = SEGMENT_LENGTH) -> np.ndarray:
    """Quantised T1-T4 phase law (without the carrier)."""
    m = Modulation(spec.modulation)
    n_states = spec.phase_states
    t = np.arange(length, dtype=np.float64)
    total = float(length)
    step = 2 * np.pi / n_states
    if m in (Modulation.T1, Modulation.T2):
        k = spec.segments
        j = np.floor(k * t / total)
        if m is Modulation.T1:
            raw = (k * t - j * total) * j * n_states / total
        else:
            raw = (k * t - j * total) * (2 * j - k + 1) / total * n_states / 2
    else:
        df = spec.bandwidth
        if m is Modulation.T3:
            raw = n_states * df * t**2 / (2 * total)
        else:
            raw = n_states * df * t**2 / (2 * total) - n_states * df * t / 2
    return np.mod(step * np.floor(raw), 2 * np.pi)


def phase_law(spec: WaveformSpec, length: int = SEGMENT_LENGTH) -> np.ndarray:
    """Unwrapped sample phase (radians) of the waveform."""
    spec.validate()
    m = Modulation(spec.modulation)
    n = np.arange(length, dtype=np.float64)
    f0 = spec.start_freq
    carrier = 2 * np.pi * f0 * n
    if m is Modulation.LFM:
        return 2 * np.pi * (f0 * n + spec.bandwidth * n**2 / (2 * length))
    if m is Modulation.COSTAS:
        hops = np.asarray(spec.hop_sequence)
        freq = f0 + hops[_chip_index(len(hops), length)] * spec.hop_spacing
        # phase-continuous: phi[n] = 2*pi * sum_{k<n} f[k]
        return 2 * np.pi * np.concatenate([[0.0], np.cumsum(freq)[:-1]])
    if m is Modulation.BPSK:
        code = np.asarray(BARKER_CODES[spec.code_length])
        chips = code[_chip_index(len(code), length)]
        return carrier + np.where(chips < 0, np.pi, 0.0)
    if m in (Modulation.FRANK, Modulation.P1, Modulation.P2, Modulation.P3, Modulation.P4):
        root = int(round(np.sqrt(spec.code_length)))
        table = {
            Modulation.FRANK: lambda: frank_phases(root),
            Modulation.P1: lambda: p1_phases(root),
            Modulation.P2: lambda: p2_phases(root),
            Modulation.P3: lambda: p3_phases(spec.code_length),
            Modulation.P4: lambda: p4_phases(spec.code_length),
        }[m]()
        return carrier + table[_chip_index(spec.code_length, length)]
    return carrier + polytime_phase(spec, length)


def generate_waveform(spec: WaveformSpec, length: int = SEGMENT_LENGTH) -> np.ndarray:
    """Unit-amplitude ``[2, length]`` float64 I/Q waveform for ``spec``."""
    phase = phase_law(spec, length)
    return np.stack([np.cos(phase), np.sin(phase)])


# ---------------------------------------------------------------------------
# random parameter draws
# ---------------------------------------------------------------------------


def random_spec(modulation: Modulation | str, rng_seed: int) -> WaveformSpec:
    """Draw a valid spec of the given family; deterministic in ``rng_seed``."""
    m = Modulation(modulation)
    rng = np.random.default_rng(rng_seed)
    lo, hi = CARRIER_RANGE
    if m is Modulation.LFM:
        bw = rng.uniform(*LFM_BANDWIDTH)
        f0 = rng.uniform(0.01, 0.49 - bw)
        spec = WaveformSpec(m, f0, bandwidth=bw, seed=rng_seed)
    elif m is Modulation.COSTAS:
        order = int(rng.choice(COSTAS_HOPS))
        arrays = costas_arrays(order)
        hops = arrays[int(rng.integers(len(arrays)))]
        spacing = rng.uniform(0.02, 0.06)
        f0 = rng.uniform(0.02, 0.49 - (order - 1) * spacing)
        spec = WaveformSpec(m, f0, hop_sequence=hops, hop_spacing=spacing, seed=rng_seed)
    elif m is Modulation.BPSK:
        length = int(rng.choice(sorted(BARKER_CODES)))
        spec = WaveformSpec(m, rng.uniform(lo, hi), code_length=length, seed=rng_seed)
    elif m in (Modulation.FRANK, Modulation.P1, Modulation.P2, Modulation.P3, Modulation.P4):
        root = int(rng.choice(POLYPHASE_M))
        spec = WaveformSpec(m, rng.uniform(lo, hi), code_length=root * root, seed=rng_seed)
    else:
        states = int(rng.choice(POLYTIME_STATES))
        segments = int(rng.choice(POLYTIME_SEGMENTS))
        bw = rng.uniform(*POLYTIME_BANDWIDTH) if m in (Modulation.T3, Modulation.T4) else 0.0
        if m is Modulation.T3:
            f0 = rng.uniform(0.02, 0.48 - bw)
        elif m is Modulation.T4:
            f0 = rng.uniform(0.02 + bw / 2, 0.48 - bw / 2)
        else:
            f0 = rng.uniform(lo, hi)
        spec = WaveformSpec(
            m, f0, bandwidth=bw, phase_states=states, segments=segments, seed=rng_seed
        )
    spec.validate()
    return spec


def instantaneous_frequency(signal: np.ndarray) -> np.ndarray:
    """Discrete instantaneous frequency (cycles/sample) from sample phase steps."""
    z = signal[0] + 1j * signal[1]
    return np.angle(z[1:] * np.conj(z[:-1])) / (2 * np.pi)
