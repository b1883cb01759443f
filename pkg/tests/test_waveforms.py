import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corenet.waveforms import (
    BARKER_CODES,
    MODULATIONS,
    SEGMENT_LENGTH,
    Modulation,
    WaveformError,
    WaveformSpec,
    costas_arrays,
    generate_waveform,
    instantaneous_frequency,
    is_costas,
    phase_law,
    random_spec,
)


def unwrap_phase(sig):
    return np.unwrap(np.arctan2(sig[1], sig[0]))


def distinct_differences(perm):
    # brute force over all pairs: displacement vectors must be unique
    seen = set()
    for i, j in itertools.combinations(range(len(perm)), 2):
        vec = (j - i, perm[j] - perm[i])
        if vec in seen:
            return False
        seen.add(vec)
    return True


def test_zero_chirp_lfm_is_a_tone():
    f0 = 0.13
    sig = generate_waveform(WaveformSpec(Modulation.LFM, f0, bandwidth=0.0))
    n = np.arange(SEGMENT_LENGTH)
    np.testing.assert_allclose(sig[0], np.cos(2 * np.pi * f0 * n), atol=1e-9)
    np.testing.assert_allclose(sig[1], np.sin(2 * np.pi * f0 * n), atol=1e-9)


def test_barker13_flips_at_chip_boundaries():
    f0 = 0.1
    sig = generate_waveform(WaveformSpec(Modulation.BPSK, f0, code_length=13))
    n = np.arange(SEGMENT_LENGTH)
    # strip the carrier, then read each sample's residual phase
    residual = np.angle((sig[0] + 1j * sig[1]) * np.exp(-2j * np.pi * f0 * n))
    flipped = np.abs(residual) > np.pi / 2
    code = np.array(BARKER_CODES[13])
    chip = (n * 13) // SEGMENT_LENGTH
    np.testing.assert_array_equal(flipped, code[chip] < 0)
    jumps = np.flatnonzero(np.diff(flipped.astype(int)) != 0) + 1
    boundaries = [b for b in np.flatnonzero(np.diff(chip)) + 1 if code[chip[b]] != code[chip[b - 1]]]
    np.testing.assert_array_equal(jumps, boundaries)
    step = np.angle(np.exp(1j * (residual[jumps] - residual[jumps - 1])))
    np.testing.assert_allclose(np.abs(step), np.pi, atol=1e-9)


def test_frank_phase_table():
    m, f0 = 4, 0.2
    sig = generate_waveform(WaveformSpec(Modulation.FRANK, f0, code_length=m * m))
    n = np.arange(SEGMENT_LENGTH)
    residual = np.angle((sig[0] + 1j * sig[1]) * np.exp(-2j * np.pi * f0 * n))
    chip = (n * m * m) // SEGMENT_LENGTH
    i, j = chip // m, chip % m
    expected = 2 * np.pi * i * j / m
    diff = np.angle(np.exp(1j * (residual - expected)))
    assert np.abs(diff).max() < 1e-9


def test_costas_counts_and_property():
    # number of Costas arrays of order 1..8
    assert [len(costas_arrays(n)) for n in range(1, 9)] == [1, 2, 4, 12, 40, 116, 200, 444]
    for n in (4, 5, 6):
        brute = [p for p in itertools.permutations(range(n)) if distinct_differences(p)]
        assert sorted(brute) == sorted(costas_arrays(n))
    assert not is_costas((0, 1, 2))


def test_random_costas_specs_are_costas():
    for seed in range(300):
        spec = random_spec(Modulation.COSTAS, seed)
        assert distinct_differences(spec.hop_sequence)


def test_random_spec_is_deterministic():
    for m in MODULATIONS:
        assert random_spec(m, 77) == random_spec(m, 77)
        a = generate_waveform(random_spec(m, 77))
        assert np.array_equal(a, generate_waveform(random_spec(m, 77)))


def test_lfm_instantaneous_frequency_range():
    lo, hi = 1.0, 0.0
    for seed in range(10_000):
        spec = random_spec(Modulation.LFM, seed)
        f = instantaneous_frequency(generate_waveform(spec))
        lo, hi = min(lo, f.min()), max(hi, f.max())
    assert 0 < lo and hi < 0.5


@settings(max_examples=120, deadline=None)
@given(st.sampled_from(MODULATIONS), st.integers(0, 2**63 - 1))
def test_unit_magnitude(m, seed):
    sig = generate_waveform(random_spec(m, seed))
    assert sig.shape == (2, SEGMENT_LENGTH)
    assert np.abs(np.hypot(sig[0], sig[1]) - 1).max() < 1e-6


@settings(max_examples=120, deadline=None)
@given(st.sampled_from(MODULATIONS), st.integers(0, 2**63 - 1))
def test_instantaneous_frequency_in_declared_band(m, seed):
    spec = random_spec(m, seed)
    sig = generate_waveform(spec)
    f = instantaneous_frequency(sig)
    lo, hi = spec.frequency_band()
    # code-phase jumps are allowed to leave the band; nothing else is
    n = np.arange(SEGMENT_LENGTH)
    code_phase = phase_law(spec) - 2 * np.pi * spec.start_freq * n
    if m in (Modulation.LFM, Modulation.COSTAS, Modulation.T3, Modulation.T4):
        smooth = np.diff(code_phase) / (2 * np.pi) + spec.start_freq
        within = (smooth >= lo - 1e-9) & (smooth <= hi + 1e-9)
    else:
        within = np.abs(np.diff(code_phase)) < 1e-12
    if m in (Modulation.T3, Modulation.T4):
        # quantised sweeps step between phase states; compare only flat runs
        within = np.abs(np.diff(code_phase)) < 1e-12
        lo = hi = spec.start_freq
    outside = (f < lo - 1e-9) | (f > hi + 1e-9)
    assert not np.any(outside & within)


def test_invalid_specs_rejected():
    with pytest.raises(WaveformError):
        generate_waveform(WaveformSpec(Modulation.COSTAS, 0.1, hop_sequence=(), hop_spacing=0.02))
    with pytest.raises(WaveformError):
        generate_waveform(WaveformSpec(Modulation.COSTAS, 0.1, hop_sequence=(0, 1, 2), hop_spacing=0.02))
    with pytest.raises(WaveformError):
        generate_waveform(WaveformSpec(Modulation.BPSK, 0.1, code_length=9))
    with pytest.raises(WaveformError):
        generate_waveform(WaveformSpec(Modulation.P2, 0.1, code_length=9))
    with pytest.raises(WaveformError):
        generate_waveform(WaveformSpec(Modulation.LFM, 0.45, bandwidth=0.1))


def test_tags_round_trip():
    tags = {m.tag for m in MODULATIONS}
    assert len(tags) == 12
    for m in MODULATIONS:
        assert Modulation.from_tag(m.tag) is m
