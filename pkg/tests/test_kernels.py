import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corenet.autodiff import kernels


def brute_conv(x, w, stride, padding):
    batch, _, length = x.shape
    outs, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    out_len = (length + 2 * padding - k) // stride + 1
    y = np.zeros((batch, outs, out_len))
    for b in range(batch):
        for o in range(outs):
            for t in range(out_len):
                y[b, o, t] = np.sum(xp[b, :, t * stride : t * stride + k] * w[o])
    return y


@pytest.fixture(scope="module", params=kernels.available_backends())
def backend(request):
    previous = kernels.get_backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(previous)


shapes = st.tuples(
    st.integers(1, 3),  # batch
    st.integers(1, 4),  # in channels
    st.integers(1, 4),  # out channels
    st.integers(1, 5),  # kernel
    st.integers(1, 3),  # stride
    st.integers(0, 3),  # padding
    st.integers(1, 24),  # length
    st.integers(0, 2**31),
)


@settings(max_examples=60, deadline=None)
@given(shapes)
def test_forward_matches_brute_force(backend, case):
    b, c, o, k, s, p, length, seed = case
    if length + 2 * p < k:
        return
    r = np.random.default_rng(seed)
    x = r.standard_normal((b, c, length))
    w = r.standard_normal((o, c, k))
    np.testing.assert_allclose(kernels.conv1d_forward(x, w, s, p), brute_conv(x, w, s, p), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(shapes)
def test_gradients_are_adjoints(backend, case):
    # <g, conv(x, w)> = <grad_input(g), x> = <grad_weight(g), w>
    b, c, o, k, s, p, length, seed = case
    if length + 2 * p < k:
        return
    r = np.random.default_rng(seed)
    x = r.standard_normal((b, c, length))
    w = r.standard_normal((o, c, k))
    y = kernels.conv1d_forward(x, w, s, p)
    g = r.standard_normal(y.shape)
    lhs = np.sum(g * y)
    gi = kernels.conv1d_grad_input(g, w, s, p, length)
    gw = kernels.conv1d_grad_weight(g, x, k, s, p)
    assert gi.shape == x.shape and gw.shape == w.shape
    assert np.sum(gi * x) == pytest.approx(lhs, rel=1e-10, abs=1e-10)
    assert np.sum(gw * w) == pytest.approx(lhs, rel=1e-10, abs=1e-10)


def test_backends_agree_in_float32(rng):
    if len(kernels.available_backends()) < 2:
        pytest.skip("numba unavailable")
    x = rng.standard_normal((4, 6, 64)).astype(np.float32)
    w = rng.standard_normal((5, 6, 3)).astype(np.float32)
    g = rng.standard_normal((4, 5, 32)).astype(np.float32)
    results = {}
    previous = kernels.get_backend()
    try:
        for name in kernels.available_backends():
            kernels.set_backend(name)
            results[name] = (
                kernels.conv1d_forward(x, w, 2, 1),
                kernels.conv1d_grad_input(g, w, 2, 1, 64),
                kernels.conv1d_grad_weight(g, x, 3, 2, 1),
            )
    finally:
        kernels.set_backend(previous)
    for a, b in zip(results["numpy"], results["numba"]):
        assert a.dtype == b.dtype == np.float32
        np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-5)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")


def test_env_flag_selects_backend(monkeypatch):
    monkeypatch.setenv("CORENET_BACKEND", "numpy")
    assert kernels._default_backend() == "numpy"
    monkeypatch.setenv("CORENET_BACKEND", "bogus")
    with pytest.warns(UserWarning):
        assert kernels._default_backend() == "numpy"


def test_output_length_formula():
    assert kernels.conv_output_length(1024, 3, 2, 1) == 512
    assert kernels.conv_output_length(7, 3, 1, 0) == 5
