import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from safdnet import numerics as nx
from safdnet.errors import GradCheckError, InvalidLengthError, ShapeError
from safdnet.training import bce_loss

from oracles import conv1d_same as naive_conv
from oracles import naive_dft, naive_idft

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_rfft_constant_signal():
    X = nx.rfft(np.full(8, 2.5))
    assert X[0] == pytest.approx(20.0)
    assert np.abs(X[1:]).max() < 1e-12


def test_rfft_single_tone():
    t = np.arange(16)
    X = nx.rfft(np.cos(2 * np.pi * 2 * t / 16))
    expected = np.zeros(9, dtype=complex)
    expected[2] = 8.0
    assert np.abs(X - expected).max() < 1e-9


@pytest.mark.parametrize("T", [2, 3, 8, 50, 51])
def test_rfft_matches_naive_dft(T, rng):
    x = rng.standard_normal(T)
    assert np.abs(nx.rfft(x) - naive_dft(x)).max() < 1e-9


def test_rfft_length_checks():
    with pytest.raises(InvalidLengthError):
        nx.rfft(np.ones(1))
    with pytest.raises(InvalidLengthError):
        nx.irfft(np.ones(4, dtype=complex), 8)


def test_irfft_of_dc():
    X = np.zeros(5, dtype=complex)
    X[0] = 8 * 1.5
    assert np.allclose(nx.irfft(X, 8), 1.5, atol=1e-12)


@pytest.mark.parametrize("T", [8, 50, 3000])
def test_round_trip(T, rng):
    x = rng.standard_normal(T)
    assert np.abs(nx.irfft(nx.rfft(x), T) - x).max() < 1e-9


@pytest.mark.parametrize("T", [9, 50])
def test_irfft_inverts_naive_dft(T, rng):
    x = rng.standard_normal(T)
    assert np.abs(nx.irfft(naive_dft(x), T) - x).max() < 1e-9
    assert np.abs(naive_idft(nx.rfft(x), T) - x).max() < 1e-9


def test_torch_and_numpy_agree(rng):
    x = rng.standard_normal((3, 40))
    assert np.abs(nx.rfft(torch.from_numpy(x)).numpy() - nx.rfft(x)).max() < 1e-12


@given(st.integers(2, 300), finite, finite, st.integers(0, 2**31))
def test_linearity(T, a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal(T), r.standard_normal(T)
    lhs = nx.rfft(a * x + b * y)
    rhs = a * nx.rfft(x) + b * nx.rfft(y)
    assert np.abs(lhs - rhs).max() <= 1e-9 * max(1.0, abs(a), abs(b)) * T


@given(arrays(np.float64, st.integers(2, 400), elements=finite))
def test_parseval(x):
    T = len(x)
    X = nx.rfft(x)
    F = len(X)
    power = np.abs(X) ** 2
    inner = power[1 : F - 1].sum() if T % 2 == 0 else power[1:].sum()
    one_sided = (power[0] + 2 * inner + (power[-1] if T % 2 == 0 else 0.0)) / T
    energy = float((x**2).sum())
    assert abs(one_sided - energy) <= 1e-8 * max(energy, 1e-300) + 1e-300


@given(arrays(np.float64, (3, 7), elements=finite))
def test_softmax_rows(x):
    s = nx.softmax(x, axis=-1)
    assert (s >= 0).all()
    assert np.abs(s.sum(axis=-1) - 1).max() < 1e-12


def test_sigmoid_extremes_stay_finite():
    s = nx.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.array_equal(s, [0.0, 0.5, 1.0])


def test_same_padding_arithmetic():
    assert nx.same_padding(3000, 5, 2)[0] == 1500
    assert nx.same_padding(7, 5, 2) == (4, 2, 2)


def test_conv_matches_naive_loops(rng):
    x = rng.standard_normal((3, 23))
    w = rng.standard_normal((4, 3, 5))
    b = rng.standard_normal(4)
    for stride in (1, 2, 3):
        got = nx.conv1d_same(torch.from_numpy(x)[None], torch.from_numpy(w), torch.from_numpy(b), stride)[0]
        assert np.abs(got.numpy() - naive_conv(x, w, b, stride)).max() < 1e-12


def test_dense_shape_error():
    with pytest.raises(ShapeError):
        nx.dense(torch.ones(2, 3), torch.ones(4, 1))


# ---------------------------------------------------------------- gradcheck


def test_gradcheck_quadratic():
    r = nx.gradcheck(lambda p: (p["w"] ** 2).sum(), {"w": torch.tensor([3.0], dtype=torch.float64)})
    assert r.max_rel_err < 1e-9 and r.passed


def test_gradcheck_flags_a_wrong_gradient():
    class Bad(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return x**2

        @staticmethod
        def backward(ctx, g):
            (x,) = ctx.saved_tensors
            return g * 3 * x  # should be 2x

    r = nx.gradcheck(lambda p: Bad.apply(p["w"]).sum(), {"w": torch.tensor([1.5], dtype=torch.float64)})
    assert not r.passed and r.max_rel_err > 0.1


def test_gradcheck_eps_bounds():
    with pytest.raises(ValueError):
        nx.gradcheck(lambda p: p["w"].sum(), {"w": torch.ones(1, dtype=torch.float64)}, eps=1e-2)


def test_gradcheck_reports_non_finite_perturbation():
    f = lambda p: torch.log(p["w"]).sum()
    with pytest.raises(GradCheckError, match=r"w\[0\]"):
        nx.gradcheck(f, {"w": torch.tensor([5e-5], dtype=torch.float64)}, eps=1e-4)


def test_gradcheck_does_not_touch_inputs():
    w = torch.tensor([1.0, 2.0], dtype=torch.float64)
    nx.gradcheck(lambda p: (p["w"] ** 3).sum(), {"w": w})
    assert w.tolist() == [1.0, 2.0]


def test_bce_head_gradcheck(rng):
    logits = torch.from_numpy(rng.standard_normal(6))
    y = torch.tensor([1.0, 0, 1, 0, 1, 1], dtype=torch.float64)
    r = nx.gradcheck(lambda p: bce_loss(torch.sigmoid(p["z"]), y), {"z": logits}, eps=1e-5)
    assert r.max_rel_err < 1e-7


def _t(rng, *shape):
    return torch.from_numpy(rng.standard_normal(shape))


PRIMITIVES = {
    "dense": lambda r: (lambda p: nx.dense(p["x"], p["w"], p["b"]).pow(2).sum(),
                        {"x": _t(r, 3, 4), "w": _t(r, 4, 2), "b": _t(r, 2)}),
    "conv1d": lambda r: (lambda p: torch.tanh(nx.conv1d_same(p["x"], p["w"], p["b"], 2)).sum(),
                         {"x": _t(r, 1, 2, 11), "w": _t(r, 3, 2, 5), "b": _t(r, 3)}),
    "lstm_cell": lambda r: (
        lambda p: sum(t.sum() for t in nx.lstm_cell(p["x"], p["h"], p["c"], p["wi"], p["wh"], p["bi"], p["bh"])),
        {"x": _t(r, 2, 3), "h": _t(r, 2, 4), "c": _t(r, 2, 4), "wi": _t(r, 16, 3),
         "wh": _t(r, 16, 4), "bi": _t(r, 16), "bh": _t(r, 16)}),
    "softmax": lambda r: (lambda p: (nx.softmax(p["x"]) * torch.arange(5.0, dtype=torch.float64)).sum(),
                          {"x": _t(r, 3, 5)}),
    "sigmoid": lambda r: (lambda p: (nx.sigmoid(p["x"]) ** 2).sum(), {"x": _t(r, 6)}),
    "fft_pair": lambda r: (
        lambda p: (nx.irfft(nx.rfft(p["x"]) * torch.sigmoid(p["w"]), 12) * torch.arange(12.0, dtype=torch.float64)).sum(),
        {"x": _t(r, 2, 12), "w": _t(r, 2, 7)}),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, rng):
    f, params = PRIMITIVES[name](rng)
    r = nx.gradcheck(f, params, eps=1e-6, op_name=name)
    assert r.passed, r
