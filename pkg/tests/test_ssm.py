import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssnet.gradcheck import check_cm_s6, check_scan, numerical_gradient, relative_error
from ssnet.ssm import (
    S6Params,
    ScanInputs,
    bidirectional,
    cm_s6_backward,
    cm_s6_forward,
    derive_params,
    discretize,
    linear_scan,
    s6_backward,
    s6_forward,
    s6_param_backward,
    s6_scan_parallel,
    s6_scan_seq,
    scan_inputs,
)
from ssnet.tensor_core import flip_seq

from _oracles import cm_s6_loops, s6_loops


def _inputs(rng, L, D, N, dtype=np.float64):
    f = rng.standard_normal((L, D)).astype(dtype)
    return scan_inputs(f, f, S6Params.init(D, N, rng, dtype=dtype))


def _params(rng, D, N, scale=0.1):
    p = S6Params.init(D, N, rng, dtype=np.float64)
    return S6Params(**{k: v + scale * rng.standard_normal(v.shape) for k, v in p.as_dict().items()})


def test_derive_params_zero_input():
    p = S6Params.init(3, 2, np.random.default_rng(0), dtype=np.float64)
    p = S6Params(**{**p.as_dict(), "b_delta": np.zeros(3)})
    B, C, delta = derive_params(np.zeros((4, 3)), p)
    assert not B.any() and not C.any()
    np.testing.assert_allclose(delta, np.log(2))


def test_derive_params_identity_and_matmul_oracle():
    rng = np.random.default_rng(1)
    p = _params(rng, 4, 4)
    f = rng.standard_normal((5, 4))
    B, _, _ = derive_params(f, S6Params(**{**p.as_dict(), "W_B": np.eye(4)}))
    np.testing.assert_allclose(B, f)
    B, C, delta = derive_params(f, p)
    for k in range(5):
        for n in range(4):
            assert B[k, n] == pytest.approx(sum(f[k, j] * p.W_B[j, n] for j in range(4)), abs=1e-6)
            assert C[k, n] == pytest.approx(sum(f[k, j] * p.W_C[j, n] for j in range(4)), abs=1e-6)
        for d in range(4):
            z = sum(f[k, j] * p.W_delta[j, d] for j in range(4)) + p.b_delta[d]
            assert delta[k, d] == pytest.approx(np.log1p(np.exp(z)), abs=1e-6)
    with pytest.raises(ValueError):
        derive_params(np.zeros((5, 3)), p)


def test_discretize_cases():
    A_bar, B_bar = discretize(np.array([[0.5]]), np.array([[-2.0]]), np.array([[3.0]]))
    assert A_bar[0, 0, 0] == pytest.approx(0.36788, abs=1e-5)
    assert B_bar[0, 0, 0] == 1.5
    A_bar, _ = discretize(np.full((2, 3), 0.7), np.zeros((3, 4)), np.ones((2, 4)))
    np.testing.assert_array_equal(A_bar, 1)
    A_bar, B_bar = discretize(np.full((1, 1), 1e-12), np.array([[-5.0]]), np.array([[2.0]]))
    assert A_bar[0, 0, 0] == pytest.approx(1) and B_bar[0, 0, 0] == pytest.approx(0, abs=1e-11)


def test_params_validate():
    with pytest.raises(ValueError):
        S6Params(np.zeros((2, 3)), np.zeros(2), np.zeros((2, 3)), np.zeros((2, 2)),
                 np.zeros((2, 2)), np.zeros(2))
    p = S6Params.init(4, 5, np.random.default_rng(0))
    np.testing.assert_allclose(p.A, -np.tile(np.arange(1, 6), (4, 1)), rtol=1e-6)
    sp = np.log1p(np.exp(p.b_delta.astype(np.float64)))
    assert sp.min() >= 1e-3 - 1e-7 and sp.max() <= 1e-1 + 1e-7


def test_scan_feedthrough_only():
    rng = np.random.default_rng(2)
    u = rng.standard_normal((6, 2))
    inp = ScanInputs(u, np.ones((6, 2, 3)), np.zeros((6, 2, 3)), rng.standard_normal((6, 3)),
                     np.array([2.0, -1.0]))
    np.testing.assert_allclose(s6_scan_seq(inp), u * [2.0, -1.0])


def test_scan_single_step():
    rng = np.random.default_rng(3)
    inp = _inputs(rng, 1, 3, 4)
    want = (inp.B_bar[0] @ inp.C[0]) * inp.u[0] + inp.D_feed * inp.u[0]
    np.testing.assert_allclose(s6_scan_seq(inp)[0], want)
    np.testing.assert_array_equal(s6_scan_parallel(inp), s6_scan_seq(inp))


def test_scan_hand_unrolled():
    one = np.ones((3, 1, 1))
    inp = ScanInputs(np.ones((3, 1)), 0.5 * one, one, np.ones((3, 1)), np.zeros(1))
    for fn in (s6_scan_seq, s6_scan_parallel):
        np.testing.assert_allclose(fn(inp)[:, 0], [1.0, 1.5, 1.75])


def test_scan_cumsum_when_no_decay():
    rng = np.random.default_rng(4)
    L, D, N = 300, 2, 3
    inp = ScanInputs(rng.standard_normal((L, D)), np.ones((L, D, N)),
                     rng.standard_normal((L, D, N)), rng.standard_normal((L, N)), np.zeros(D))
    h = np.cumsum(inp.B_bar * inp.u[:, :, None], axis=0)
    np.testing.assert_allclose(s6_scan_parallel(inp), np.einsum("ldn,ln->ld", h, inp.C),
                               atol=1e-10)


def test_scan_matches_loops():
    inp = _inputs(np.random.default_rng(5), 40, 3, 2)
    np.testing.assert_allclose(s6_scan_seq(inp), s6_loops(*inp), atol=1e-12)


@pytest.mark.parametrize("L", [1, 2, 3, 7, 64, 1024, 16384])
def test_parallel_equals_oracle(L):
    rng = np.random.default_rng(L)
    for dtype, tol in ((np.float32, 1e-5), (np.float64, 1e-10)):
        inp = _inputs(rng, L, 4, 8, dtype)
        got = s6_scan_parallel(inp)
        assert got.dtype == dtype
        assert np.abs(got - s6_scan_seq(inp)).max() <= tol


@pytest.mark.parametrize("chunk", [1, 2, 5, 64, 1000])
def test_parallel_chunk_independent(chunk):
    inp = _inputs(np.random.default_rng(6), 777, 3, 4)
    np.testing.assert_allclose(s6_scan_parallel(inp, chunk=chunk), s6_scan_seq(inp), atol=1e-10)


def test_parallel_threads_give_same_result():
    inp = _inputs(np.random.default_rng(7), 3000, 6, 4, np.float32)
    base = s6_scan_parallel(inp)
    for workers in (2, 3, 8):
        np.testing.assert_array_equal(s6_scan_parallel(inp, workers=workers), base)


@settings(max_examples=30, deadline=None)
@given(L=st.integers(1, 300), D=st.integers(1, 5), N=st.integers(1, 5), seed=st.integers(0, 10**6),
       chunk=st.integers(1, 70))
def test_linear_scan_property(L, D, N, seed, chunk):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (L, D, N))
    x = rng.standard_normal((L, D, N))
    want = np.empty_like(x)
    h = np.zeros((D, N))
    for k in range(L):
        h = a[k] * h + x[k]
        want[k] = h
    np.testing.assert_allclose(linear_scan(a, x, chunk), want, atol=1e-12)


def test_cm_reduces_to_s6():
    rng = np.random.default_rng(8)
    for _ in range(5):
        f = rng.standard_normal((50, 4)).astype(np.float32)
        p = S6Params.init(4, 6, rng)
        for backend in ("parallel", "sequential"):
            np.testing.assert_array_equal(cm_s6_forward(f, f, p, backend), s6_forward(f, p, backend))


def test_cm_zero_input_is_zero():
    rng = np.random.default_rng(9)
    f_x = rng.standard_normal((20, 3))
    out = cm_s6_forward(f_x, np.zeros_like(f_x), _params(rng, 3, 4))
    assert not out.any()


def test_cm_matches_hand_wired_reference():
    rng = np.random.default_rng(10)
    p = _params(rng, 4, 8)
    f_x, f_y = rng.standard_normal((64, 4)), rng.standard_normal((64, 4))
    want = cm_s6_loops(f_x, f_y, p)
    for backend in ("parallel", "sequential"):
        np.testing.assert_allclose(cm_s6_forward(f_x, f_y, p, backend), want, atol=1e-10)
    with pytest.raises(ValueError):
        cm_s6_forward(f_x, f_y[:-1], p)
    with pytest.raises(ValueError):
        cm_s6_forward(f_x, f_y, p, backend="gpu")


def test_bidirectional_reverse_half():
    rng = np.random.default_rng(11)
    pf, pb = _params(rng, 3, 4), _params(rng, 3, 4)
    f = rng.standard_normal((30, 3))
    out = bidirectional(s6_forward, (f,), pf, pb)
    assert out.shape == (30, 6)
    np.testing.assert_allclose(out[:, :3], s6_forward(f, pf, "sequential"), atol=1e-12)
    rev = flip_seq(s6_scan_seq(scan_inputs(f[::-1], f[::-1], pb)))
    np.testing.assert_allclose(out[:, 3:], rev, atol=1e-12)

    g = rng.standard_normal((30, 3))
    out = bidirectional(cm_s6_forward, (f, g), pf, pb)
    np.testing.assert_allclose(out[:, 3:], flip_seq(cm_s6_forward(f[::-1], g[::-1], pb)),
                               atol=1e-12)


def test_bidirectional_single_step_and_palindrome():
    rng = np.random.default_rng(12)
    pf, pb = _params(rng, 2, 3), _params(rng, 2, 3)
    f = rng.standard_normal((1, 2))
    out = bidirectional(s6_forward, (f,), pf, pb)
    np.testing.assert_allclose(out[:, 2:], s6_forward(f, pb))
    half = rng.standard_normal((5, 2))
    pal = np.concatenate([half, half[-2::-1]])
    out = bidirectional(s6_forward, (pal,), pf, pf)
    np.testing.assert_allclose(out[:, 2:], out[::-1, :2], atol=1e-12)


def test_direction_sensitivity():
    rng = np.random.default_rng(13)
    p = _params(rng, 3, 4)
    f = rng.standard_normal((16, 3))
    assert not np.allclose(s6_forward(f[::-1], p), s6_forward(f, p)[::-1])


def test_causality_probe():
    rng = np.random.default_rng(14)
    p = _params(rng, 3, 4)
    f_x, f_y = rng.standard_normal((40, 3)), rng.standard_normal((40, 3))
    base = cm_s6_forward(f_x, f_y, p)
    j = 25
    fx2, fy2 = f_x.copy(), f_y.copy()
    fx2[j] += 1.0
    fy2[j] -= 2.0
    out = cm_s6_forward(fx2, fy2, p)
    np.testing.assert_array_equal(out[:j], base[:j])
    assert not np.allclose(out[j:], base[j:])


def test_stability_long_sequence():
    rng = np.random.default_rng(15)
    f = rng.uniform(-1, 1, (100_000, 4)).astype(np.float32)
    p = S6Params.init(4, 8, rng)
    inp = scan_inputs(f, f, p)
    out = s6_scan_parallel(inp)
    assert np.all(np.isfinite(out))
    # |h| <= max|B_bar u| / (1 - max A_bar) elementwise geometric bound
    drive = np.abs(inp.B_bar * inp.u[:, :, None]).max(axis=0)
    bound = drive / (1 - inp.A_bar.max(axis=0))
    ymax = (bound * np.abs(inp.C).max(axis=0)).sum(axis=1) + np.abs(inp.D_feed)
    assert np.all(np.abs(out).max(axis=0) <= ymax * (1 + 1e-4))


def test_backward_zero_grad():
    inp = _inputs(np.random.default_rng(16), 10, 2, 3)
    for g in s6_backward(inp, np.zeros((10, 2))):
        assert not np.any(g)


def test_backward_single_step_by_hand():
    u = np.array([[1.5]])
    A_bar, B_bar = np.array([[[0.3]]]), np.array([[[2.0]]])
    C, D_feed = np.array([[0.7]]), np.array([0.4])
    # y = C * B_bar * u + D_feed * u
    g = s6_backward(ScanInputs(u, A_bar, B_bar, C, D_feed), np.ones((1, 1)))
    assert g.u[0, 0] == pytest.approx(0.7 * 2.0 + 0.4)
    assert g.B_bar[0, 0, 0] == pytest.approx(0.7 * 1.5)
    assert g.C[0, 0] == pytest.approx(2.0 * 1.5)
    assert g.D_feed[0] == pytest.approx(1.5)
    assert g.A_bar[0, 0, 0] == 0


@pytest.mark.parametrize("seed", range(3))
def test_backward_finite_differences(seed):
    assert max(check_scan(seed).values()) < 1e-4
    assert max(check_cm_s6(seed).values()) < 1e-4


def test_s6_param_backward_finite_differences():
    rng = np.random.default_rng(17)
    p = _params(rng, 2, 3)
    f = rng.standard_normal((8, 2))
    go = rng.standard_normal((8, 2))
    gf, _ = s6_param_backward(f, p, go)
    num = numerical_gradient(lambda: float((s6_forward(f, p, "sequential") * go).sum()), f)
    assert relative_error(gf, num) < 1e-6


def test_cm_backward_shapes():
    rng = np.random.default_rng(18)
    p = _params(rng, 3, 2)
    f = rng.standard_normal((5, 3))
    gx, gy, gp = cm_s6_backward(f, f, p, np.ones((5, 3)))
    assert gx.shape == gy.shape == (5, 3)
    for k, v in p.as_dict().items():
        assert getattr(gp, k).shape == v.shape
