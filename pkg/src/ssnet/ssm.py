"""Selective-scan state space kernels (S6) and the cross-modal variant (CM-S6).

Shapes follow one convention throughout:

    f, u        [L, D]       sequences (L steps, D channels)
    A, A_log    [D, N]       continuous state matrix, A = -exp(A_log) < 0
    B, C        [L, N]       input/output projections derived from the sequence
    delta       [L, D]       per-step, per-channel time step (> 0)
    A_bar       [L, D, N]    exp(delta * A)  (zero-order hold)
    B_bar       [L, D, N]    delta * B       (Euler)
    h           [L, D, N]    hidden state

The recurrence is ``h[k] = A_bar[k] * h[k-1] + B_bar[k] * u[k]`` with
``h[-1] = 0`` and the read-out ``y[k] = h[k] @ C[k] + D_feed * u[k]``.

Two scan backends compute the same thing: :func:`s6_scan_seq` is a plain
step-by-step loop kept as the reference, :func:`s6_scan_parallel` evaluates
the linear recurrence as an associative scan, chunk by chunk.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Callable, NamedTuple

import numpy as np

from .tensor_core import flip_seq, sigmoid, softplus

__all__ = [
    "S6Params",
    "ScanInputs",
    "ScanGrads",
    "derive_params",
    "discretize",
    "linear_scan",
    "s6_scan_seq",
    "s6_scan_parallel",
    "scan_inputs",
    "s6_forward",
    "cm_s6_forward",
    "bidirectional",
    "s6_backward",
    "cm_s6_backward",
    "s6_param_backward",
]

DEFAULT_CHUNK = 64
DT_MIN, DT_MAX = 1e-3, 1e-1


@dataclass
class S6Params:
    A_log: np.ndarray    # [D, N]
    D_feed: np.ndarray   # [D]
    W_B: np.ndarray      # [D, N]
    W_C: np.ndarray      # [D, N]
    W_delta: np.ndarray  # [D, D]
    b_delta: np.ndarray  # [D]

    def __post_init__(self):
        d, n = np.shape(self.A_log)
        expected = {
            "D_feed": (d,), "W_B": (d, n), "W_C": (d, n), "W_delta": (d, d), "b_delta": (d,),
        }
        for name, shape in expected.items():
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(
                    f"S6Params.{name} must be {shape} for D={d}, N={n}, "
                    f"got {np.shape(getattr(self, name))}"
                )

    @property
    def dim(self) -> int:
        return self.A_log.shape[0]

    @property
    def state_dim(self) -> int:
        return self.A_log.shape[1]

    @property
    def A(self) -> np.ndarray:
        return -np.exp(self.A_log)

    @classmethod
    def init(cls, d: int, n: int, rng: np.random.Generator, dtype=np.float32) -> "S6Params":
        """Stable initialisation: A[d, n] = -(n + 1), softplus(b_delta) ~ U[1e-3, 1e-1]."""
        a_log = np.log(np.tile(np.arange(1, n + 1, dtype=np.float64), (d, 1)))
        dt = rng.uniform(DT_MIN, DT_MAX, size=d)
        b_delta = dt + np.log(-np.expm1(-dt))  # inverse softplus
        bound_bn = np.sqrt(6.0 / (d + n))
        bound_dd = np.sqrt(6.0 / (2 * d))
        p = cls(
            A_log=a_log,
            D_feed=np.ones(d),
            W_B=rng.uniform(-bound_bn, bound_bn, size=(d, n)),
            W_C=rng.uniform(-bound_bn, bound_bn, size=(d, n)),
            W_delta=rng.uniform(-bound_dd, bound_dd, size=(d, d)),
            b_delta=b_delta,
        )
        return p.astype(dtype)

    def astype(self, dtype) -> "S6Params":
        return S6Params(**{k: np.asarray(v, dtype=dtype) for k, v in self.as_dict().items()})

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d) -> "S6Params":
        return cls(**{f.name: d[f.name] for f in fields(cls)})


class ScanInputs(NamedTuple):
    u: np.ndarray       # [L, D]
    A_bar: np.ndarray   # [L, D, N]
    B_bar: np.ndarray   # [L, D, N]
    C: np.ndarray       # [L, N]
    D_feed: np.ndarray  # [D]


class ScanGrads(NamedTuple):
    u: np.ndarray
    A_bar: np.ndarray
    B_bar: np.ndarray
    C: np.ndarray
    D_feed: np.ndarray


def derive_params(f, p: S6Params):
    """Input-dependent ``(B, C, delta)`` for a ``[L, D]`` sequence."""
    f = np.asarray(f)
    if f.ndim != 2 or f.shape[1] != p.dim:
        raise ValueError(f"sequence must be [L, {p.dim}], got shape {f.shape}")
    dt = f.dtype
    B = f @ p.W_B.astype(dt, copy=False)
    C = f @ p.W_C.astype(dt, copy=False)
    delta = softplus(f @ p.W_delta.astype(dt, copy=False) + p.b_delta.astype(dt, copy=False))
    return B, C, delta


def discretize(delta, A, B):
    """Zero-order hold for the state matrix, Euler step for the input matrix."""
    delta = np.asarray(delta)
    A = np.asarray(A, dtype=delta.dtype)
    B = np.asarray(B, dtype=delta.dtype)
    A_bar = np.exp(delta[:, :, None] * A[None, :, :])
    B_bar = delta[:, :, None] * B[:, None, :]
    return A_bar, B_bar


def _check_inputs(inp: ScanInputs) -> tuple[int, int, int]:
    L, D = inp.u.shape
    if L < 1:
        raise ValueError("scan needs at least one step")
    N = inp.C.shape[1]
    for name, arr, shape in (
        ("A_bar", inp.A_bar, (L, D, N)), ("B_bar", inp.B_bar, (L, D, N)),
        ("C", inp.C, (L, N)), ("D_feed", inp.D_feed, (D,)),
    ):
        if arr.shape != shape:
            raise ValueError(f"{name} must be {shape}, got {arr.shape}")
    return L, D, N


def _acc_dtype(dtype):
    # hidden state accumulates in float64 whatever the input precision
    return np.promote_types(dtype, np.float64)


def s6_scan_seq(inp: ScanInputs) -> np.ndarray:
    """Reference scan: one recurrence step at a time."""
    L, D, N = _check_inputs(inp)
    u, A_bar, B_bar, C, D_feed = inp
    h = np.zeros((D, N), dtype=_acc_dtype(u.dtype))
    out = np.empty((L, D), dtype=h.dtype)
    for k in range(L):
        h = A_bar[k] * h + B_bar[k] * u[k][:, None]
        out[k] = h @ C[k] + D_feed * u[k]
    return out.astype(u.dtype, copy=False)


def _chunked_scan(a: np.ndarray, x: np.ndarray, chunk: int) -> np.ndarray:
    """Inclusive scan; ``x`` is overwritten with the result, ``a`` is left alone."""
    L = a.shape[0]
    rest = a.shape[1:]
    if L <= chunk or chunk < 2:
        for k in range(1, L):
            x[k] += a[k] * x[k - 1]
        return x
    pad = (-L) % chunk
    if pad:
        a = np.concatenate([a, np.ones((pad,) + rest, dtype=a.dtype)])
        x = np.concatenate([x, np.zeros((pad,) + rest, dtype=x.dtype)])
    nc = a.shape[0] // chunk
    A = a.reshape((nc, chunk) + rest)
    X = x.reshape((nc, chunk) + rest)
    tmp = np.empty((nc,) + rest, dtype=X.dtype)

    # local inclusive prefixes of every chunk at once
    for j in range(1, chunk):
        np.multiply(A[:, j], X[:, j - 1], out=tmp)
        X[:, j] += tmp

    # chunk-end states obey a shorter recurrence of the same form, whose
    # coefficients are the chunk-wide products of a
    prod = A[:, 0].copy()
    for j in range(1, chunk):
        prod *= A[:, j]
    ends = _chunked_scan(prod, X[:, -1].copy(), chunk)

    # push each chunk's incoming state through the chunk:
    # (a2, x2) o (a1, x1) = (a1 * a2, a2 * x1 + x2)
    carry = np.zeros((nc,) + rest, dtype=X.dtype)
    carry[1:] = ends[:-1]
    for j in range(chunk):
        carry *= A[:, j]
        X[:, j] += carry
    return X.reshape((nc * chunk,) + rest)[:L]


def linear_scan(a, x, chunk: int = DEFAULT_CHUNK, workers: int = 1) -> np.ndarray:
    """All states of ``h[k] = a[k] * h[k-1] + x[k]`` with ``h[-1] = 0``.

    ``a`` and ``x`` share shape ``[L, ...]``; the result is float64 (or wider).
    With ``workers > 1`` the second axis is split across threads. Every
    element goes through the same arithmetic either way, so the result does
    not depend on ``workers``.
    """
    a = np.asarray(a)
    x = np.array(x, dtype=_acc_dtype(np.result_type(a, x)))
    return _scan_inplace(a, x, chunk, workers)


def _scan_inplace(a, x, chunk, workers):
    if a.shape != x.shape:
        raise ValueError(f"a {a.shape} and x {x.shape} must match")
    if chunk < 1:
        raise ValueError("chunk must be positive")
    chunk = min(chunk, a.shape[0])
    if workers <= 1 or a.ndim < 2 or a.shape[1] < 2:
        return _chunked_scan(a, x, chunk)
    parts = np.array_split(np.arange(a.shape[1]), min(workers, a.shape[1]))
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        futures = [
            (sl, pool.submit(_chunked_scan, a[:, sl], np.ascontiguousarray(x[:, sl]), chunk))
            for sl in (slice(p[0], p[-1] + 1) for p in parts)
        ]
        for sl, fut in futures:
            x[:, sl] = fut.result()
    return x


def _states(inp: ScanInputs, chunk: int, workers: int) -> np.ndarray:
    x = np.multiply(inp.B_bar, inp.u[:, :, None], dtype=_acc_dtype(inp.u.dtype))
    return _scan_inplace(inp.A_bar, x, chunk, workers)


def s6_scan_parallel(inp: ScanInputs, chunk: int = DEFAULT_CHUNK, workers: int = 1) -> np.ndarray:
    """Same contract as :func:`s6_scan_seq`, evaluated as a chunked associative scan."""
    _check_inputs(inp)
    h = _states(inp, chunk, workers)
    out = np.matmul(h, inp.C[:, :, None])[..., 0] + inp.D_feed * inp.u
    return out.astype(inp.u.dtype, copy=False)


_BACKENDS: dict[str, Callable[[ScanInputs], np.ndarray]] = {
    "sequential": s6_scan_seq,
    "parallel": s6_scan_parallel,
}


def scan_inputs(f_x, f_y, p: S6Params) -> ScanInputs:
    """Dynamics from ``f_x``, scanned input ``f_y``."""
    f_x = np.asarray(f_x)
    f_y = np.asarray(f_y)
    if f_x.shape != f_y.shape:
        raise ValueError(f"f_x {f_x.shape} and f_y {f_y.shape} must have equal length and width")
    B, C, delta = derive_params(f_x, p)
    A_bar, B_bar = discretize(delta, p.A.astype(f_x.dtype, copy=False), B)
    return ScanInputs(f_y, A_bar, B_bar, C, p.D_feed.astype(f_y.dtype, copy=False))


def cm_s6_forward(f_x, f_y, p: S6Params, backend: str = "parallel") -> np.ndarray:
    """Cross-modal S6: ``f_x`` selects B, C and delta; ``f_y`` is what gets scanned."""
    try:
        scan = _BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown scan backend {backend!r}; use one of {sorted(_BACKENDS)}")
    return scan(scan_inputs(f_x, f_y, p))


def s6_forward(f, p: S6Params, backend: str = "parallel") -> np.ndarray:
    return cm_s6_forward(f, f, p, backend)


def bidirectional(scan_fn, inputs, p_fwd: S6Params, p_bwd: S6Params, **kw) -> np.ndarray:
    """Run ``scan_fn`` forwards and on the flipped sequence(s); concat along channels.

    ``inputs`` is the tuple of sequences ``scan_fn`` takes (one for S6, two for
    CM-S6); all of them are flipped together for the backward direction.
    """
    fwd = scan_fn(*inputs, p_fwd, **kw)
    bwd = flip_seq(scan_fn(*(flip_seq(s) for s in inputs), p_bwd, **kw))
    return np.concatenate([fwd, bwd], axis=1)


def _shift_next(a: np.ndarray) -> np.ndarray:
    return np.concatenate([a[1:], np.zeros_like(a[:1])])


def s6_backward(inp: ScanInputs, grad_out, chunk: int = DEFAULT_CHUNK) -> ScanGrads:
    """Reverse-mode gradients of the scan w.r.t. all of its inputs.

    The adjoint state obeys ``g[k] = A_bar[k+1] * g[k+1] + C[k] * grad_out[k]``,
    another linear recurrence, evaluated by scanning the reversed sequence.
    """
    _check_inputs(inp)
    u, A_bar, B_bar, C, D_feed = inp
    grad_out = np.asarray(grad_out, dtype=u.dtype)
    if grad_out.shape != u.shape:
        raise ValueError(f"grad_out must be {u.shape}, got {grad_out.shape}")
    h = _states(inp, chunk, 1)
    drive = C[:, None, :] * grad_out[:, :, None]
    g = flip_seq(linear_scan(flip_seq(_shift_next(A_bar)), flip_seq(drive), chunk))
    h_prev = np.concatenate([np.zeros_like(h[:1]), h[:-1]])
    return ScanGrads(
        u=grad_out * D_feed + np.einsum("ldn,ldn->ld", g, B_bar),
        A_bar=g * h_prev,
        B_bar=g * u[:, :, None],
        C=np.einsum("ld,ldn->ln", grad_out, h),
        D_feed=(grad_out * u).sum(axis=0),
    )


def cm_s6_backward(f_x, f_y, p: S6Params, grad_out, chunk: int = DEFAULT_CHUNK):
    """Gradients of :func:`cm_s6_forward` w.r.t. both sequences and every parameter.

    Returns ``(grad_f_x, grad_f_y, grad_params)`` with ``grad_params`` an
    :class:`S6Params` of matching shapes.
    """
    f_x = np.asarray(f_x)
    dt = f_x.dtype
    p = p.astype(dt)
    B, C, delta = derive_params(f_x, p)
    A = p.A
    A_bar, B_bar = discretize(delta, A, B)
    inp = ScanInputs(np.asarray(f_y, dtype=dt), A_bar, B_bar, C, p.D_feed)
    gs = s6_backward(inp, grad_out, chunk)

    dA_pre = gs.A_bar * A_bar  # d/d(delta*A)
    d_delta = np.einsum("ldn,dn->ld", dA_pre, A) + np.einsum("ldn,ln->ld", gs.B_bar, B)
    dA = np.einsum("ldn,ld->dn", dA_pre, delta)
    dB = np.einsum("ldn,ld->ln", gs.B_bar, delta)
    dz = d_delta * sigmoid(f_x @ p.W_delta + p.b_delta)

    grads = S6Params(
        A_log=dA * A,
        D_feed=gs.D_feed,
        W_B=f_x.T @ dB,
        W_C=f_x.T @ gs.C,
        W_delta=f_x.T @ dz,
        b_delta=dz.sum(axis=0),
    )
    grad_fx = dB @ p.W_B.T + gs.C @ p.W_C.T + dz @ p.W_delta.T
    return grad_fx, gs.u, grads


def s6_param_backward(f, p: S6Params, grad_out, chunk: int = DEFAULT_CHUNK):
    """Gradients of :func:`s6_forward`: ``(grad_f, grad_params)``."""
    gx, gy, grads = cm_s6_backward(f, f, p, grad_out, chunk)
    return gx + gy, grads
