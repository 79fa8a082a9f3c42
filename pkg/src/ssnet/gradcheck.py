"""Central finite-difference checks for the analytic gradients."""
from __future__ import annotations

import numpy as np

from .network import hybrid_loss
from .ssm import S6Params, ScanInputs, cm_s6_backward, cm_s6_forward, s6_backward, s6_scan_seq

STEP = 1e-5
TOLERANCE = 1e-4


def numerical_gradient(fn, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Gradient of scalar ``fn()`` w.r.t. array ``x``, which is perturbed in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn()
        flat[i] = orig - step
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def relative_error(analytic, numeric) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def random_scan_inputs(rng, L=16, D=2, N=3) -> ScanInputs:
    return ScanInputs(
        u=rng.standard_normal((L, D)),
        A_bar=np.exp(-rng.uniform(0.05, 1.0, size=(L, D, N))),
        B_bar=rng.standard_normal((L, D, N)) * 0.5,
        C=rng.standard_normal((L, N)),
        D_feed=rng.standard_normal(D),
    )


def check_scan(seed: int = 0, L=16, D=2, N=3) -> dict[str, float]:
    """Scan backward vs. finite differences of the reference scan."""
    rng = np.random.default_rng(seed)
    inp = random_scan_inputs(rng, L, D, N)
    go = rng.standard_normal((L, D))
    grads = s6_backward(inp, go)

    def loss():
        return float((s6_scan_seq(inp) * go).sum())

    return {
        name: relative_error(getattr(grads, name), numerical_gradient(loss, getattr(inp, name)))
        for name in ScanInputs._fields
    }


def check_cm_s6(seed: int = 0, L=12, D=3, N=4) -> dict[str, float]:
    """Full CM-S6 backward (sequences and parameters) vs. finite differences."""
    rng = np.random.default_rng(seed)
    p = S6Params.init(D, N, rng, dtype=np.float64)
    # move off the initialisation so every parameter matters
    p = S6Params(**{k: v + 0.1 * rng.standard_normal(v.shape) for k, v in p.as_dict().items()})
    f_x = rng.standard_normal((L, D))
    f_y = rng.standard_normal((L, D))
    go = rng.standard_normal((L, D))
    gx, gy, gp = cm_s6_backward(f_x, f_y, p, go)

    def loss():
        return float((cm_s6_forward(f_x, f_y, p, backend="sequential") * go).sum())

    errs = {"f_x": relative_error(gx, numerical_gradient(loss, f_x)),
            "f_y": relative_error(gy, numerical_gradient(loss, f_y))}
    for name, arr in p.as_dict().items():
        errs[name] = relative_error(getattr(gp, name), numerical_gradient(loss, arr))
    return errs


def check_loss(seed: int = 0, size=16) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0.05, 0.95, size=(1, size, size))
    gt = (rng.random((1, size, size)) > 0.5).astype(np.float64)
    _, grad = hybrid_loss(pred, gt)
    num = numerical_gradient(lambda: hybrid_loss(pred, gt)[0], pred)
    return {"pred": relative_error(grad, num)}


CHECKS = {"s6": check_scan, "cms6": check_cm_s6, "loss": check_loss}
