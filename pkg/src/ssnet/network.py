"""Full two-stream network, weights container and serialisation, hybrid loss."""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate1d

from . import blocks
from ._fileutil import atomic_write
from .priors import PriorSet, compute_priors
from .tensor_core import as_float, conv2d_backward

__all__ = [
    "SSNetConfig",
    "init_weights",
    "flatten",
    "unflatten",
    "ssnet_forward",
    "save_weights",
    "load_weights",
    "read_config",
    "write_config",
    "hybrid_loss",
    "rm_head_step",
    "WeightsFormatError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedWeightsError",
]

MAGIC = b"SSNW"
VERSION = 1


@dataclass(frozen=True)
class SSNetConfig:
    H: int = 256
    W: int = 256
    C: int = 8
    D: int = 16
    N: int = 64
    seed: int = 0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if k != "seed" and (not isinstance(v, int) or v < 1):
                raise ValueError(f"config {k} must be a positive integer, got {v!r}")
        if self.H % 32 or self.W % 32:
            raise ValueError(f"H and W must be multiples of 32, got {self.H}x{self.W}")
        if self.D % blocks.CBAM_REDUCTION:
            raise ValueError(
                f"decoder width D={self.D} must be divisible by {blocks.CBAM_REDUCTION}"
            )


def read_config(path) -> SSNetConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    known = set(SSNetConfig.__dataclass_fields__)
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = int(val)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: {key} must be an integer, got {val!r}")
    return SSNetConfig(**values)


def write_config(cfg: SSNetConfig, path) -> None:
    text = "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())
    atomic_write(path, text.encode("utf-8"))


# -- weights ----------------------------------------------------------------

def flatten(tree, prefix="") -> dict[str, np.ndarray]:
    out = {}
    for k, v in tree.items():
        name = f"{prefix}.{k}" if prefix else k
        if isinstance(v, dict):
            out.update(flatten(v, name))
        else:
            out[name] = v
    return out


def unflatten(flat) -> dict:
    tree: dict = {}
    for name, v in flat.items():
        node = tree
        *parents, leaf = name.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = v
    return tree


def _init_tree(cfg: SSNetConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    return {
        "backbone_rgb": blocks.init_backbone(rng, cfg.C, cfg.D),
        "backbone_depth": blocks.init_backbone(rng, cfg.C, cfg.D),
        "sem_rgb": blocks.init_sem(rng, cfg.D),
        "sem_depth": blocks.init_sem(rng, cfg.D),
        "m2dm": {f"m2db{s}": blocks.init_m2db(rng, cfg.D, cfg.N) for s in (1, 2, 3, 4)},
        "rm": blocks.init_rm(rng, cfg.D),
    }


def init_weights(cfg: SSNetConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Random weights as an ordered ``name -> float32 array`` map.

    Uses numpy's PCG64 generator seeded with ``seed`` (default ``cfg.seed``).
    Convolutions are Glorot-uniform with zero bias, batch norms are identity,
    state space parameters follow :meth:`ssnet.ssm.S6Params.init`.
    """
    seed = cfg.seed if seed is None else seed
    return {k: np.asarray(v, dtype=np.float32) for k, v in flatten(_init_tree(cfg, seed)).items()}


def _check_weights(weights, cfg: SSNetConfig) -> None:
    expected = flatten(_init_tree(cfg, 0))
    missing = [k for k in expected if k not in weights]
    if missing:
        raise ValueError(f"weights missing {len(missing)} tensors, first: {missing[0]!r}")
    for k, v in expected.items():
        if np.shape(weights[k]) != np.shape(v):
            raise ValueError(
                f"weights tensor {k!r} has shape {np.shape(weights[k])}, "
                f"config implies {np.shape(v)}"
            )


def ssnet_forward(rgb, depth, weights, cfg: SSNetConfig, priors: PriorSet | None = None,
                  backend="parallel", check=True) -> np.ndarray:
    """Saliency map ``[1, H, W]`` in ``(0, 1)`` for an RGB image and its enhanced depth."""
    rgb, depth = as_float(rgb, np.float32), as_float(depth, np.float32)
    if rgb.shape != (3, cfg.H, cfg.W):
        raise ValueError(f"input stage: rgb must be (3, {cfg.H}, {cfg.W}), got {rgb.shape}")
    if depth.shape != (1, cfg.H, cfg.W):
        raise ValueError(f"input stage: depth must be (1, {cfg.H}, {cfg.W}), got {depth.shape}")
    if check:
        try:
            _check_weights(weights, cfg)
        except ValueError as exc:
            raise ValueError(f"weights stage: {exc}") from None
    p = unflatten(weights)
    if priors is None:
        priors = compute_priors(rgb, depth)
    fx = blocks.backbone_forward(rgb, p["backbone_rgb"])
    fy = blocks.backbone_forward(np.repeat(depth, 3, axis=0), p["backbone_depth"])
    fx = blocks.sem_forward(fx, priors, p["sem_rgb"])
    fy = blocks.sem_forward(fy, priors, p["sem_depth"])
    fm = None
    for s in (4, 3, 2, 1):
        fm = blocks.m2db_forward(fx[s - 1], fy[s - 1], fm, p["m2dm"][f"m2db{s}"], backend)
    return blocks.rm_forward(fm, p["rm"])


# -- serialisation ----------------------------------------------------------

class WeightsFormatError(ValueError):
    """A weights file could not be decoded."""


class BadMagicError(WeightsFormatError):
    pass


class UnsupportedVersionError(WeightsFormatError):
    pass


class TruncatedWeightsError(WeightsFormatError):
    def __init__(self, msg, tensor=None):
        super().__init__(msg)
        self.tensor = tensor


def encode_weights(weights) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(weights))]
    for name, arr in weights.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if arr.ndim > 255:
            raise ValueError(f"tensor {name!r} has rank {arr.ndim} > 255")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_weights(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"not a weights file: magic {buf[:4]!r} != {MAGIC!r}")
    if len(buf) < 12:
        raise TruncatedWeightsError("file ends inside the header")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported weights version {version} (expected {VERSION})")
    pos = 12
    out: dict[str, np.ndarray] = {}

    def need(n, what, name=None):
        if pos + n > len(buf):
            where = f" of tensor {name!r}" if name else ""
            raise TruncatedWeightsError(
                f"truncated {what}{where} at byte {pos}: need {n}, have {len(buf) - pos}",
                tensor=name,
            )

    for i in range(count):
        need(4, f"name length of tensor #{i}")
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(nlen, f"name of tensor #{i}")
        try:
            name = buf[pos:pos + nlen].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightsFormatError(f"tensor #{i} name is not UTF-8: {exc}") from None
        if name in out:
            raise WeightsFormatError(f"duplicate tensor name {name!r}")
        pos += nlen
        need(1, "rank", name)
        rank = buf[pos]
        pos += 1
        need(4 * rank, "dims", name)
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        need(nbytes, "payload", name)
        arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos)
        out[name] = arr.astype(np.float32).reshape(dims)
        pos += nbytes
    if pos != len(buf):
        raise WeightsFormatError(f"{len(buf) - pos} trailing bytes after {count} tensors")
    return out


def save_weights(weights, path) -> None:
    atomic_write(path, encode_weights(weights))


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_weights(fh.read())


# -- loss -------------------------------------------------------------------

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
BCE_CLAMP = 1e-7


def _gauss_window():
    r = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-(r ** 2) / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _blur(x):
    # zero-padded "same" filtering; symmetric kernel, so the operator is self-adjoint
    g = _gauss_window()
    return correlate1d(correlate1d(x, g, axis=-1, mode="constant"), g, axis=-2, mode="constant")


def hybrid_loss(pred, gt):
    """BCE + SSIM + IoU loss and its gradient w.r.t. ``pred``.

    Returns ``(loss, grad)`` with ``grad`` shaped like ``pred``.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"pred {p.shape} and gt {g.shape} differ")
    n = p.size

    pc = np.clip(p, BCE_CLAMP, 1 - BCE_CLAMP)
    bce = -np.mean(g * np.log(pc) + (1 - g) * np.log(1 - pc))
    inside = (p > BCE_CLAMP) & (p < 1 - BCE_CLAMP)
    d_bce = -(g / pc - (1 - g) / (1 - pc)) / n * inside

    mx, my = _blur(p), _blur(g)
    exx, eyy, exy = _blur(p * p), _blur(g * g), _blur(p * g)
    sxx, syy, sxy = exx - mx * mx, eyy - my * my, exy - mx * my
    n1 = 2 * mx * my + SSIM_C1
    n2 = 2 * sxy + SSIM_C2
    d1 = mx * mx + my * my + SSIM_C1
    d2 = sxx + syy + SSIM_C2
    ssim = n1 * n2 / (d1 * d2)
    ssim_loss = 1 - ssim.mean()
    # partials of the SSIM map w.r.t. the blurred moments (mx, exx, exy)
    w = -ssim / n
    d_mx = w * (2 * my / n1 - 2 * my / n2 - 2 * mx / d1 + 2 * mx / d2)
    d_exx = w * (-1 / d2)
    d_exy = w * (2 / n2)
    d_ssim = _blur(d_mx) + 2 * p * _blur(d_exx) + g * _blur(d_exy)

    inter = (p * g).sum()
    union = p.sum() + g.sum() - inter
    iou_loss = 1 - (inter + 1) / (union + 1)
    d_iou = -(g * (union + 1) - (inter + 1) * (1 - g)) / (union + 1) ** 2

    return float(bce + ssim_loss + iou_loss), d_bce + d_ssim + d_iou


def rm_head_step(fm1, gt, rm_params, lr: float):
    """One gradient-descent step on the reconstruction head (final 1x1 conv).

    Returns ``(loss_before, updated_head_params)``; everything else is frozen.
    """
    pred, feats = blocks.rm_forward(fm1, rm_params, return_features=True)
    loss, d_pred = hybrid_loss(pred, gt)
    pred64 = pred.astype(np.float64)
    d_logit = d_pred * pred64 * (1 - pred64)
    head = rm_params["head"]
    _, d_w, d_b = conv2d_backward(feats.astype(np.float64), head["weight"].astype(np.float64),
                                  d_logit, padding=0)
    new_head = {
        "weight": (head["weight"] - lr * d_w).astype(head["weight"].dtype),
        "bias": (head["bias"] - lr * d_b).astype(head["bias"].dtype),
    }
    return loss, new_head
