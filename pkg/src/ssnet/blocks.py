"""Network building blocks.

Every block is a pure function ``block_forward(inputs..., p)`` where ``p`` is
a nested dict of arrays produced by the matching ``init_*`` function. The
nesting mirrors the dotted names used in the weights file, e.g.
``p["sgfb"]["s6_fwd"]["A_log"]`` <-> ``"...sgfb.s6_fwd.A_log"``.

Feature maps are ``[C, H, W]``; sequences are ``[L, C]``.
"""
from __future__ import annotations

import numpy as np

from .priors import PriorSet
from .ssm import S6Params, bidirectional, cm_s6_forward, s6_forward
from .tensor_core import (
    as_float,
    batch_norm_inference,
    bilinear_resize,
    concat_channels,
    conv2d,
    global_avg_pool,
    global_max_pool,
    im2seq,
    relu,
    seq2im,
    sigmoid,
)

CBAM_REDUCTION = 4
CBAM_KERNEL = 7
BN_EPS = 1e-5


# -- initialisers -----------------------------------------------------------

def _xavier(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_conv(rng, c_in, c_out, k=1, bias=True):
    w = _xavier(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k)
    p = {"weight": w}
    if bias:
        p["bias"] = np.zeros(c_out)
    return p


def init_bn(c):
    return {
        "gamma": np.ones(c), "beta": np.zeros(c),
        "running_mean": np.zeros(c), "running_var": np.ones(c),
    }


def init_conv_bn(rng, c_in, c_out, k=3):
    return {"conv": init_conv(rng, c_in, c_out, k), "bn": init_bn(c_out)}


def init_cb(rng, c):
    return {"unit1": init_conv_bn(rng, c, c), "unit2": init_conv_bn(rng, c, c)}


def init_cbam(rng, c, r=CBAM_REDUCTION):
    if c % r:
        raise ValueError(f"CBAM reduction ratio {r} must divide the channel count {c}")
    hidden = c // r
    return {
        "fc1": _xavier(rng, (hidden, c), c, hidden),
        "fc2": _xavier(rng, (c, hidden), hidden, c),
        "spatial": _xavier(rng, (1, 2, CBAM_KERNEL, CBAM_KERNEL),
                           2 * CBAM_KERNEL ** 2, CBAM_KERNEL ** 2),
    }


def init_s6(rng, d, n):
    return S6Params.init(d, n, rng, dtype=np.float64).as_dict()


def init_sgfb(rng, c, n):
    return {
        "proj_in": init_conv(rng, c, c),
        "s6_fwd": init_s6(rng, c, n),
        "s6_bwd": init_s6(rng, c, n),
        "proj_out": init_conv(rng, 2 * c, c),
    }


def init_cgfb(rng, c, n):
    return {
        "proj_x": init_conv(rng, c, c),
        "proj_y": init_conv(rng, c, c),
        "cms6_fwd": init_s6(rng, c, n),
        "cms6_bwd": init_s6(rng, c, n),
        "proj_out": init_conv(rng, 2 * c, c),
    }


def init_smdb(rng, c, n):
    return {
        "bn_in": init_bn(c), "sgfb": init_sgfb(rng, c, n), "cbam": init_cbam(rng, c),
        "bn_mid": init_bn(c), "cb": init_cb(rng, c),
    }


def init_cmdb(rng, c, n):
    return {
        "bn_x": init_bn(c), "bn_y": init_bn(c),
        "cgfb_x": init_cgfb(rng, c, n), "cgfb_y": init_cgfb(rng, c, n),
        "cbam_x": init_cbam(rng, c), "cbam_y": init_cbam(rng, c),
        "fuse": init_conv(rng, 2 * c, c),
        "bn_mid": init_bn(c), "cb": init_cb(rng, c),
    }


def init_seb(rng, c):
    return {f"cbam{i}": init_cbam(rng, c) for i in (1, 2, 3)}


def init_sem(rng, c):
    return {f"seb{s}": init_seb(rng, c) for s in (1, 2, 3, 4)}


def init_m2db(rng, d, n):
    return {
        "cb_x": init_cb(rng, d), "cb_y": init_cb(rng, d),
        "smdb_x": init_smdb(rng, d, n), "smdb_y": init_smdb(rng, d, n),
        "cmdb": init_cmdb(rng, d, n), "smdb_out": init_smdb(rng, d, n),
    }


def init_rm(rng, d):
    return {"cb1": init_cb(rng, d), "cb2": init_cb(rng, d), "head": init_conv(rng, d, 1)}


def backbone_channels(c):
    return [c, 2 * c, 4 * c, 8 * c]


def init_backbone(rng, c, d):
    chans = backbone_channels(c)
    p = {"stem1": init_conv_bn(rng, 3, c), "stem2": init_conv_bn(rng, c, c)}
    c_prev = c
    for s, ch in enumerate(chans, start=1):
        p[f"stage{s}"] = init_conv_bn(rng, c_prev, ch)
        c_prev = ch
    for s, ch in enumerate(chans, start=1):
        p[f"proj{s}"] = init_conv(rng, ch, d)
    return p


# -- primitives -------------------------------------------------------------

def bn(x, p):
    return batch_norm_inference(x, p["gamma"], p["beta"], p["running_mean"],
                                p["running_var"], BN_EPS)


def conv(x, p, stride=1):
    return conv2d(x, p["weight"], p.get("bias"), stride=stride)


def conv_bn_relu(x, p, stride=1):
    return relu(bn(conv(x, p["conv"], stride), p["bn"]))


def cb_forward(x, p):
    """Convolutional block: (3x3 conv, BN, ReLU) twice."""
    return conv_bn_relu(conv_bn_relu(x, p["unit1"]), p["unit2"])


def _s6(p):
    return S6Params.from_dict(p)


# -- blocks -----------------------------------------------------------------

def cbam_forward(x, p):
    """Channel attention followed by spatial attention."""
    x = as_float(x)
    c = x.shape[0]
    fc1 = np.asarray(p["fc1"], dtype=x.dtype)
    fc2 = np.asarray(p["fc2"], dtype=x.dtype)
    if fc1.shape[1] != c or fc2.shape[0] != c or c % fc1.shape[0]:
        raise ValueError(f"CBAM weights {fc1.shape}/{fc2.shape} do not fit {c} channels")

    def mlp(v):
        return fc2 @ relu(fc1 @ v)

    ch_gate = sigmoid(mlp(global_avg_pool(x)) + mlp(global_max_pool(x)))
    x = x * ch_gate[:, None, None]
    pooled = np.stack([x.mean(axis=0), x.max(axis=0)])
    sp_gate = sigmoid(conv2d(pooled, p["spatial"]))
    return x * sp_gate


def sgfb_forward(x, p, backend="parallel"):
    """Self-modality global feature block: bidirectional S6 over the raster sequence."""
    x = as_float(x)
    _, h, w = x.shape
    seq = im2seq(conv(x, p["proj_in"]))
    out = bidirectional(s6_forward, (seq,), _s6(p["s6_fwd"]), _s6(p["s6_bwd"]), backend=backend)
    return conv(seq2im(out, h, w), p["proj_out"])


def cgfb_forward(x, y, p, backend="parallel"):
    """Cross-modality global feature block: ``x`` drives the dynamics, ``y`` is scanned."""
    x, y = as_float(x), as_float(y)
    if x.shape != y.shape:
        raise ValueError(f"CGFB inputs differ in shape: {x.shape} vs {y.shape}")
    _, h, w = x.shape
    sx = im2seq(conv(x, p["proj_x"]))
    sy = im2seq(conv(y, p["proj_y"]))
    out = bidirectional(cm_s6_forward, (sx, sy), _s6(p["cms6_fwd"]), _s6(p["cms6_bwd"]),
                        backend=backend)
    return conv(seq2im(out, h, w), p["proj_out"])


def smdb_forward(x, p, backend="parallel"):
    x = as_float(x)
    u = x + cbam_forward(sgfb_forward(bn(x, p["bn_in"]), p["sgfb"], backend), p["cbam"])
    return u + cb_forward(bn(u, p["bn_mid"]), p["cb"])


def cmdb_branches(x, y, p, backend="parallel"):
    """The two cross-modal arms ``(x', y')`` before they are fused."""
    x, y = as_float(x), as_float(y)
    if x.shape != y.shape:
        raise ValueError(f"CMDB inputs differ in shape: {x.shape} vs {y.shape}")
    xn, yn = bn(x, p["bn_x"]), bn(y, p["bn_y"])
    x2 = x + cbam_forward(cgfb_forward(xn, yn, p["cgfb_x"], backend), p["cbam_x"])
    y2 = y + cbam_forward(cgfb_forward(yn, xn, p["cgfb_y"], backend), p["cbam_y"])
    return x2, y2


def cmdb_forward(x, y, p, backend="parallel"):
    z = conv(concat_channels(*cmdb_branches(x, y, p, backend)), p["fuse"])
    return z + cb_forward(bn(z, p["bn_mid"]), p["cb"])


def seb_forward(f, priors: PriorSet, p):
    """Saliency enhancement block: prior-weighted features refined by CBAM, plus residual."""
    f = as_float(f)
    _, h, w = f.shape
    out = f
    for i, prior in enumerate((priors.S1, priors.S2, priors.S3), start=1):
        s = bilinear_resize(as_float(prior, f.dtype), h, w)
        out = out + cbam_forward(f * s, p[f"cbam{i}"])
    return out


def sem_forward(features, priors: PriorSet, p):
    if len(features) != 4:
        raise ValueError(f"SEM expects 4 feature scales, got {len(features)}")
    return [seb_forward(f, priors, p[f"seb{s}"]) for s, f in enumerate(features, start=1)]


def m2db_forward(fx, fy, fm_higher, p, backend="parallel"):
    """One decoder scale. ``fm_higher`` is ``None`` at the coarsest scale."""
    a = smdb_forward(cb_forward(fx, p["cb_x"]), p["smdb_x"], backend)
    b = smdb_forward(cb_forward(fy, p["cb_y"]), p["smdb_y"], backend)
    c = cmdb_forward(a, b, p["cmdb"], backend)
    if fm_higher is not None:
        c = c + bilinear_resize(fm_higher, *c.shape[1:])
    return smdb_forward(c, p["smdb_out"], backend)


def rm_forward(fm1, p, return_features=False):
    """Reconstruct the full-resolution saliency map from the finest decoder feature.

    With ``return_features=True`` also returns the input of the final 1x1
    head, which is what a gradient step on the head needs.
    """
    fm1 = as_float(fm1)
    _, h, w = fm1.shape
    z = cb_forward(fm1, p["cb1"])
    z = bilinear_resize(z, 2 * h, 2 * w)
    z = cb_forward(z, p["cb2"])
    feats = bilinear_resize(z, 4 * h, 4 * w)
    pred = sigmoid(conv(feats, p["head"]))
    return (pred, feats) if return_features else pred


def backbone_forward(img, p):
    """Four feature scales at strides 4, 8, 16, 32, each projected to the decoder width."""
    img = as_float(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"backbone input must be [3, H, W], got {img.shape}")
    h, w = img.shape[1:]
    if h % 32 or w % 32:
        raise ValueError(f"backbone input size {h}x{w} must be a multiple of 32")
    z = conv_bn_relu(img, p["stem1"], stride=2)
    z = conv_bn_relu(z, p["stem2"], stride=2)
    feats = []
    for s in (1, 2, 3, 4):
        z = conv_bn_relu(z, p[f"stage{s}"], stride=1 if s == 1 else 2)
        feats.append(conv(z, p[f"proj{s}"]))
    return feats
