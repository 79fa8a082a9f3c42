import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssnet import blocks
from ssnet.priors import PriorSet, compute_priors
from ssnet.ssm import S6Params, scan_inputs
from ssnet.tensor_core import bilinear_resize, sigmoid

from _oracles import conv2d_loops, s6_loops


def _zeros_like(tree):
    return {k: _zeros_like(v) if isinstance(v, dict) else np.zeros_like(v) for k, v in tree.items()}


def _zero_branch(p):
    """Zero every conv / CBAM weight but keep S6 and BN parameters valid."""
    out = {}
    for k, v in p.items():
        if isinstance(v, dict):
            if k.startswith(("s6_", "cms6_")) or k.startswith("bn"):
                out[k] = v
            else:
                out[k] = _zero_branch(v)
        else:
            out[k] = np.zeros_like(v) if k in ("weight", "bias", "fc1", "fc2", "spatial") else v
    return out


def _conv(x, p, stride=1):
    w = p["weight"]
    return conv2d_loops(x, w, p.get("bias"), stride, w.shape[2] // 2)


def _bn(x, p):
    g, b, m, v = (p[k][:, None, None] for k in ("gamma", "beta", "running_mean", "running_var"))
    return (x - m) / np.sqrt(v + blocks.BN_EPS) * g + b


def _cb(x, p):
    for unit in ("unit1", "unit2"):
        x = np.maximum(_bn(_conv(x, p[unit]["conv"]), p[unit]["bn"]), 0)
    return x


def _cbam(x, p):
    def mlp(v):
        return p["fc2"] @ np.maximum(p["fc1"] @ v, 0)

    gate = 1 / (1 + np.exp(-(mlp(x.mean(axis=(1, 2))) + mlp(x.max(axis=(1, 2))))))
    x = x * gate[:, None, None]
    pooled = np.stack([x.mean(axis=0), x.max(axis=0)])
    return x * (1 / (1 + np.exp(-conv2d_loops(pooled, p["spatial"], None, 1, 3))))


def _seq(x):
    return x.reshape(x.shape[0], -1).T


def _img(s, h, w):
    return s.T.reshape(-1, h, w)


def _bi(fx, fy, pf, pb):
    pf, pb = S6Params.from_dict(pf), S6Params.from_dict(pb)
    fwd = s6_loops(*scan_inputs(fx, fy, pf))
    bwd = s6_loops(*scan_inputs(fx[::-1], fy[::-1], pb))[::-1]
    return np.concatenate([fwd, bwd], axis=1)


def _sgfb(x, p):
    _, h, w = x.shape
    s = _seq(_conv(x, p["proj_in"]))
    return _conv(_img(_bi(s, s, p["s6_fwd"], p["s6_bwd"]), h, w), p["proj_out"])


def _cgfb(x, y, p):
    _, h, w = x.shape
    sx, sy = _seq(_conv(x, p["proj_x"])), _seq(_conv(y, p["proj_y"]))
    return _conv(_img(_bi(sx, sy, p["cms6_fwd"], p["cms6_bwd"]), h, w), p["proj_out"])


def _smdb(x, p):
    u = x + _cbam(_sgfb(_bn(x, p["bn_in"]), p["sgfb"]), p["cbam"])
    return u + _cb(_bn(u, p["bn_mid"]), p["cb"])


def _cmdb(x, y, p):
    xn, yn = _bn(x, p["bn_x"]), _bn(y, p["bn_y"])
    x2 = x + _cbam(_cgfb(xn, yn, p["cgfb_x"]), p["cbam_x"])
    y2 = y + _cbam(_cgfb(yn, xn, p["cgfb_y"]), p["cbam_y"])
    z = _conv(np.concatenate([x2, y2]), p["fuse"])
    return z + _cb(_bn(z, p["bn_mid"]), p["cb"])


def _perturb_bn(rng, p):
    """Make batch norms non-trivial so the oracles exercise them."""
    for k, v in p.items():
        if isinstance(v, dict):
            if "running_var" in v:
                c = v["gamma"].shape[0]
                v.update(gamma=rng.uniform(0.5, 1.5, c), beta=rng.normal(0, 0.1, c),
                         running_mean=rng.normal(0, 0.1, c), running_var=rng.uniform(0.5, 2, c))
            else:
                _perturb_bn(rng, v)
    return p


C, N, H, W = 4, 3, 6, 5


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_cbam_zero_weights_quarter(rng):
    x = rng.standard_normal((C, H, W))
    p = _zeros_like(blocks.init_cbam(rng, C))
    np.testing.assert_allclose(blocks.cbam_forward(x, p), x / 4, rtol=1e-15)


def test_cbam_constant_input_constant_spatial_gate(rng):
    x = np.ones((C, 9, 9)) * rng.random((C, 1, 1))
    p = blocks.init_cbam(rng, C)
    p["spatial"] = np.ones_like(p["spatial"]) * 0.1
    out = blocks.cbam_forward(x, p)
    # interior pixels see the full 7x7 window
    centre = out[:, 3:6, 3:6]
    np.testing.assert_allclose(centre, centre[:, :1, :1] * np.ones_like(centre), rtol=1e-12)


def test_cbam_matches_oracle_and_rejects_bad_ratio(rng):
    x = rng.standard_normal((8, H, W))
    p = blocks.init_cbam(rng, 8)
    np.testing.assert_allclose(blocks.cbam_forward(x, p), _cbam(x, p), atol=1e-12)
    with pytest.raises(ValueError, match="divide"):
        blocks.init_cbam(rng, 6)


def test_sgfb(rng):
    p = blocks.init_sgfb(rng, C, N)
    x = rng.standard_normal((C, H, W))
    out = blocks.sgfb_forward(x, p)
    assert out.shape == x.shape
    np.testing.assert_allclose(out, _sgfb(x, p), atol=1e-10)
    assert not blocks.sgfb_forward(np.zeros((C, H, W)), p).any()


def test_cgfb(rng):
    p = blocks.init_cgfb(rng, C, N)
    x, y = rng.standard_normal((2, C, H, W))
    np.testing.assert_allclose(blocks.cgfb_forward(x, y, p), _cgfb(x, y, p), atol=1e-10)
    # no SSM excitation from a zero y; only the output bias survives
    p["proj_out"]["bias"] = rng.standard_normal(C)
    out = blocks.cgfb_forward(x, np.zeros_like(y), p)
    np.testing.assert_allclose(out, np.broadcast_to(p["proj_out"]["bias"][:, None, None], out.shape),
                               atol=1e-15)


def test_cgfb_reduces_to_sgfb(rng):
    pc = blocks.init_cgfb(rng, C, N)
    pc["proj_y"] = pc["proj_x"]
    ps = {"proj_in": pc["proj_x"], "s6_fwd": pc["cms6_fwd"], "s6_bwd": pc["cms6_bwd"],
          "proj_out": pc["proj_out"]}
    x = rng.standard_normal((C, H, W))
    np.testing.assert_array_equal(blocks.cgfb_forward(x, x, pc), blocks.sgfb_forward(x, ps))


def test_smdb(rng):
    p = _perturb_bn(rng, blocks.init_smdb(rng, C, N))
    x = rng.standard_normal((C, H, W))
    out = blocks.smdb_forward(x, p)
    assert out.shape == x.shape
    np.testing.assert_allclose(out, _smdb(x, p), atol=1e-10)
    zero = _zero_branch(blocks.init_smdb(rng, C, N))
    np.testing.assert_array_equal(blocks.smdb_forward(x, zero), x)


def test_cmdb(rng):
    p = _perturb_bn(rng, blocks.init_cmdb(rng, C, N))
    x, y = rng.standard_normal((2, C, H, W))
    out = blocks.cmdb_forward(x, y, p)
    assert out.shape == x.shape
    np.testing.assert_allclose(out, _cmdb(x, y, p), atol=1e-10)


def test_cmdb_symmetry(rng):
    p = blocks.init_cmdb(rng, C, N)
    p["bn_y"], p["cgfb_y"], p["cbam_y"] = p["bn_x"], p["cgfb_x"], p["cbam_x"]
    x = rng.standard_normal((C, H, W))
    a, b = blocks.cmdb_branches(x, x, p)
    np.testing.assert_array_equal(a, b)


def test_cmdb_zero_branches_identity(rng):
    p = _zero_branch(blocks.init_cmdb(rng, C, N))
    p["fuse"]["weight"][:, :C, 0, 0] = np.eye(C)  # z = x'
    x, y = rng.standard_normal((2, C, H, W))
    a, b = blocks.cmdb_branches(x, y, p)
    np.testing.assert_array_equal(a, x)
    np.testing.assert_array_equal(b, y)
    np.testing.assert_allclose(blocks.cmdb_forward(x, y, p), x, atol=1e-15)


def _priors(rng, h, w, value=None):
    if value is not None:
        m = np.full((1, h, w), value)
        return PriorSet(m, m, m, m, 1 - m, m, m, m, 0.0)
    return compute_priors(rng.random((3, h, w)), rng.random((1, h, w)))


def test_seb(rng):
    f = rng.standard_normal((C, H, W))
    zero = _zeros_like(blocks.init_seb(rng, C))
    np.testing.assert_allclose(blocks.seb_forward(f, _priors(rng, 12, 10, 1.0), zero),
                               f + 3 * f / 4, rtol=1e-14)
    p = blocks.init_seb(rng, C)
    np.testing.assert_array_equal(blocks.seb_forward(f, _priors(rng, 12, 10, 0.0), p), f)
    pri = _priors(rng, 12, 10)
    want = f + sum(_cbam(f * bilinear_resize(s, H, W), p[f"cbam{i}"])
                   for i, s in enumerate((pri.S1, pri.S2, pri.S3), start=1))
    np.testing.assert_allclose(blocks.seb_forward(f, pri, p), want, atol=1e-10)


def test_sem(rng):
    p = blocks.init_sem(rng, C)
    feats = [rng.standard_normal((C, 16 // 2 ** s, 16 // 2 ** s)) for s in range(4)]
    pri = _priors(rng, 64, 64)
    outs = blocks.sem_forward(feats, pri, p)
    for s, (f, o) in enumerate(zip(feats, outs), start=1):
        assert o.shape == f.shape
        np.testing.assert_array_equal(o, blocks.seb_forward(f, pri, p[f"seb{s}"]))
    zero = blocks.sem_forward(feats, _priors(rng, 64, 64, 0.0), p)
    for f, o in zip(feats, zero):
        np.testing.assert_array_equal(o, f)
    with pytest.raises(ValueError):
        blocks.sem_forward(feats[:3], pri, p)


def test_m2db(rng):
    p = _perturb_bn(rng, blocks.init_m2db(rng, C, N))
    fx, fy = rng.standard_normal((2, C, 4, 4))
    top = blocks.m2db_forward(fx, fy, None, p)
    assert top.shape == (C, 4, 4)
    np.testing.assert_array_equal(blocks.m2db_forward(fx, fy, np.zeros((C, 2, 2)), p), top)
    hi = rng.standard_normal((C, 2, 2))
    a = _smdb(_cb(fx, p["cb_x"]), p["smdb_x"])
    b = _smdb(_cb(fy, p["cb_y"]), p["smdb_y"])
    c = _cmdb(a, b, p["cmdb"]) + bilinear_resize(hi, 4, 4)
    np.testing.assert_allclose(blocks.m2db_forward(fx, fy, hi, p), _smdb(c, p["smdb_out"]),
                               atol=1e-9)


def test_rm(rng):
    p = blocks.init_rm(rng, C)
    fm = rng.standard_normal((C, 4, 4))
    out = blocks.rm_forward(fm, p)
    assert out.shape == (1, 16, 16)
    assert out.min() > 0 and out.max() < 1
    np.testing.assert_array_equal(blocks.rm_forward(fm, _zeros_like(p) | {"cb1": p["cb1"],
                                                                       "cb2": p["cb2"]}), 0.5)
    z = bilinear_resize(_cb(bilinear_resize(_cb(fm, p["cb1"]), 8, 8), p["cb2"]), 16, 16)
    np.testing.assert_allclose(out, sigmoid(_conv(z, p["head"])), atol=1e-12)


def test_backbone(rng):
    p = _perturb_bn(rng, blocks.init_backbone(rng, 2, C))
    img = rng.random((3, 32, 64))
    feats = blocks.backbone_forward(img, p)
    assert [f.shape for f in feats] == [(C, 8, 16), (C, 4, 8), (C, 2, 4), (C, 1, 2)]
    z = np.maximum(_bn(_conv(img, p["stem1"]["conv"], 2), p["stem1"]["bn"]), 0)
    z = np.maximum(_bn(_conv(z, p["stem2"]["conv"], 2), p["stem2"]["bn"]), 0)
    for s in range(1, 5):
        z = np.maximum(_bn(_conv(z, p[f"stage{s}"]["conv"], 1 if s == 1 else 2),
                           p[f"stage{s}"]["bn"]), 0)
        assert z.shape[0] == blocks.backbone_channels(2)[s - 1]
        np.testing.assert_allclose(feats[s - 1], _conv(z, p[f"proj{s}"]), atol=1e-10)
    again = blocks.backbone_forward(img, p)
    for a, b in zip(feats, again):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError, match="multiple of 32"):
        blocks.backbone_forward(rng.random((3, 48, 32)), p)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.integers(1, 2))
def test_blocks_finite_and_shape_preserving(seed, k):
    rng = np.random.default_rng(seed)
    h = w = 32 * k // 8
    x = rng.uniform(-10, 10, (C, h, w))
    y = rng.uniform(-10, 10, (C, h, w))
    for out in (blocks.smdb_forward(x, blocks.init_smdb(rng, C, N)),
                blocks.cmdb_forward(x, y, blocks.init_cmdb(rng, C, N)),
                blocks.m2db_forward(x, y, None, blocks.init_m2db(rng, C, N))):
        assert out.shape == x.shape and np.all(np.isfinite(out))
