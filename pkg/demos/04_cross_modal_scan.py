"""
Cross-modal scanning
====================

In the cross-modal variant one modality decides *how* to scan (its features
produce B, C and the step size) while the other modality is *what* gets
scanned. Feeding the same sequence to both roles gives back the ordinary
selective scan bit for bit.
"""

import numpy as np

from ssnet import S6Params, cm_s6_forward, s6_forward
from ssnet.ssm import bidirectional

rng = np.random.default_rng(3)
L, D, N = 64, 8, 8
p = S6Params.init(D, N, rng)
rgb_seq = rng.standard_normal((L, D)).astype(np.float32)
depth_seq = rng.standard_normal((L, D)).astype(np.float32)

same = np.array_equal(cm_s6_forward(rgb_seq, rgb_seq, p), s6_forward(rgb_seq, p))
print("cm_s6(f, f) == s6(f):", same)

# Nothing to scan means nothing comes out, however busy the driving sequence is.
print("zero input ->", float(np.abs(cm_s6_forward(rgb_seq, np.zeros_like(depth_seq), p)).max()))

# Swapping the roles changes the result: the operator is not symmetric.
a = cm_s6_forward(rgb_seq, depth_seq, p)
b = cm_s6_forward(depth_seq, rgb_seq, p)
print(f"role swap changes the output by up to {np.abs(a - b).max():.3f}")

# Both directions, each with its own parameters, concatenated along channels.
p_back = S6Params.init(D, N, rng)
out = bidirectional(cm_s6_forward, (rgb_seq, depth_seq), p, p_back)
print("bidirectional output shape:", out.shape)
