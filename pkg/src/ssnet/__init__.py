"""RGB-D salient object detection with saliency priors and selective-scan state space blocks.

Submodules:

* :mod:`ssnet.tensor_core` -- numpy array substrate (conv, BN, resize, sequence reshapes)
* :mod:`ssnet.depth_ace` -- adaptive contrast enhancement of depth maps
* :mod:`ssnet.priors` -- depth-front, local-contrast and centre priors
* :mod:`ssnet.ssm` -- S6 / cross-modal S6 scans, parallel scan, backward pass
* :mod:`ssnet.blocks` -- CBAM, SGFB/CGFB, SMDB/CMDB, SEB/SEM, M2DB, RM, backbone
* :mod:`ssnet.network` -- full model, weights I/O, hybrid loss
* :mod:`ssnet.metrics` -- MAE, F-beta, S-measure, E-measure, PR curves
"""
from .depth_ace import ace, enhance_depth, percentile_bounds
from .network import SSNetConfig, init_weights, load_weights, save_weights, ssnet_forward
from .priors import compute_priors
from .ssm import S6Params, cm_s6_forward, s6_forward

__version__ = "0.1.0"

__all__ = [
    "ace",
    "enhance_depth",
    "percentile_bounds",
    "SSNetConfig",
    "init_weights",
    "load_weights",
    "save_weights",
    "ssnet_forward",
    "compute_priors",
    "S6Params",
    "cm_s6_forward",
    "s6_forward",
]
