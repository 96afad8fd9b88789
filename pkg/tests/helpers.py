"""Shared builders for tests."""

from __future__ import annotations

import torch

from safdnet.model import HyperConfig, SAFDNet
from safdnet.numerics import gradcheck
from safdnet.training import bce_loss

TINY = HyperConfig(C=2, T=64, conv=((5, 2, 4), (5, 2, 4)), lstm_hidden=4, lstm_pool=8, d_k=3, d_v=3)

# Central differences in f64 have an absolute floor of about 1e-12 from
# roundoff, so entries with |grad| < 1e-7 can miss a 1e-5 relative tolerance
# at small eps, while eps = 1e-3 can step across ReLU kinks.  eps = 1e-4 and
# attention projections scaled up (sharper softmax, larger key/query
# gradients) sit between the two failure modes.
GRADCHECK_EPS = 1e-4
ATTN_SCALE = 3.0


def model_gradcheck(ablation: str, seed: int = 0, hyper: HyperConfig = TINY):
    """Finite-difference check of BCE(forward(x), y) over every parameter, eval mode."""
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(1, hyper.C, hyper.T, dtype=torch.float64, generator=g)
    y = torch.tensor([1.0], dtype=torch.float64)
    model = SAFDNet(hyper, ablation, seed=seed, dtype=torch.float64).eval()
    params = {k: v.detach().clone() for k, v in model.named_parameters()}
    for k in params:
        if k.startswith("attn."):
            params[k] = params[k] * ATTN_SCALE
    if "filter_w" in params:
        params["filter_w"] = torch.randn(params["filter_w"].shape, dtype=torch.float64, generator=g)

    def loss(p):
        return bce_loss(torch.func.functional_call(model, p, (x,)), y)

    return gradcheck(loss, params, eps=GRADCHECK_EPS, tol=1e-5, op_name=f"safdnet[{ablation}]")
