"""Learned frequency mask export and Grad-CAM sensitivity maps."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import numerics
from .errors import NoMaskError, ShapeError, UnsupportedModelError
from .model import SAFDNet
from .signal_io import CHANNELS, TARGET_HZ, Segment


def channel_names(C: int) -> tuple[str, ...]:
    if C == len(CHANNELS):
        return CHANNELS
    if C == 1:
        return ("ABP",)
    return tuple(f"ch{i}" for i in range(C))


@dataclass
class MaskExport:
    freqs_hz: np.ndarray  # (F,)
    mask: np.ndarray  # (C, F)
    channel_names: tuple[str, ...]

    def to_csv(self) -> str:
        lines = [",".join(("freq_hz",) + tuple(self.channel_names))]
        for i, f in enumerate(self.freqs_hz):
            lines.append(",".join([repr(float(f))] + [repr(float(v)) for v in self.mask[:, i]]))
        return "\n".join(lines) + "\n"

    def bin_of(self, freq_hz: float) -> int:
        return int(np.argmin(np.abs(self.freqs_hz - freq_hz)))


@dataclass
class SensitivityMap:
    saliency: np.ndarray  # (C, T), nonnegative
    probability: float
    case_id: str | None = None
    t_start: float | None = None

    def to_csv(self, channel_names: tuple[str, ...]) -> str:
        lines = [",".join(("t_s",) + tuple(channel_names))]
        for t in range(self.saliency.shape[1]):
            lines.append(",".join([repr(t / TARGET_HZ)] + [repr(float(v)) for v in self.saliency[:, t]]))
        return "\n".join(lines) + "\n"


def _load(model_or_path) -> SAFDNet:
    if isinstance(model_or_path, SAFDNet):
        return model_or_path
    from .training import load_checkpoint

    return load_checkpoint(os.fspath(model_or_path))


def export_filter_mask(checkpoint) -> MaskExport:
    """``sigmoid(w)`` with its frequency axis; accepts a model or a checkpoint directory."""
    model = _load(checkpoint)
    if model.filter_w is None:
        raise NoMaskError(f"the {model.ablation} variant has no spectral mask")
    w = model.filter_w.detach().to(torch.float64).numpy()
    T = model.hyper.T
    mask = numerics.sigmoid(w)  # sign-split, so large negative w stays above 0
    freqs = np.arange(w.shape[1]) * (TARGET_HZ / T)
    return MaskExport(freqs, mask, channel_names(model.hyper.C))


def sensitivity_map(checkpoint, segment: Segment | np.ndarray) -> SensitivityMap:
    """Grad-CAM on the last conv map, spread over channels by input-gradient norms.

    The class map is ``ReLU(sum_k a_k A_k)`` with ``a_k`` the time-mean of
    d score / d A_k, linearly upsampled to T.  The score is the logit of the
    predicted class: the model logit when p >= 0.5, its negation otherwise,
    so a confident negative is explained by what drives it negative instead
    of collapsing to an all-zero map.  Each input channel gets that
    map times the L2 norm over time of d score / d x for the standardized
    input, so channels in different units are comparable.
    """
    model = _load(checkpoint)
    if model.ablation not in ("full", "no_safb"):
        raise UnsupportedModelError(f"sensitivity maps need the attention model, not {model.ablation}")
    data = segment.data if isinstance(segment, Segment) else np.asarray(segment)
    h = model.hyper
    if data.shape != (h.C, h.T):
        raise ShapeError(f"segment shape {data.shape} does not match (C, T) = {(h.C, h.T)}")
    model.eval()
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(data, dtype=dtype)[None]
    z = ((x - model.input_mean[:, None]) / model.input_std[:, None]).detach().requires_grad_(True)
    # rerun the model from the standardized input so z is a leaf
    x_raw = z * model.input_std[:, None] + model.input_mean[:, None]
    _, h_cnn, fmap, h_lstm = model.paths(x_raw)
    logit = model.head(h_cnn, h_lstm, return_logit=True)[0]
    score = logit if logit.item() >= 0 else -logit
    g_fmap, g_z = torch.autograd.grad(score, (fmap, z))
    with torch.no_grad():
        weights = g_fmap[0].mean(dim=1)  # (d_s,)
        cam = torch.relu((weights[:, None] * fmap[0]).sum(dim=0))  # (T_s,)
        cam = F.interpolate(cam[None, None], size=h.T, mode="linear", align_corners=True)[0, 0]
        scale = g_z[0].norm(dim=1)  # (C,)
        sal = (scale[:, None] * cam[None, :]).to(torch.float64).numpy()
        p = float(torch.sigmoid(logit))
    cid = segment.case_id if isinstance(segment, Segment) else None
    t0 = segment.t_start if isinstance(segment, Segment) else None
    return SensitivityMap(np.maximum(sal, 0.0), p, cid, t0)
