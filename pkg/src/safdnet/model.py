"""SAFDNet: learnable spectral mask, CNN/LSTM paths, bidirectional cross attention.

Tensors are batch-first: inputs are (B, C, T), path features (B, T_*, d_*).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import numerics
from .errors import ShapeError

ABLATIONS = ("full", "no_safb", "no_cross_attn", "single_path")


@dataclass(frozen=True)
class HyperConfig:
    C: int = 4
    T: int = 3000
    conv: tuple[tuple[int, int, int], ...] = ((5, 2, 32), (5, 2, 64), (5, 2, 64))
    lstm_hidden: int = 64
    lstm_pool: int = 10
    d_k: int = 64
    d_v: int = 64
    dropout_p: float = 0.3
    horizon_min: int = 5

    def __post_init__(self):
        object.__setattr__(self, "conv", tuple(tuple(int(v) for v in layer) for layer in self.conv))
        if self.d_k < 1 or self.d_v < 1:
            raise ValueError("d_k and d_v must be at least 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if not self.conv:
            raise ValueError("conv stack must have at least one layer")

    @property
    def F(self) -> int:
        return numerics.n_bins(self.T)

    def conv_lengths(self) -> list[int]:
        lengths = [self.T]
        for i, (k, s, _) in enumerate(self.conv):
            if lengths[-1] < k:
                raise ShapeError(f"conv layer {i}: input length {lengths[-1]} shorter than kernel {k}")
            lengths.append(math.ceil(lengths[-1] / s))
        return lengths

    @property
    def T_s(self) -> int:
        return self.conv_lengths()[-1]

    @property
    def d_s(self) -> int:
        return self.conv[-1][2]

    @property
    def T_l(self) -> int:
        if self.T // self.lstm_pool < 1:
            raise ShapeError(f"T={self.T} shorter than lstm_pool={self.lstm_pool}")
        return self.T // self.lstm_pool

    def head_inputs(self, ablation: str = "full") -> int:
        if ablation in ("full", "no_safb"):
            return self.T_s * self.d_v + self.T_l * self.d_v
        if ablation == "no_cross_attn":
            return self.T_s * self.d_s + self.T_l * self.lstm_hidden
        if ablation == "single_path":
            return self.T_s * self.d_s
        raise ValueError(f"unknown ablation {ablation!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [list(layer) for layer in self.conv]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperConfig":
        return cls(**{**d, "conv": tuple(tuple(layer) for layer in d.get("conv", cls.conv))})


# ---------------------------------------------------------------- operations


def safb_forward(x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """``irfft(rfft(x) * sigmoid(w))`` per channel; x is (..., C, T), w is (C, F)."""
    T = x.shape[-1]
    if w.shape != (x.shape[-2], numerics.n_bins(T)):
        raise ShapeError(f"filter weights {tuple(w.shape)} do not fit input {tuple(x.shape)}")
    return numerics.irfft(numerics.rfft(x) * numerics.sigmoid(w), T)


def cnn_path(x: torch.Tensor, layers: Sequence[tuple[torch.Tensor, torch.Tensor, int]]):
    """Strided 'same' convolutions with ReLU; returns (H_CNN, last feature map).

    H_CNN is time-major (B, T_s, d_s); the feature map is channel-major (B, d_s, T_s).
    """
    h = x
    for i, (w, b, stride) in enumerate(layers):
        if h.shape[-1] < w.shape[-1]:
            raise ShapeError(f"conv layer {i}: input length {h.shape[-1]} shorter than kernel {w.shape[-1]}")
        h = torch.relu(numerics.conv1d_same(h, w, b, stride))
    return h.transpose(1, 2), h


def lstm_path(x: torch.Tensor, lstm: nn.LSTM, pool: int) -> torch.Tensor:
    """Average-pool time by ``pool`` (remainder dropped), then run the LSTM."""
    if x.shape[-1] // pool < 1:
        raise ShapeError(f"input length {x.shape[-1]} shorter than lstm_pool {pool}")
    pooled = F.avg_pool1d(x, kernel_size=pool, stride=pool) if pool > 1 else x
    out, _ = lstm(pooled.transpose(1, 2))
    return out


def cross_attention(query, kv, w_q, w_k, w_v):
    """``softmax(Q K^T / sqrt(d_k)) V`` with Q from ``query`` and K, V from ``kv``."""
    if query.shape[-1] != w_q.shape[0] or kv.shape[-1] != w_k.shape[0] or kv.shape[-1] != w_v.shape[0]:
        raise ShapeError(
            f"projection shapes {tuple(w_q.shape)}, {tuple(w_k.shape)}, {tuple(w_v.shape)} "
            f"do not fit features {tuple(query.shape)} and {tuple(kv.shape)}"
        )
    if w_q.shape[1] != w_k.shape[1]:
        raise ShapeError("query and key projections disagree on d_k")
    q = query @ w_q
    k = kv @ w_k
    v = kv @ w_v
    scores = q @ k.transpose(-1, -2) / math.sqrt(w_q.shape[1])
    return numerics.softmax(scores, axis=-1) @ v


def dropout(x: torch.Tensor, p: float, generator: torch.Generator | None = None) -> torch.Tensor:
    """Inverted dropout drawing its mask from ``generator``."""
    if p == 0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= p
    return x * keep / (1.0 - p)


def fuse_and_classify(
    a_s2l: torch.Tensor,
    a_l2s: torch.Tensor | None,
    w_out: torch.Tensor,
    b_out: torch.Tensor,
    dropout_p: float = 0.0,
    dropout_active: bool = False,
    generator: torch.Generator | None = None,
    return_logit: bool = False,
):
    parts = [a_s2l.flatten(1)]
    if a_l2s is not None:
        parts.append(a_l2s.flatten(1))
    fused = torch.cat(parts, dim=1)
    if dropout_active:
        fused = dropout(fused, dropout_p, generator)
    logit = (fused @ w_out).squeeze(-1) + b_out
    return logit if return_logit else torch.sigmoid(logit)


# ---------------------------------------------------------------- module


def _uniform(shape, fan_in, generator, dtype):
    bound = math.sqrt(1.0 / fan_in)
    t = torch.empty(shape, dtype=dtype)
    nn.init.uniform_(t, -bound, bound, generator=generator)
    return nn.Parameter(t)


class SAFDNet(nn.Module):
    """Full model plus the ablation variants selected by ``ablation``.

    Inputs are standardized with the per-channel ``input_mean``/``input_std``
    buffers (fitted by the trainer) before the spectral filter.
    """

    def __init__(self, hyper: HyperConfig, ablation: str = "full", seed: int = 0,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        if ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        self.hyper = hyper
        self.ablation = ablation
        self.seed = seed
        self.dropout_generator: torch.Generator | None = None
        g = torch.Generator().manual_seed(seed)
        h = hyper
        h.conv_lengths()

        self.register_buffer("input_mean", torch.zeros(h.C, dtype=dtype))
        self.register_buffer("input_std", torch.ones(h.C, dtype=dtype))

        self.filter_w = nn.Parameter(torch.zeros(h.C, h.F, dtype=dtype)) if ablation != "no_safb" else None

        self.conv_w = nn.ParameterList()
        self.conv_b = nn.ParameterList()
        c_in = h.C
        for k, _, c_out in h.conv:
            self.conv_w.append(_uniform((c_out, c_in, k), c_in * k, g, dtype))
            self.conv_b.append(_uniform((c_out,), c_in * k, g, dtype))
            c_in = c_out

        self.lstm = None
        if ablation != "single_path":
            H = h.lstm_hidden
            self.lstm = nn.LSTM(h.C, H, batch_first=True, dtype=dtype)
            with torch.no_grad():
                for name, p in self.lstm.named_parameters():
                    nn.init.uniform_(p, -1 / math.sqrt(H), 1 / math.sqrt(H), generator=g)
                self.lstm.bias_ih_l0[H : 2 * H] = 1.0
                self.lstm.bias_hh_l0[H : 2 * H] = 0.0

        self.attn = nn.ParameterDict()
        if ablation in ("full", "no_safb"):
            d_s, d_l = h.d_s, h.lstm_hidden
            self.attn["s2l_q"] = _uniform((d_s, h.d_k), d_s, g, dtype)
            self.attn["s2l_k"] = _uniform((d_l, h.d_k), d_l, g, dtype)
            self.attn["s2l_v"] = _uniform((d_l, h.d_v), d_l, g, dtype)
            self.attn["l2s_q"] = _uniform((d_l, h.d_k), d_l, g, dtype)
            self.attn["l2s_k"] = _uniform((d_s, h.d_k), d_s, g, dtype)
            self.attn["l2s_v"] = _uniform((d_s, h.d_v), d_s, g, dtype)

        d_f = h.head_inputs(ablation)
        self.head_w = _uniform((d_f, 1), d_f, g, dtype)
        self.head_b = _uniform((), d_f, g, dtype)

    # parameter groups, used by gradient checks and dead-parameter tests
    def param_groups(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {}
        for name, _ in self.named_parameters():
            key = name.split(".")[0].split("_")[0]
            key = {"filter": "filter", "conv": "cnn", "lstm": "lstm", "attn": "attn", "head": "head"}[key]
            groups.setdefault(key, []).append(name)
        return groups

    def _layers(self):
        return [(w, b, s) for w, b, (_, s, _) in zip(self.conv_w, self.conv_b, self.hyper.conv)]

    def paths(self, x: torch.Tensor):
        """Filtered input, (H_CNN, last conv map) and H_LSTM for a (B, C, T) batch."""
        h = self.hyper
        if x.shape[-2:] != (h.C, h.T):
            raise ShapeError(f"input {tuple(x.shape)} does not match (C, T) = {(h.C, h.T)}")
        x = (x - self.input_mean[:, None]) / self.input_std[:, None]
        x_hat = safb_forward(x, self.filter_w) if self.filter_w is not None else x
        h_cnn, fmap = cnn_path(x_hat, self._layers())
        h_lstm = lstm_path(x_hat, self.lstm, h.lstm_pool) if self.lstm is not None else None
        return x_hat, h_cnn, fmap, h_lstm

    def head(self, h_cnn, h_lstm, return_logit=False):
        a = self.attn
        if self.ablation in ("full", "no_safb"):
            first = cross_attention(h_cnn, h_lstm, a["s2l_q"], a["s2l_k"], a["s2l_v"])
            second = cross_attention(h_lstm, h_cnn, a["l2s_q"], a["l2s_k"], a["l2s_v"])
        else:
            first, second = h_cnn, h_lstm
        return fuse_and_classify(
            first, second, self.head_w, self.head_b,
            self.hyper.dropout_p, self.training, self.dropout_generator, return_logit,
        )

    def logit(self, x: torch.Tensor) -> torch.Tensor:
        _, h_cnn, _, h_lstm = self.paths(x)
        return self.head(h_cnn, h_lstm, return_logit=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logit(x))


def forward(x, model: SAFDNet, mode: str = "eval") -> torch.Tensor:
    """Probability for a single (C, T) segment or a (B, C, T) batch."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    model.train(mode == "train")
    x = torch.as_tensor(x, dtype=next(model.parameters()).dtype)
    single = x.dim() == 2
    p = model(x[None] if single else x)
    return p[0] if single else p
