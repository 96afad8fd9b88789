"""Mini-batch training with dev-AUROC model selection, and checkpoint files."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import CorruptCheckpointError, DataError, NumericalError, SplitLeakageError
from .evaluation import roc_auc
from .model import HyperConfig, SAFDNet
from .signal_io import Segment, stack

log = logging.getLogger(__name__)

CLAMP = 1e-7
DTYPES = {"f32": torch.float32, "f64": torch.float64}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    optimizer: str = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    momentum: float = 0.9
    precision: str = "f32"
    plateau_epochs: int = 3
    filter_lr_mult: float = 1.0
    filter_warmup_epochs: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.patience < 1:
            raise ValueError("batch_size and patience must be at least 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.precision not in DTYPES:
            raise ValueError("precision must be 'f32' or 'f64'")

    @property
    def dtype(self) -> torch.dtype:
        return DTYPES[self.precision]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_auroc: float
    wall_s: float = field(compare=False)


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_dev_auroc(self) -> float:
        return self.epochs[self.best_epoch].dev_auroc if self.epochs else float("nan")

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,dev_auroc,wall_s"]
        lines += [f"{r.epoch},{r.train_loss:.10g},{r.dev_auroc:.10g},{r.wall_s:.3f}" for r in self.epochs]
        return "\n".join(lines) + "\n"


def bce_loss(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = p.clamp(CLAMP, 1 - CLAMP)
    y = y.to(p.dtype)
    return -(y * torch.log(p) + (1 - y) * torch.log1p(-p)).mean()


def _tensors(segments: Sequence[Segment], dtype) -> tuple[torch.Tensor, torch.Tensor]:
    X, y = stack(segments)
    if np.any((y != 0) & (y != 1)):
        raise DataError("training data must be fully labeled with 0/1")
    return torch.as_tensor(X, dtype=dtype), torch.as_tensor(y, dtype=dtype)


def _check_splits(segments: Sequence[Segment], role: str):
    if not segments:
        raise DataError(f"{role} set is empty")
    if any(s.split == "test" for s in segments):
        raise SplitLeakageError(f"{role} set contains segments from the test split")


def predict(model: SAFDNet, segments_or_X, batch_size: int = 256) -> np.ndarray:
    """Eval-mode probabilities as a float64 numpy array."""
    model.eval()
    dtype = next(model.parameters()).dtype
    if isinstance(segments_or_X, (list, tuple)):
        X = torch.as_tensor(stack(segments_or_X)[0], dtype=dtype)
    else:
        X = torch.as_tensor(segments_or_X, dtype=dtype)
    out = []
    with torch.no_grad():
        for i in range(0, len(X), batch_size):
            out.append(model(X[i : i + batch_size]).double().numpy())
    return np.concatenate(out) if out else np.zeros(0)


def fit_input_scaling(model: SAFDNet, X: torch.Tensor) -> None:
    with torch.no_grad():
        mean = X.mean(dim=(0, 2))
        std = X.std(dim=(0, 2))
        model.input_mean.copy_(mean)
        model.input_std.copy_(torch.where(std > 0, std, torch.ones_like(std)))


def train(
    train_set: Sequence[Segment],
    dev_set: Sequence[Segment],
    model: SAFDNet,
    cfg: TrainConfig = TrainConfig(),
) -> tuple[SAFDNet, TrainLog]:
    """Train ``model`` in place and return it restored to its best dev epoch."""
    _check_splits(train_set, "train")
    _check_splits(dev_set, "dev")
    torch.manual_seed(cfg.seed)
    model.to(cfg.dtype)
    X, y = _tensors(train_set, cfg.dtype)
    X_dev, y_dev = _tensors(dev_set, cfg.dtype)
    if len(set(y_dev.tolist())) < 2:
        raise DataError("dev set needs both classes for AUROC model selection")
    fit_input_scaling(model, X)

    groups = [{"params": [p for n, p in model.named_parameters() if n != "filter_w"]}]
    if model.filter_w is not None:
        groups.append({"params": [model.filter_w], "lr": cfg.lr * cfg.filter_lr_mult})
    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(groups, lr=cfg.lr, betas=cfg.betas, eps=cfg.adam_eps)
    else:
        opt = torch.optim.SGD(groups, lr=cfg.lr, momentum=cfg.momentum)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, mode="min", factor=0.5, patience=cfg.plateau_epochs
    )
    shuffle = torch.Generator().manual_seed(cfg.seed)
    model.dropout_generator = torch.Generator().manual_seed(cfg.seed + 1)

    log_ = TrainLog()
    best_auc, best_state, stale = -math.inf, None, 0
    t0 = time.perf_counter()
    for epoch in range(cfg.max_epochs):
        model.train()
        if model.filter_w is not None:
            # a frozen mask gets no grad, so Adam leaves it alone
            model.filter_w.requires_grad_(epoch >= cfg.filter_warmup_epochs)
        order = torch.randperm(len(X), generator=shuffle)
        total, count = 0.0, 0
        for b, i in enumerate(range(0, len(X), cfg.batch_size)):
            idx = order[i : i + cfg.batch_size]
            opt.zero_grad()
            loss = bce_loss(model(X[idx]), y[idx])
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            grad_norm = math.sqrt(sum(float((p.grad**2).sum()) for p in model.parameters() if p.grad is not None))
            if not math.isfinite(grad_norm):
                raise NumericalError(
                    f"non-finite gradient at epoch {epoch}, batch {b} (loss {loss.item():.4g})"
                )
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        train_loss = total / count
        sched.step(train_loss)

        dev_scores = predict(model, X_dev)
        if not np.isfinite(dev_scores).all():
            raise NumericalError(f"non-finite dev predictions at epoch {epoch}")
        auc = roc_auc(dev_scores, y_dev.numpy())
        log_.epochs.append(EpochRecord(epoch, train_loss, auc, time.perf_counter() - t0))
        log.info("epoch %d loss %.4f dev_auroc %.4f", epoch, train_loss, auc)
        if auc > best_auc:
            best_auc, best_state, stale = auc, copy.deepcopy(model.state_dict()), 0
            log_.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    if model.filter_w is not None:
        model.filter_w.requires_grad_(True)
    model.eval()
    return model, log_


# ---------------------------------------------------------------- checkpoints

_NP_DTYPES = {torch.float32: ("f32", "<f4"), torch.float64: ("f64", "<f8")}


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(model: SAFDNet, path: str | os.PathLike, dev_metric: float | None = None) -> Path:
    """Write ``checkpoint.json`` and ``checkpoint.bin`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors, chunks, offset = [], [], 0
    for name, t in model.state_dict().items():
        tag, np_dtype = _NP_DTYPES[t.dtype]
        raw = np.ascontiguousarray(t.detach().cpu().numpy(), dtype=np_dtype).tobytes()
        tensors.append({"name": name, "shape": list(t.shape), "dtype": tag, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": "safdnet-checkpoint",
        "version": 1,
        "hyper": model.hyper.to_dict(),
        "ablation": model.ablation,
        "rng_seed": model.seed,
        "dev_metric": dev_metric,
        "tensors": tensors,
        "blob_bytes": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    _atomic_write(path / "checkpoint.bin", blob)
    _atomic_write(path / "checkpoint.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return path


def load_checkpoint(path: str | os.PathLike) -> SAFDNet:
    path = Path(path)
    try:
        manifest = json.loads((path / "checkpoint.json").read_text())
        blob = (path / "checkpoint.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from exc
    if len(blob) != manifest.get("blob_bytes"):
        raise CorruptCheckpointError(f"{path}: blob has {len(blob)} bytes, manifest says {manifest.get('blob_bytes')}")
    if hashlib.sha256(blob).hexdigest() != manifest.get("sha256"):
        raise CorruptCheckpointError(f"{path}: checksum mismatch")
    dtypes = {t["dtype"] for t in manifest["tensors"]}
    dtype = torch.float64 if dtypes == {"f64"} else torch.float32
    model = SAFDNet(HyperConfig.from_dict(manifest["hyper"]), manifest["ablation"],
                    manifest.get("rng_seed", 0), dtype=dtype)
    expected = model.state_dict()
    if [t["name"] for t in manifest["tensors"]] != list(expected):
        raise CorruptCheckpointError(f"{path}: tensor names do not match the model layout")
    state = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        np_dtype = "<f8" if entry["dtype"] == "f64" else "<f4"
        shape = tuple(entry["shape"])
        if shape != tuple(expected[name].shape):
            raise CorruptCheckpointError(f"{path}: {name} has shape {shape}, model expects {tuple(expected[name].shape)}")
        count = int(np.prod(shape)) if shape else 1
        if entry["nbytes"] != count * np.dtype(np_dtype).itemsize or entry["offset"] + entry["nbytes"] > len(blob):
            raise CorruptCheckpointError(f"{path}: {name} byte range is inconsistent")
        arr = np.frombuffer(blob, dtype=np_dtype, count=count, offset=entry["offset"]).reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    return model
