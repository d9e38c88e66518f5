"""Per-pixel softmax segmentation: training, pseudo-labels, IoU evaluation.

The model is a linear classifier over per-pixel features (r, g, b scaled to
[0, 1], row/H, col/W) with a bias column: weights are C x (f+1). Masks are
plain 2-D uint8 arrays of class indices. This is the desk-scale stand-in for
the deep teacher and student networks, kept behind one model interface so the
self-training loop is architecture-agnostic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DimensionError, EdsError, FormatError

EDSM_MAGIC = b"EDSM"
EDSM_VERSION = 1
FEATURE_DIM = 5

DEFAULT_BASE_LR = 0.002
FINE_TUNE_LR = 0.0001


@dataclass(frozen=True)
class Hyperparams:
    lr: float = DEFAULT_BASE_LR
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 8  # images per step
    epochs: int = 200
    patience: int = 10
    poly_power: float = 0.9
    seed: int = 0

    def fine_tune(self) -> "Hyperparams":
        return replace(self, lr=FINE_TUNE_LR)


@dataclass(frozen=True)
class SegModel:
    weights: np.ndarray  # (C, f+1), last column is the bias

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise DimensionError(f"weights must be 2-D, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise ValueError("weights contain non-finite values")
        object.__setattr__(self, "weights", w)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1] - 1

    @classmethod
    def zeros(cls, num_classes: int, feature_dim: int = FEATURE_DIM) -> "SegModel":
        return cls(np.zeros((num_classes, feature_dim + 1)))


def pixel_features(image: np.ndarray) -> np.ndarray:
    """(H, W, 5) features: color channels over 255 plus normalized row and column."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
    h, w = image.shape[:2]
    feats = np.empty((h, w, FEATURE_DIM), dtype=np.float64)
    feats[..., :3] = image.astype(np.float64) / 255.0
    feats[..., 3] = (np.arange(h, dtype=np.float64) / h)[:, None]
    feats[..., 4] = (np.arange(w, dtype=np.float64) / w)[None, :]
    return feats


def _with_bias(flat: np.ndarray) -> np.ndarray:
    out = np.empty((flat.shape[0], flat.shape[1] + 1), dtype=np.float64)
    out[:, :-1] = flat
    out[:, -1] = 1.0
    return out


def _flatten_features(features: np.ndarray, f: int) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != f:
        raise DimensionError(
            f"features have dimension {features.shape[-1]}, model expects {f}"
        )
    return features.reshape(-1, f)


def softmax_forward(model: SegModel, features: np.ndarray) -> np.ndarray:
    """Class probabilities per pixel; rows sum to 1 for any finite logits."""
    flat = _flatten_features(features, model.feature_dim)
    logits = _with_bias(flat) @ model.weights.T
    probs = _kernels.softmax2d(np.ascontiguousarray(logits))
    return probs.reshape(features.shape[:-1] + (model.num_classes,))


def cross_entropy(
    probs: np.ndarray,
    mask: np.ndarray,
    pixel_weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Weighted mean of -log p(true class) and the gradient w.r.t. logits.

    With unit weights this is exactly mean cross-entropy with gradient
    (probs - one_hot) / pixel_count.
    """
    probs = np.asarray(probs, dtype=np.float64)
    mask = np.asarray(mask)
    if probs.shape[:-1] != mask.shape:
        raise DimensionError(
            f"probs shape {probs.shape[:-1]} does not match mask shape {mask.shape}"
        )
    c = probs.shape[-1]
    if mask.size and int(mask.max()) >= c:
        raise ValueError(f"mask indices exceed class count {c}")
    flat_p = np.ascontiguousarray(probs.reshape(-1, c))
    flat_y = np.ascontiguousarray(mask.reshape(-1).astype(np.int64))
    if pixel_weights is None:
        weights = np.ones(flat_y.shape[0], dtype=np.float64)
    else:
        weights = np.ascontiguousarray(
            np.asarray(pixel_weights, dtype=np.float64).reshape(-1)
        )
        if weights.shape[0] != flat_y.shape[0]:
            raise DimensionError("pixel_weights shape does not match mask")
    loss, grad = _kernels.ce_loss_grad(flat_p, flat_y, weights)
    return float(loss), grad.reshape(probs.shape)


def poly_lr(iteration: int, total_iters: int, base_lr: float, power: float = 0.9) -> float:
    """Polynomial decay: base_lr * (1 - iteration/total_iters)**power."""
    if base_lr <= 0:
        raise ValueError(f"base_lr must be > 0, got {base_lr}")
    if not 0 <= iteration <= total_iters:
        raise ValueError(f"iteration {iteration} outside [0, {total_iters}]")
    return base_lr * (1.0 - iteration / total_iters) ** power


def _stack_dataset(dataset, f: int):
    feats = []
    labels = []
    px = None
    for features, mask in dataset:
        flat = _with_bias(_flatten_features(features, f))
        y = np.asarray(mask).reshape(-1).astype(np.int64)
        if y.shape[0] != flat.shape[0]:
            raise DimensionError("features and mask disagree on pixel count")
        if px is None:
            px = flat.shape[0]
        elif flat.shape[0] != px:
            raise DimensionError("all images in a training set must share one size")
        feats.append(flat)
        labels.append(y)
    return np.ascontiguousarray(np.stack(feats)), np.ascontiguousarray(np.stack(labels))


def train(
    model: SegModel,
    dataset,
    hp: Hyperparams = Hyperparams(),
    val_data=None,
) -> tuple[SegModel, list[float]]:
    """Minibatch SGD with momentum, weight decay, and polynomial LR decay.

    dataset and val_data are sequences of (features, mask) pairs. When val_data
    is given, training stops after `patience` epochs without a validation-loss
    improvement and the best-validation weights are returned. Deterministic for
    a fixed hp.seed: the only randomness is the per-epoch shuffle order.
    """
    dataset = list(dataset)
    if not dataset:
        raise EdsError("training dataset is empty")
    f = model.feature_dim
    feats, labels = _stack_dataset(dataset, f)
    n_classes = model.num_classes
    if int(labels.max()) >= n_classes:
        raise ValueError(f"mask indices exceed class count {n_classes}")

    if val_data is not None:
        vf, vy = _stack_dataset(list(val_data), f)
        val_feats = np.ascontiguousarray(vf.reshape(-1, f + 1))
        val_labels = np.ascontiguousarray(vy.reshape(-1))
    else:
        val_feats = val_labels = None

    w = model.weights.copy()
    vel = np.zeros_like(w)
    rng = np.random.default_rng(hp.seed)
    n_images = feats.shape[0]
    batches_per_epoch = -(-n_images // hp.batch_size)
    total_steps = hp.epochs * batches_per_epoch

    trace: list[float] = []
    best_val = np.inf
    best_w = w.copy()
    stall = 0
    step = 0
    for _epoch in range(hp.epochs):
        order = np.ascontiguousarray(rng.permutation(n_images))
        loss_sum, n_batches = _kernels.sgd_epoch(
            feats, labels, order, w, vel, hp.lr, hp.poly_power, step,
            total_steps, hp.momentum, hp.weight_decay, hp.batch_size,
        )
        step += n_batches
        trace.append(loss_sum / n_batches)
        if val_feats is not None:
            val_loss = _kernels.logit_ce_loss(val_feats, val_labels, w)
            if val_loss < best_val:
                best_val = val_loss
                best_w = w.copy()
                stall = 0
            else:
                stall += 1
                if stall >= hp.patience:
                    break
    final = best_w if val_feats is not None else w
    return SegModel(final), trace


def pseudo_label(model: SegModel, features: np.ndarray) -> np.ndarray:
    """Hard labels: per-pixel argmax of class probabilities, ties to the lowest index."""
    flat = _flatten_features(features, model.feature_dim)
    logits = _with_bias(flat) @ model.weights.T
    return np.argmax(logits, axis=1).astype(np.uint8).reshape(features.shape[:-1])


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """C x C count matrix; entry (g, p) counts pixels with truth g predicted p."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(
            f"pred shape {pred.shape} does not match gt shape {gt.shape}"
        )
    if pred.size and (int(pred.max()) >= num_classes or int(gt.max()) >= num_classes):
        raise ValueError(f"mask indices exceed class count {num_classes}")
    joint = gt.reshape(-1).astype(np.int64) * num_classes + pred.reshape(-1)
    counts = np.bincount(joint, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


@dataclass(frozen=True)
class IoUReport:
    per_class: dict[int, float | None]
    miou: float

    def defined(self) -> dict[int, float]:
        return {c: v for c, v in self.per_class.items() if v is not None}


def iou_report(cm: np.ndarray) -> IoUReport:
    """Per-class intersection over union TP/(TP+FP+FN) and its mean.

    Classes absent from both masks have an empty union; they are undefined and
    excluded from the mean.
    """
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    per_class: dict[int, float | None] = {}
    defined = []
    for c in range(cm.shape[0]):
        if union[c] == 0:
            per_class[c] = None
        else:
            iou = float(tp[c] / union[c])
            per_class[c] = iou
            defined.append(iou)
    miou = float(np.mean(defined)) if defined else float("nan")
    return IoUReport(per_class=per_class, miou=miou)


def evaluate(model: SegModel, dataset) -> IoUReport:
    """Aggregate confusion over (features, mask) pairs, then report IoU."""
    cm = np.zeros((model.num_classes, model.num_classes), dtype=np.int64)
    for features, mask in dataset:
        pred = pseudo_label(model, features)
        cm += confusion(pred, np.asarray(mask), model.num_classes)
    return iou_report(cm)


def save_model(model: SegModel, path: str | Path) -> None:
    """EDSM checkpoint: magic, version u32, C u64, f u64, C*(f+1) f32 weights."""
    with open(path, "wb") as f:
        f.write(EDSM_MAGIC)
        f.write(struct.pack("<IQQ", EDSM_VERSION, model.num_classes, model.feature_dim))
        f.write(np.ascontiguousarray(model.weights, dtype="<f4").tobytes())


def load_model(path: str | Path) -> SegModel:
    data = Path(path).read_bytes()
    if data[:4] != EDSM_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {EDSM_MAGIC!r}")
    if len(data) < 24:
        raise FormatError(f"{path}: truncated header")
    version, c, f = struct.unpack_from("<IQQ", data, 4)
    if version != EDSM_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = c * (f + 1) * 4
    payload = data[24:]
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} weight bytes, found {len(payload)}")
    weights = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(c, f + 1)
    return SegModel(weights)
