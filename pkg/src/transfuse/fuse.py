"""Stage-two fusion: encode both sources, merge features, decode.

Feature maps here are numpy arrays shaped ``(C, H, W)``.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import kernels
from .errors import ConfigError, NumericalError, ShapeError

RULES = ("average", "l1norm")
TASK_RULES = {"multimodal": "l1norm", "exposure": "average", "focus": "average"}


@dataclass(frozen=True)
class FusionRule:
    kind: str = "average"
    l1_block_radius: int = 1

    def __post_init__(self):
        if self.kind not in RULES:
            raise ConfigError(f"unknown fusion rule {self.kind!r}; expected one of {RULES}")
        if self.l1_block_radius < 0:
            raise ConfigError("l1_block_radius must be >= 0")


def rule_for_task(task):
    try:
        return FusionRule(TASK_RULES[task])
    except KeyError:
        raise ConfigError(f"unknown task {task!r}; expected one of {sorted(TASK_RULES)}") from None


def _check_pair(f1, f2):
    f1, f2 = np.asarray(f1), np.asarray(f2)
    if f1.shape != f2.shape:
        raise ShapeError(f"feature maps differ: {f1.shape} vs {f2.shape}")
    return f1, f2


def fuse_average(f1, f2):
    f1, f2 = _check_pair(f1, f2)
    return (f1 + f2) / 2


def l1_weights(f1, f2, radius=1):
    """Per-location blending weights from block-averaged channel l1 norms.

    Returns ``(w1, w2)``, each ``(H, W)``.  Where both activities vanish
    the weights fall back to 0.5 each.
    """
    f1, f2 = _check_pair(f1, f2)
    if f1.ndim != 3:
        raise ShapeError(f"expected (C, H, W) feature maps, got {f1.shape}")
    box = np.full(2 * radius + 1, 1.0 / (2 * radius + 1))
    a1 = kernels.separable_filter(np.abs(f1).sum(axis=0), box, kernels.MODE_REFLECT)
    a2 = kernels.separable_filter(np.abs(f2).sum(axis=0), box, kernels.MODE_REFLECT)
    total = a1 + a2
    zero = total <= 0.0
    safe = np.where(zero, 1.0, total)
    w1 = np.where(zero, 0.5, a1 / safe)
    w2 = np.where(zero, 0.5, a2 / safe)
    return w1, w2


def fuse_l1norm(f1, f2, radius=1):
    f1, f2 = _check_pair(f1, f2)
    w1, w2 = l1_weights(f1, f2, radius)
    out = w1[None] * f1 + w2[None] * f2
    return out.astype(np.result_type(f1.dtype, f2.dtype), copy=False)


def fuse_features(f1, f2, rule):
    if rule.kind == "average":
        return fuse_average(f1, f2)
    return fuse_l1norm(f1, f2, rule.l1_block_radius)


def encode_image(model, img):
    from .model import image_to_tensor

    size = model.cfg.patch.image_size
    img = np.asarray(img)
    if model.cfg.transformer and img.shape != (size, size):
        raise ShapeError(f"image {img.shape} does not match the model's {size}x{size} input")
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        return model.encode(image_to_tensor(img, dtype))[0].numpy()


def decode_features(model, feat):
    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(feat))[None]
        return model.decode(x, clamp=True)[0, 0].double().numpy()


def fuse_images(a, b, checkpoint, rule=FusionRule()):
    """Fuse two same-size images with a trained model (or checkpoint path)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"source images differ: {a.shape} vs {b.shape}")
    if isinstance(checkpoint, (str, Path)):
        from .checkpoint import load_checkpoint

        model = load_checkpoint(checkpoint)
    else:
        model = checkpoint
    model.eval()
    fused = fuse_features(encode_image(model, a), encode_image(model, b), rule)
    out = decode_features(model, fused)
    if not np.all(np.isfinite(out)):
        raise NumericalError("decoder produced non-finite values")
    return np.clip(out, 0.0, 1.0)
