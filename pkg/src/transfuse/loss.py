"""Reconstruction loss: MSE + lambda1 * (1 - SSIM) + lambda2 * TV(residual).

All functions take torch tensors shaped ``(H, W)``, ``(B, H, W)`` or
``(B, 1, H, W)`` (numpy arrays are converted) and return 0-dim tensors that
stay differentiable.  Batched inputs are averaged per image.
"""
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 20.0
    lambda2: float = 20.0
    ssim_window_sigma: float = 1.5
    ssim_window_radius: int = 5
    ssim_c1: float = 0.02
    ssim_c2: float = 0.06
    tv_normalize: bool = False

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.ssim_c1 <= 0 or self.ssim_c2 <= 0:
            raise ConfigError("SSIM stabilizers must be > 0")
        if self.ssim_window_sigma <= 0 or self.ssim_window_radius < 0:
            raise ConfigError("invalid SSIM window")

    def to_dict(self):
        return asdict(self)


def _as_batch(x):
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.asarray(x, dtype=np.float64))
    if x.dim() == 2:
        return x[None, None]
    if x.dim() == 3:
        return x[:, None]
    if x.dim() == 4 and x.shape[1] == 1:
        return x
    raise ShapeError(f"expected single-channel image(s), got shape {tuple(x.shape)}")


def _pair(out, ref):
    out, ref = _as_batch(out), _as_batch(ref)
    if out.shape != ref.shape:
        raise ShapeError(f"shape mismatch: {tuple(out.shape)} vs {tuple(ref.shape)}")
    return out, ref.to(out.dtype)


def gaussian_window(sigma, radius, dtype=torch.float64):
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    g = torch.exp(-(x * x) / (2.0 * sigma * sigma))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype)


def ssim_map(x, y, cfg=LossConfig()):
    """Local SSIM over a Gaussian window, 'valid' positions only."""
    x, y = _pair(x, y)
    size = 2 * cfg.ssim_window_radius + 1
    if x.shape[-1] < size or x.shape[-2] < size:
        raise ConfigError(f"image {tuple(x.shape[-2:])} is smaller than the {size}x{size} SSIM window")
    w = gaussian_window(cfg.ssim_window_sigma, cfg.ssim_window_radius, x.dtype)[None, None]
    mu_x = F.conv2d(x, w)
    mu_y = F.conv2d(y, w)
    var_x = F.conv2d(x * x, w) - mu_x * mu_x
    var_y = F.conv2d(y * y, w) - mu_y * mu_y
    cov = F.conv2d(x * y, w) - mu_x * mu_y
    c1, c2 = cfg.ssim_c1, cfg.ssim_c2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def ssim(x, y, cfg=LossConfig()):
    return ssim_map(x, y, cfg).mean()


def loss_mse(out, ref):
    out, ref = _pair(out, ref)
    return ((out - ref) ** 2).mean()


def loss_ssim(out, ref, cfg=LossConfig()):
    return 1.0 - ssim(out, ref, cfg)


def loss_tv(out, ref, normalize=False):
    """Anisotropic TV of the residual ``out - ref``, summed per image."""
    out, ref = _pair(out, ref)
    r = out - ref
    dh = (r[..., :, 1:] - r[..., :, :-1]).abs().sum(dim=(1, 2, 3))
    dv = (r[..., 1:, :] - r[..., :-1, :]).abs().sum(dim=(1, 2, 3))
    tv = dh + dv
    if normalize:
        tv = tv / (r.shape[-1] * r.shape[-2])
    return tv.mean()


def loss_components(out, ref, cfg=LossConfig()):
    """Returns ``(total, mse, ssim_loss, tv)`` as tensors."""
    mse = loss_mse(out, ref)
    ls = loss_ssim(out, ref, cfg)
    tv = loss_tv(out, ref, cfg.tv_normalize)
    return mse + cfg.lambda1 * ls + cfg.lambda2 * tv, mse, ls, tv


def loss_total(out, ref, cfg=LossConfig()):
    return loss_components(out, ref, cfg)[0]
