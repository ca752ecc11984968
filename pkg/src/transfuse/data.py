"""Image I/O, grayscale conversion, resizing and dataset scanning.

Images are plain ``float64`` numpy arrays of shape ``(H, W)`` with values
in [0, 1].
"""
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import ConfigError, DecodeError, EmptyDataset, NotFound

log = logging.getLogger(__name__)

LUMA_BT601 = (0.299, 0.587, 0.114)
# Pillow reports binary PGM as its PPM family.
_ACCEPTED_FORMATS = {"PNG", "PPM"}
_WRITE_SUFFIXES = {".png", ".pgm"}


def as_image(arr):
    """Validate ``arr`` as a grayscale image and return it as float64."""
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ConfigError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ConfigError("image values must be finite and within [0, 1]")
    return img


def load_image(path):
    """Read a PNG or binary PGM file as a grayscale image in [0, 1].

    Colour inputs are reduced with BT.601 luma weights before the 8-bit
    values are divided by 255.
    """
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such image: {path}")
    try:
        with PILImage.open(path) as im:
            if im.format not in _ACCEPTED_FORMATS:
                raise DecodeError(f"{path}: unsupported format {im.format}")
            if im.format == "PPM" and im.mode not in ("L",):
                raise DecodeError(f"{path}: only 8-bit PGM is supported")
            im.load()
            if im.mode == "P":
                im = im.convert("RGBA")
            arr = np.asarray(im)
            mode = im.mode
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc

    if arr.dtype != np.uint8:
        raise DecodeError(f"{path}: only 8-bit images are supported")
    arr = arr.astype(np.float64) / 255.0
    if mode in ("L", "1"):
        return arr
    if mode == "LA":
        return arr[..., 0]
    if mode in ("RGB", "RGBA"):
        r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
        return LUMA_BT601[0] * r + LUMA_BT601[1] * g + LUMA_BT601[2] * b
    raise DecodeError(f"{path}: unsupported pixel mode {mode}")


def save_image(img, path):
    """Write ``img`` as 8-bit PNG or PGM, chosen by the file suffix."""
    path = Path(path)
    if path.suffix.lower() not in _WRITE_SUFFIXES:
        raise ConfigError(f"output must be .png or .pgm, got {path.name}")
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    q = np.rint(img * 255.0).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(q, mode="L").save(path)


def quantize(img):
    """Round to the 8-bit grid the writers use."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _resize_axis(img, n_out, axis):
    n_in = img.shape[axis]
    if n_in == n_out:
        return img
    if n_in == 1:
        return np.repeat(img, n_out, axis=axis)
    # corner-aligned: output sample 0 and n_out-1 hit input 0 and n_in-1
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1)) if n_out > 1 else np.zeros(1)
    i0 = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    a = np.take(img, i0, axis=axis)
    b = np.take(img, i1, axis=axis)
    shape = [1] * img.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return a * (1.0 - frac) + b * frac


def preprocess(img, target):
    """Bilinear (corner-aligned) resize to ``target x target``.

    Non-square inputs are stretched rather than cropped.
    """
    if int(target) != target or target < 8:
        raise ConfigError(f"target size must be an integer >= 8, got {target}")
    target = int(target)
    img = as_image(img)
    if img.shape == (target, target):
        return img.copy()
    out = _resize_axis(_resize_axis(img, target, 0), target, 1)
    return np.clip(out, 0.0, 1.0)


@dataclass
class DatasetManifest:
    entries: list  # (path, (height, width)) sorted by path
    target_size: int
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def paths(self):
        return [p for p, _ in self.entries]

    def load(self, index):
        return preprocess(load_image(self.entries[index][0]), self.target_size)


def scan_dataset(directory, target):
    """List every decodable image directly inside ``directory``.

    Undecodable files are skipped and reported in ``manifest.warnings``.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise NotFound(f"no such directory: {directory}")
    if target < 8:
        raise ConfigError(f"target size must be >= 8, got {target}")
    entries, warnings = [], []
    for name in sorted(os.listdir(directory)):
        path = directory / name
        if not path.is_file():
            continue
        try:
            img = load_image(path)
        except DecodeError as exc:
            warnings.append({"path": str(path), "error": str(exc)})
            log.warning("skipping %s: %s", path, exc)
            continue
        entries.append((str(path), img.shape))
    if not entries:
        raise EmptyDataset(f"no decodable images in {directory}")
    return DatasetManifest(entries=entries, target_size=int(target), warnings=warnings)
