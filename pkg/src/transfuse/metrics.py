"""Objective fusion-quality metrics and the per-directory report.

SSIM here is a numpy implementation independent of the torch one used as
a training loss; the test-suite checks that the two agree.  Gradient-based
scores are computed on images in [0, 1].
"""
import csv
import math
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import kernels
from .data import load_image
from .errors import ConfigError, LayoutError, ShapeError
from .loss import LossConfig

# gradient-transfer sigmoid parameters (strength, orientation)
QABF_KG, QABF_DG = -15.0, 0.5
QABF_KA, QABF_DA = -22.0, 0.8


def _check_shapes(*imgs):
    shapes = {np.shape(i) for i in imgs}
    if len(shapes) != 1:
        raise ShapeError(f"images differ in shape: {sorted(shapes)}")
    return [np.asarray(i, dtype=np.float64) for i in imgs]


def gaussian_taps(sigma, radius):
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def ssim_map(x, y, cfg=LossConfig()):
    x, y = _check_shapes(x, y)
    size = 2 * cfg.ssim_window_radius + 1
    if min(x.shape) < size:
        raise ConfigError(f"image {x.shape} is smaller than the {size}x{size} SSIM window")
    g = gaussian_taps(cfg.ssim_window_sigma, cfg.ssim_window_radius)

    def blur(a):
        return kernels.separable_filter(a, g, kernels.MODE_VALID)

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(y * y) - mu_y * mu_y
    cov = blur(x * y) - mu_x * mu_y
    c1, c2 = cfg.ssim_c1, cfg.ssim_c2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def ssim(x, y, cfg=LossConfig()):
    return float(ssim_map(x, y, cfg).mean())


def metric_ssim_fusion(fused, src1, src2, cfg=LossConfig()):
    fused, src1, src2 = _check_shapes(fused, src1, src2)
    return (ssim(fused, src1, cfg) + ssim(fused, src2, cfg)) / 2.0


def _strength_orientation(img):
    gx, gy = kernels.sobel(img)
    strength = np.sqrt(gx * gx + gy * gy)
    with np.errstate(divide="ignore", invalid="ignore"):
        orient = np.where(gx == 0.0, math.pi / 2, np.arctan(gy / np.where(gx == 0.0, 1.0, gx)))
    return strength, orient


def _sigmoid_score(v, k, d):
    # scaled so that perfect preservation (v = 1) scores exactly 1
    return (1.0 + math.exp(k * (1.0 - d))) / (1.0 + np.exp(k * (v - d)))


def edge_transfer(g_src, a_src, g_fused, a_fused):
    """Per-pixel edge preservation of one source in the fused image."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(
            g_src > g_fused,
            g_fused / g_src,
            np.where(g_src == g_fused, 1.0, g_src / g_fused),
        )
    diff = np.abs(a_src - a_fused)
    diff = np.minimum(diff, math.pi - diff)  # orientations are defined modulo pi
    align = 1.0 - diff / (math.pi / 2)
    return _sigmoid_score(ratio, QABF_KG, QABF_DG) * _sigmoid_score(align, QABF_KA, QABF_DA)


def metric_qabf(fused, src1, src2):
    """Gradient-transfer score in [0, 1], weighted by source edge strength."""
    fused, src1, src2 = _check_shapes(fused, src1, src2)
    if min(fused.shape) < 3:
        raise ShapeError("images must be at least 3x3")
    gf, af = _strength_orientation(fused)
    g1, a1 = _strength_orientation(src1)
    g2, a2 = _strength_orientation(src2)
    q1 = edge_transfer(g1, a1, gf, af)
    q2 = edge_transfer(g2, a2, gf, af)
    den = float(np.sum(g1 + g2))
    if den == 0.0:
        return 1.0 if not np.any(gf) else 0.0
    return float(np.sum(q1 * g1 + q2 * g2) / den)


def metric_mse_fusion(fused, src1, src2):
    fused, src1, src2 = _check_shapes(fused, src1, src2)
    return (float(np.mean((fused - src1) ** 2)) + float(np.mean((fused - src2) ** 2))) / 2.0


def entropy(img):
    """Shannon entropy (bits) of the 256-level histogram."""
    q = np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.int64)
    counts = np.bincount(q.ravel(), minlength=256).astype(np.float64)
    p = counts[counts > 0] / q.size
    return float(-(p * np.log2(p)).sum())


def spatial_frequency(img):
    img = np.asarray(img, dtype=np.float64)
    rf = np.mean(np.diff(img, axis=1) ** 2)
    cf = np.mean(np.diff(img, axis=0) ** 2)
    return float(math.sqrt(rf + cf))


def average_gradient(img):
    img = np.asarray(img, dtype=np.float64)
    dx = np.diff(img, axis=1)[:-1, :]
    dy = np.diff(img, axis=0)[:, :-1]
    return float(np.mean(np.sqrt((dx * dx + dy * dy) / 2.0)))


@dataclass
class MetricRow:
    pair_id: str
    ssim_avg: float
    qabf: float
    mse_avg: float
    entropy: float
    spatial_frequency: float
    average_gradient: float

    @staticmethod
    def columns():
        return [f.name for f in fields(MetricRow)]


def evaluate_pair(fused, src1, src2, pair_id="pair", cfg=LossConfig()):
    fused, src1, src2 = _check_shapes(fused, src1, src2)
    row = MetricRow(
        pair_id=str(pair_id),
        ssim_avg=metric_ssim_fusion(fused, src1, src2, cfg),
        qabf=metric_qabf(fused, src1, src2),
        mse_avg=metric_mse_fusion(fused, src1, src2),
        entropy=entropy(fused),
        spatial_frequency=spatial_frequency(fused),
        average_gradient=average_gradient(fused),
    )
    for name in MetricRow.columns()[1:]:
        if not math.isfinite(getattr(row, name)):
            raise ShapeError(f"metric {name} is not finite for pair {pair_id}")
    return row


@dataclass
class FusionReport:
    rows: list
    average: MetricRow

    @property
    def all_rows(self):
        return self.rows + [self.average]

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(MetricRow.columns())
            for row in self.all_rows:
                d = asdict(row)
                writer.writerow([d["pair_id"]] + [repr(d[c]) for c in MetricRow.columns()[1:]])
        return path

    def to_markdown(self, path=None):
        cols = MetricRow.columns()
        lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        for row in self.all_rows:
            d = asdict(row)
            lines.append("| " + " | ".join([d["pair_id"]] + [f"{d[c]:.4f}" for c in cols[1:]]) + " |")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def average_row(rows):
    cols = MetricRow.columns()[1:]
    return MetricRow("average", *[float(np.mean([getattr(r, c) for r in rows])) for c in cols])


_PAIR_RE = re.compile(r"^(?P<id>.+)_(?P<role>a|b|fused)\.(?:png|pgm)$", re.IGNORECASE)


def find_pairs(directory):
    """Map pair id -> {"a", "b", "fused"} paths; raises LayoutError if incomplete."""
    directory = Path(directory)
    if not directory.is_dir():
        raise LayoutError(f"not a directory: {directory}")
    groups = {}
    for path in sorted(directory.iterdir()):
        m = _PAIR_RE.match(path.name)
        if m and path.is_file():
            role = m.group("role").lower()
            slot = groups.setdefault(m.group("id"), {})
            if role in slot:
                raise LayoutError(f"duplicate {role} image for pair {m.group('id')}")
            slot[role] = path
    if not groups:
        raise LayoutError(f"no <id>_a/<id>_b/<id>_fused images in {directory}")
    for pid, slot in groups.items():
        missing = {"a", "b", "fused"} - set(slot)
        if missing:
            raise LayoutError(f"pair {pid} is missing {sorted(missing)}")
    return dict(sorted(groups.items()))


def evaluate_dir(directory, cfg=LossConfig()):
    rows = []
    for pid, slot in find_pairs(directory).items():
        rows.append(
            evaluate_pair(
                load_image(slot["fused"]), load_image(slot["a"]), load_image(slot["b"]), pid, cfg
            )
        )
    return FusionReport(rows=rows, average=average_row(rows))
