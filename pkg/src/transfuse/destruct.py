"""Subregion destruction: Bezier intensity remap, gamma, and Gaussian blur.

``destroy`` picks ``n_subregions`` squares and, for each one, runs the three
transforms in the fixed order nonlinear -> brightness -> noise, flipping an
independent coin for each.  Every random draw is recorded so a destroyed
image can be audited or replayed.
"""
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConfigError

TRANSFORM_NAMES = ("nl", "b", "ns")


@dataclass(frozen=True)
class TransformSpec:
    prob_nonlinear: float = 0.6
    prob_brightness: float = 0.6
    prob_noise: float = 0.6
    gamma_choices: tuple = (0.3, 3.0)
    blur_sigma: float = 3.0
    n_subregions: int = 4
    subregion_size: int = 16
    lut_resolution: int = 1024

    def __post_init__(self):
        for name in ("prob_nonlinear", "prob_brightness", "prob_noise"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        object.__setattr__(self, "gamma_choices", tuple(float(g) for g in self.gamma_choices))
        if not self.gamma_choices or min(self.gamma_choices) <= 0:
            raise ConfigError("gamma_choices must be a non-empty set of positive exponents")
        if self.blur_sigma <= 0:
            raise ConfigError("blur_sigma must be > 0")
        if self.n_subregions < 1:
            raise ConfigError("n_subregions must be >= 1")
        if self.subregion_size < 2:
            raise ConfigError("subregion_size must be >= 2")
        if self.lut_resolution < 64:
            raise ConfigError("lut_resolution must be >= 64")

    @property
    def probabilities(self):
        return (self.prob_nonlinear, self.prob_brightness, self.prob_noise)

    def disable(self, *names):
        """Return a copy where the named transforms ('nl', 'b', 'ns') never fire."""
        changes = {}
        for name in names:
            changes[_prob_field(name)] = 0.0
        return replace(self, **changes)

    def force(self, *names):
        """Return a copy where exactly the named transforms always fire."""
        wanted = {_prob_field(n) for n in names}
        return replace(
            self,
            **{_prob_field(n): (1.0 if _prob_field(n) in wanted else 0.0) for n in TRANSFORM_NAMES},
        )


def _prob_field(name):
    try:
        return {"nl": "prob_nonlinear", "b": "prob_brightness", "ns": "prob_noise"}[name]
    except KeyError:
        raise ConfigError(f"unknown transform {name!r}; expected one of {TRANSFORM_NAMES}") from None


@dataclass(frozen=True)
class Subregion:
    top: int
    left: int
    height: int
    width: int

    @property
    def slices(self):
        return (slice(self.top, self.top + self.height), slice(self.left, self.left + self.width))


@dataclass
class BezierMap:
    p1: tuple
    p2: tuple
    p3: tuple
    p4: tuple
    decreasing: bool
    lut: np.ndarray

    def __call__(self, values):
        return kernels.apply_lut(values, self.lut)


def bezier_points(p1, p2, p3, p4, t):
    """Evaluate the cubic Bezier curve at parameters ``t``; returns (x, y)."""
    t = np.asarray(t, dtype=np.float64)[:, None]
    s = 1.0 - t
    pts = (
        s**3 * np.asarray(p1)
        + 3.0 * s**2 * t * np.asarray(p2)
        + 3.0 * s * t**2 * np.asarray(p3)
        + t**3 * np.asarray(p4)
    )
    return pts[:, 0], pts[:, 1]


def bezier_map_from_points(p2, p3, decreasing=False, resolution=1024):
    """Build the value map for midpoints ``p2``, ``p3`` with fixed endpoints.

    The curve is sampled densely in ``t`` and ``y`` is linearly interpolated
    as a function of ``x`` onto a uniform grid of ``resolution`` values.
    """
    if resolution < 64:
        raise ConfigError("lut resolution must be >= 64")
    p2 = tuple(float(v) for v in p2)
    p3 = tuple(float(v) for v in p3)
    if p2[0] > p3[0]:
        p2, p3 = p3, p2
    p1, p4 = (0.0, 0.0), (1.0, 1.0)
    t = np.linspace(0.0, 1.0, resolution)
    x, y = bezier_points(p1, p2, p3, p4, t)
    # guard against float wobble so np.interp sees a non-decreasing abscissa
    x = np.maximum.accumulate(x)
    grid = np.linspace(0.0, 1.0, resolution)
    lut = np.clip(np.interp(grid, x, y), 0.0, 1.0)
    if decreasing:
        lut = 1.0 - lut
    return BezierMap(p1=p1, p2=p2, p3=p3, p4=p4, decreasing=bool(decreasing), lut=lut)


def make_bezier_map(rng, resolution=1024):
    """Draw random midpoints and a random flip, then build the map."""
    rng = np.random.default_rng(rng)
    p2 = rng.random(2)
    p3 = rng.random(2)
    flip = bool(rng.random() < 0.5)
    return bezier_map_from_points(p2, p3, decreasing=flip, resolution=resolution)


def apply_nonlinear(region, bmap):
    return np.clip(bmap(region), 0.0, 1.0)


def apply_brightness(region, gamma):
    if not gamma > 0:
        raise ConfigError(f"gamma must be > 0, got {gamma}")
    return np.power(np.asarray(region, dtype=np.float64), float(gamma))


def gaussian_kernel1d(sigma):
    if not sigma > 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_kernel2d(sigma):
    g = gaussian_kernel1d(sigma)
    return np.outer(g, g)


def apply_noise(region, sigma):
    """Gaussian blur of radius ceil(3 sigma), reflect-padded at the region border."""
    out = kernels.separable_filter(region, gaussian_kernel1d(sigma), kernels.MODE_REFLECT)
    return np.clip(out, 0.0, 1.0)


def sample_subregions(h, w, spec, rng):
    size = spec.subregion_size
    if size > min(h, w):
        raise ConfigError(f"subregion size {size} does not fit a {h}x{w} image")
    rng = np.random.default_rng(rng)
    tops = rng.integers(0, h - size + 1, size=spec.n_subregions)
    lefts = rng.integers(0, w - size + 1, size=spec.n_subregions)
    return [Subregion(int(t), int(l), size, size) for t, l in zip(tops, lefts)]


@dataclass
class SubregionDraw:
    subregion: Subregion
    draws: tuple  # (r_nl, r_b, r_ns)
    applied: tuple  # (nl, b, ns) booleans
    bezier: dict = None  # {"p2", "p3", "decreasing"} when nl fired
    gamma: float = None
    sigma: float = None


@dataclass
class DestructionRecord:
    subregions: list = field(default_factory=list)
    entries: list = field(default_factory=list)

    @property
    def applied(self):
        return [e.applied for e in self.entries]

    def to_dict(self):
        return {
            "n_subregions": len(self.entries),
            "subregions": [
                {
                    **asdict(e.subregion),
                    "draws": list(e.draws),
                    "applied": dict(zip(TRANSFORM_NAMES, e.applied)),
                    "bezier": e.bezier,
                    "gamma": e.gamma,
                    "sigma": e.sigma,
                }
                for e in self.entries
            ],
        }


def destroy(img, spec, rng):
    """Destroy random subregions of ``img``; returns ``(destroyed, record)``.

    ``rng`` may be a seed or a ``numpy.random.Generator``.  Overlapping
    subregions compose: later ones see the output of earlier ones.
    """
    rng = np.random.default_rng(rng)
    img = np.asarray(img, dtype=np.float64)
    out = img.copy()
    subregions = sample_subregions(img.shape[0], img.shape[1], spec, rng)
    record = DestructionRecord(subregions=subregions)
    p_nl, p_b, p_ns = spec.probabilities
    for sub in subregions:
        block = out[sub.slices]
        bezier = gamma = sigma = None

        r_nl = float(rng.random())
        do_nl = r_nl < p_nl
        if do_nl:
            bmap = make_bezier_map(rng, spec.lut_resolution)
            block = apply_nonlinear(block, bmap)
            bezier = {"p2": list(bmap.p2), "p3": list(bmap.p3), "decreasing": bmap.decreasing}

        r_b = float(rng.random())
        do_b = r_b < p_b
        if do_b:
            gamma = float(spec.gamma_choices[rng.integers(len(spec.gamma_choices))])
            block = apply_brightness(block, gamma)

        r_ns = float(rng.random())
        do_ns = r_ns < p_ns
        if do_ns:
            sigma = float(spec.blur_sigma)
            block = apply_noise(block, sigma)

        out[sub.slices] = block
        record.entries.append(
            SubregionDraw(sub, (r_nl, r_b, r_ns), (do_nl, do_b, do_ns), bezier, gamma, sigma)
        )
    return out, record
