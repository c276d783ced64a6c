"""Out-of-distribution corruption generators.

Noise kinds move points and keep N. Outlier kinds leave the original points
untouched, in order, and append ``floor(fraction * N)`` new ones at the end.
Every corruption is a pure function of the input cloud and the spec's seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from .errors import ConfigError, DataError
from .pointcloud import PointCloud
from .rng import RngLike, seeded_rng

NOISE_KINDS = ("uniform_noise", "gaussian_noise", "impulse_noise")
OUTLIER_KINDS = ("upsampling_outliers", "background_outliers", "ball_outliers")
OTHER_KINDS = ("rotation", "shear", "cutout", "density_decrease")
CORRUPTION_KINDS = NOISE_KINDS + OUTLIER_KINDS + OTHER_KINDS

IMPULSE_MAGNITUDE = 0.1
UPSAMPLING_JITTER = 0.05
BACKGROUND_BOX = 1.0
DEFAULT_BALL_FRACTION = 0.1
DEFAULT_HOLE_SIZE = 20

_FRACTION_LADDER = (0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.85, 1.0)
_LADDERS = {
    "uniform_noise": tuple(round(0.01 * k, 10) for k in range(1, 11)),
    "gaussian_noise": tuple(round(0.01 * k, 10) for k in range(1, 11)),
    "impulse_noise": _FRACTION_LADDER,
    "upsampling_outliers": tuple(round(0.1 * k, 10) for k in range(1, 11)),
    "background_outliers": _FRACTION_LADDER,
    "ball_outliers": tuple(round(0.3 * k, 10) for k in range(1, 11)),
}

# aliases accepted on the command line
SHORT_NAMES = {
    "uniform": "uniform_noise",
    "gaussian": "gaussian_noise",
    "impulse": "impulse_noise",
    "upsampling": "upsampling_outliers",
    "background": "background_outliers",
    "ball": "ball_outliers",
}


def canonical_kind(kind: str) -> str:
    kind = SHORT_NAMES.get(kind, kind)
    if kind not in CORRUPTION_KINDS:
        raise ConfigError(f"unknown corruption {kind!r}; expected one of {CORRUPTION_KINDS}")
    return kind


def severity_table(kind: str) -> list[float]:
    """The ten-level parameter ladder of a noise or outlier kind.

    Noise magnitudes for uniform/gaussian, affected fraction for impulse,
    appended fraction for upsampling/background and sphere radius for ball.
    """
    kind = SHORT_NAMES.get(kind, kind)
    if kind not in _LADDERS:
        raise ConfigError(f"no severity ladder for {kind!r}; expected one of {tuple(_LADDERS)}")
    return list(_LADDERS[kind])


@dataclass(frozen=True)
class CorruptionSpec:
    """A corruption kind with either a ladder ``level`` (1..10) or an explicit ``param``.

    ``extra`` carries kind-specific settings: ``fraction`` for ball outliers,
    ``axis`` for rotation, ``hole_size`` for cutout.
    """

    kind: str
    level: Optional[int] = None
    param: Optional[float] = None
    extra: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        object.__setattr__(self, "extra", dict(self.extra))
        self.parameter()  # validates

    def parameter(self) -> float:
        if self.param is not None:
            p = float(self.param)
            if not math.isfinite(p):
                raise ConfigError("corruption parameter must be finite")
            _check_range(self.kind, p)
            return p
        if self.level is None:
            raise ConfigError(f"{self.kind} needs a level or an explicit parameter")
        if self.kind not in _LADDERS:
            raise ConfigError(f"{self.kind} has no level ladder; pass an explicit parameter")
        if not 1 <= int(self.level) <= 10:
            raise ConfigError(f"severity level must be in 1..10, got {self.level}")
        return _LADDERS[self.kind][int(self.level) - 1]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "level": self.level,
            "param": self.param,
            "extra": dict(self.extra),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorruptionSpec":
        return cls(d["kind"], d.get("level"), d.get("param"), d.get("extra") or {}, int(d.get("seed", 0)))


def _check_range(kind: str, p: float) -> None:
    if kind in ("uniform_noise", "gaussian_noise") and p < 0:
        raise ConfigError(f"{kind} magnitude must be >= 0")
    if kind in ("impulse_noise", "upsampling_outliers", "background_outliers") and not 0 <= p <= 1:
        raise ConfigError(f"{kind} fraction must be in [0, 1]")
    if kind == "ball_outliers" and p <= 0:
        raise ConfigError("ball radius must be positive")
    if kind == "density_decrease" and not 0 < p <= 1:
        raise ConfigError("keep fraction must be in (0, 1]")
    if kind == "cutout" and (p < 0 or p != int(p)):
        raise ConfigError("cutout needs a non-negative integer number of holes")


def fraction_count(fraction: float, n: int) -> int:
    # the epsilon keeps e.g. 0.29 * 100 from flooring to 28
    return int(math.floor(fraction * n + 1e-9))


def _unit_vectors(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def corrupt(pc: PointCloud, spec: CorruptionSpec) -> PointCloud:
    rng = seeded_rng(spec.seed)
    p = spec.parameter()
    pts = pc.points
    n = len(pts)
    kind = spec.kind

    if kind == "uniform_noise":
        return pc.with_points(pts + rng.uniform(-p, p, size=pts.shape))
    if kind == "gaussian_noise":
        if p == 0:
            return pc.with_points(pts)
        return pc.with_points(pts + rng.normal(0.0, p, size=pts.shape))
    if kind == "impulse_noise":
        k = fraction_count(p, n)
        idx = rng.choice(n, size=k, replace=False)
        sign = np.where(rng.random(k) < 0.5, 1.0, -1.0)
        out = pts.copy()
        out[idx] += IMPULSE_MAGNITUDE * sign[:, None]
        return pc.with_points(out)

    if kind == "upsampling_outliers":
        k = fraction_count(p, n)
        src = pts[rng.choice(n, size=k, replace=False)]
        extra = src + rng.uniform(-UPSAMPLING_JITTER, UPSAMPLING_JITTER, size=src.shape)
        return pc.with_points(np.concatenate([pts, extra]))
    if kind == "background_outliers":
        k = fraction_count(p, n)
        extra = rng.uniform(-BACKGROUND_BOX, BACKGROUND_BOX, size=(k, 3))
        return pc.with_points(np.concatenate([pts, extra]))
    if kind == "ball_outliers":
        frac = float(spec.extra.get("fraction", DEFAULT_BALL_FRACTION))
        if not 0 <= frac <= 1:
            raise ConfigError("ball fraction must be in [0, 1]")
        k = fraction_count(frac, n)
        return pc.with_points(np.concatenate([pts, p * _unit_vectors(rng, k)]))

    if kind == "rotation":
        axis = spec.extra.get("axis")
        axis = _unit_vectors(rng, 1)[0] if axis is None else axis
        return rotate(pc, axis, p)
    if kind == "shear":
        return shear(pc, p)
    if kind == "cutout":
        return cutout(pc, int(p), int(spec.extra.get("hole_size", DEFAULT_HOLE_SIZE)), rng)
    if kind == "density_decrease":
        return density_decrease(pc, p, rng)
    raise ConfigError(f"unhandled corruption {kind!r}")


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation by ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if not norm > 0:
        raise ConfigError("rotation axis must be nonzero")
    k = axis / norm
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


def rotate(pc: PointCloud, axis, angle: float) -> PointCloud:
    return pc.with_points(pc.points @ rotation_matrix(axis, angle).T)


def shear_matrix(factor: float) -> np.ndarray:
    return np.array([[1.0, 0.0, factor], [0.0, 1.0, factor], [0.0, 0.0, 1.0]])


def shear(pc: PointCloud, factor: float) -> PointCloud:
    """``x += factor z`` and ``y += factor z``; z is unchanged."""
    return pc.with_points(pc.points @ shear_matrix(factor).T)


def cutout(pc: PointCloud, n_holes: int, hole_size: int, rng: RngLike = None) -> PointCloud:
    """Remove the ``hole_size`` nearest neighbours of ``n_holes`` random anchors."""
    rng = seeded_rng(rng)
    if n_holes < 0 or hole_size < 0:
        raise ConfigError("cutout counts must be non-negative")
    alive = np.ones(len(pc), dtype=bool)
    pts = pc.points
    for _ in range(n_holes if hole_size else 0):
        live = np.flatnonzero(alive)
        if live.size == 0:
            break
        anchor = pts[live[rng.integers(live.size)]]
        d = np.linalg.norm(pts[live] - anchor, axis=1)
        alive[live[np.argsort(d, kind="stable")[:hole_size]]] = False
    if not alive.any():
        raise DataError("cutout would remove every point")
    return pc.with_points(pts[alive])


def density_decrease(pc: PointCloud, keep_fraction: float, rng: RngLike = None) -> PointCloud:
    """Keep a uniformly random subset of ``floor(keep_fraction * N)`` points, in order."""
    rng = seeded_rng(rng)
    if not 0 < keep_fraction <= 1:
        raise ConfigError("keep fraction must be in (0, 1]")
    k = fraction_count(keep_fraction, len(pc))
    if k == 0:
        raise DataError("density decrease would leave an empty cloud")
    idx = np.sort(rng.choice(len(pc), size=k, replace=False))
    return pc.with_points(pc.points[idx])
