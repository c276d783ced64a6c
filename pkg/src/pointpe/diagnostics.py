"""Analysis sweeps: distance preservation, scale and pooling sweeps,
frequency-distribution laws and 1D encoding illustrations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .classifier import TrainConfig, evaluate_features, global_features, train
from .corruptions import CorruptionSpec
from .encoders import Encoder, build_encoder, encode_impulse, expand_frequency_grid, sinc_signal
from .errors import ConfigError, DataError
from .pointcloud import PointCloud
from .rng import RngLike, seeded_rng

DEFAULT_DRAWS = 50
UNIT_INTERVAL_KINDS = ("impulse", "sinc1d")
_UNIT_MARGIN = 1e-9


def rff_expected_distance(n_freq: int, sigma: float, d) -> np.ndarray:
    """``E ||G(x) - G(x + d u)||^2 = 2F (1 - exp(-sigma^2 d^2 / 2))``."""
    d = np.asarray(d, dtype=np.float64)
    return 2 * n_freq * -np.expm1(-0.5 * (sigma * d) ** 2)


@dataclass(frozen=True)
class DistanceRow:
    distance: float
    mean: float
    std: float


def distance_curve(
    encoder_spec: Mapping,
    distances: Sequence[float],
    draws: int = DEFAULT_DRAWS,
    rng: RngLike = None,
    squared: bool = True,
) -> list[DistanceRow]:
    """Encoding distance against point distance, averaged over redraws.

    Each draw builds a fresh encoder from ``encoder_spec`` (kind, dim_in,
    dim_out, scale) with a new seed and picks ``x`` uniform in ``[-1, 1]^D``
    and a random unit direction ``u``; the distance is measured between
    ``encode(x)`` and ``encode(x + d u)`` for every ``d``. The scalar
    encoders defined on ``(0, 1)`` draw ``x`` there instead and clip the
    shifted point back into the interval.
    """
    if draws < 1:
        raise ConfigError("draws must be >= 1")
    rng = seeded_rng(rng)
    d = np.asarray(distances, dtype=np.float64)
    dim = int(encoder_spec.get("dim_in", 3))
    vals = np.empty((draws, len(d)))
    for k in range(draws):
        enc = build_encoder(
            encoder_spec["kind"], dim, encoder_spec["dim_out"], encoder_spec.get("scale", 1.0), int(rng.integers(2**62))
        )
        unit = encoder_spec["kind"] in UNIT_INTERVAL_KINDS
        x = rng.uniform(0.0, 1.0, size=dim) if unit else rng.uniform(-1.0, 1.0, size=dim)
        u = rng.standard_normal(dim)
        u /= np.linalg.norm(u)
        ends = [x + di * u for di in d]
        if unit:
            x = np.clip(x, _UNIT_MARGIN, 1 - _UNIT_MARGIN)
            ends = [np.clip(e, _UNIT_MARGIN, 1 - _UNIT_MARGIN) for e in ends]
        # same single-row path for both ends so d == 0 gives exactly 0
        base = enc.encode(x)
        moved = np.stack([enc.encode(e) for e in ends])
        gap = ((moved - base) ** 2).sum(axis=1)
        vals[k] = gap if squared else np.sqrt(gap)
    return [DistanceRow(float(di), float(m), float(s)) for di, m, s in zip(d, vals.mean(axis=0), vals.std(axis=0))]


def relu_layer_distance_curve(
    distances: Sequence[float],
    width: int = 1024,
    std: float = 0.1,
    draws: int = DEFAULT_DRAWS,
    rng: RngLike = None,
) -> list[DistanceRow]:
    """Unsquared distance curve of one random zero-bias ReLU layer ``R^3 -> R^width``."""
    rng = seeded_rng(rng)
    d = np.asarray(distances, dtype=np.float64)
    vals = np.empty((draws, len(d)))
    for k in range(draws):
        W = rng.normal(0.0, std, size=(width, 3))
        x = rng.uniform(-1.0, 1.0, size=3)
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        base = np.maximum(W @ x, 0.0)
        moved = np.maximum((x + d[:, None] * u) @ W.T, 0.0)
        vals[k] = np.linalg.norm(moved - base, axis=1)
    return [DistanceRow(float(di), float(m), float(s)) for di, m, s in zip(d, vals.mean(axis=0), vals.std(axis=0))]


def linear_fit_r2(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())


# ---------------------------------------------------------------------------
# classifier sweeps


@dataclass(frozen=True)
class ScaleRow:
    scale: float
    train_acc: float
    test_acc: float


def scale_sweep(
    scales: Sequence[float],
    train_set: Sequence[PointCloud],
    test_set: Sequence[PointCloud],
    pooling_kind: str = "mean",
    train_cfg: TrainConfig = TrainConfig(),
    dim: int = 1024,
    encoder_seed: int = 0,
    kind: str = "rff",
) -> list[ScaleRow]:
    """Retrain the head for every RFF scale; accuracies are on raw clouds."""
    if not train_set or not test_set:
        raise DataError("scale sweep needs non-empty train and test sets")
    ytr = np.array([pc.label for pc in train_set])
    yte = np.array([pc.label for pc in test_set])
    n_classes = int(max(ytr.max(), yte.max()) + 1)
    rows = []
    for s in scales:
        enc = build_encoder(kind, 3, dim, s, encoder_seed)
        Xtr = global_features(train_set, enc, pooling_kind)
        Xte = global_features(test_set, enc, pooling_kind)
        model = train(Xtr, ytr, train_cfg, n_classes)
        rows.append(
            ScaleRow(float(s), evaluate_features(model, Xtr, ytr).accuracy, evaluate_features(model, Xte, yte).accuracy)
        )
    return rows


def is_unimodal(values: Sequence[float], strict_interior: bool = True) -> bool:
    """Non-decreasing up to the (first) maximum and non-increasing after it."""
    v = list(values)
    peak = int(np.argmax(v))
    if strict_interior and not 0 < peak < len(v) - 1:
        return False
    return all(a <= b for a, b in zip(v[:peak], v[1 : peak + 1])) and all(
        a >= b for a, b in zip(v[peak:], v[peak + 1 :])
    )


@dataclass(frozen=True)
class RobustnessCell:
    pooling: str
    corruption: str
    level: Optional[float]
    error_rate: float


def pooling_robustness_sweep(
    train_set: Sequence[PointCloud],
    test_set: Sequence[PointCloud],
    encoders: Mapping[str, Encoder],
    pooling_kinds: Sequence[str],
    corruptions: Sequence[CorruptionSpec],
    train_cfg: TrainConfig = TrainConfig(),
) -> list[RobustnessCell]:
    """Train one head per pooling on clean data and test it on every corruption.

    ``encoders`` maps each pooling kind to its frozen encoder. The grid has
    ``len(pooling_kinds) * (len(corruptions) + 1)`` cells, the first per
    pooling being the clean test set.
    """
    ytr = np.array([pc.label for pc in train_set])
    yte = np.array([pc.label for pc in test_set])
    n_classes = int(max(ytr.max(), yte.max()) + 1)
    cells = []
    for pooling in pooling_kinds:
        enc = encoders[pooling]
        model = train(global_features(train_set, enc, pooling), ytr, train_cfg, n_classes)
        clean = evaluate_features(model, global_features(test_set, enc, pooling), yte)
        cells.append(RobustnessCell(pooling, "clean", None, clean.error_rate))
        for spec in corruptions:
            res = evaluate_features(model, global_features(test_set, enc, pooling, spec), yte)
            cells.append(RobustnessCell(pooling, spec.kind, spec.parameter(), res.error_rate))
    return cells


# ---------------------------------------------------------------------------
# frequency distribution laws


@dataclass(frozen=True)
class FrequencyLawReport:
    dim: int
    bandwidth: float
    samples: int
    variance: float
    target: float
    ks_distance: float
    hist_max_dev: float
    density_ratio: Optional[float]
    variance_se: float = float("nan")

    @property
    def relative_error(self) -> float:
        return abs(self.variance - self.target) / self.target


def signed_frequency_sums(dim: int, bandwidth: float, n: int, rng: RngLike = None) -> np.ndarray:
    """Monte Carlo sums of ``dim`` independent uniforms on ``[-B, B]``."""
    rng = seeded_rng(rng)
    return rng.uniform(-bandwidth, bandwidth, size=(n, dim)).sum(axis=1)


def variance_standard_error(samples) -> float:
    """Plug-in standard error of the sample variance, ``sqrt((m4 - s^4 (n-3)/(n-1)) / n)``."""
    x = np.asarray(samples, dtype=np.float64)
    n = len(x)
    if n < 4:
        raise DataError("standard error of a variance needs at least 4 samples")
    c = x - x.mean()
    m4 = float(np.mean(c**4))
    s2 = float(c @ c) / (n - 1)
    return math.sqrt(max(m4 - s2 * s2 * (n - 3) / (n - 1), 0.0) / n)


def grid_frequency_sums(dim: int, bandwidth: int) -> np.ndarray:
    """Projections ``i1 +- i2 +- ...`` of the integer grid, symmetrized.

    Each term of :func:`expand_frequency_grid` is taken together with its
    negated frequency (cosine is even, sine odd), so every axis ranges over
    ``-(B-1)..(B-1)``.
    """
    grid = expand_frequency_grid(dim, bandwidth)
    s = grid.freqs.sum(axis=1).astype(np.float64)
    return np.concatenate([s, -s])


def grid_sum_variance(dim: int, bandwidth: int) -> float:
    """Closed form of ``var(grid_frequency_sums)``: ``D (B-1)(2B-1) / 6``."""
    return dim * (bandwidth - 1) * (2 * bandwidth - 1) / 6.0


def frequency_law_check(
    dim: int,
    bandwidth: float,
    subsample: int = 100_000,
    rng: RngLike = None,
    bins: int = 64,
) -> FrequencyLawReport:
    """Compare signed sums of ``dim`` uniforms on ``[-B, B]`` with ``N(0, D B^2 / 3)``.

    Reports the sample variance, the Kolmogorov-Smirnov distance to the
    matching normal, the largest gap between the normalized histogram and
    the normal density, and for ``dim == 2`` the ratio of the density at 0
    to the mean density at ``+-B`` (2 for the exact triangle law).
    """
    if dim not in (2, 3, 4):
        raise ConfigError("frequency law check supports D in {2, 3, 4}")
    if subsample < 10_000:
        raise ConfigError("subsample must be >= 1e4")
    s = signed_frequency_sums(dim, bandwidth, subsample, rng)
    target = dim * bandwidth**2 / 3.0
    sd = math.sqrt(target)
    ks = float(stats.kstest(s, "norm", args=(0.0, sd)).statistic)
    edges = np.linspace(-dim * bandwidth, dim * bandwidth, bins + 1)
    hist, _ = np.histogram(s, bins=edges, density=True)
    mids = 0.5 * (edges[1:] + edges[:-1])
    dev = float(np.abs(hist - stats.norm.pdf(mids, 0.0, sd)).max() * sd)
    ratio = None
    if dim == 2:
        h = 0.1 * bandwidth
        at0 = np.mean(np.abs(s) < h)
        atb = 0.5 * (np.mean(np.abs(s - bandwidth) < h) + np.mean(np.abs(s + bandwidth) < h))
        ratio = float(at0 / atb)
    return FrequencyLawReport(
        dim, float(bandwidth), subsample, float(s.var(ddof=1)), target, ks, dev, ratio, variance_standard_error(s)
    )


# ---------------------------------------------------------------------------
# 1D illustration


def encoding_illustration(
    points: Sequence[float],
    noise: Sequence[float] = (),
    grid: int = 200,
    bandwidth: int = 16,
) -> tuple[list[str], list[list[float]]]:
    """Sampled impulse and sinc encodings of a 1D cloud, clean and shifted.

    Returns CSV columns and rows: ``t`` then ``impulse_clean``,
    ``sinc_clean`` and one impulse/sinc pair per offset in ``noise`` (all
    points shifted by the offset). The impulse curve is the ``grid``-bin
    histogram read at ``t``.
    """
    x = np.asarray(points, dtype=np.float64)
    if np.any((x <= 0) | (x >= 1)):
        raise DataError("illustration points must lie in (0, 1)")
    t = (np.arange(grid) + 0.5) / grid
    cols = ["t", "impulse_clean", "sinc_clean"]
    data = [t, encode_impulse(x, grid), sinc_signal(x, bandwidth, t)]
    for eps in noise:
        shifted = np.clip(x + eps, 1e-9, 1 - 1e-9)
        cols += [f"impulse_noise_{eps:g}", f"sinc_noise_{eps:g}"]
        data += [encode_impulse(shifted, grid), sinc_signal(shifted, bandwidth, t)]
    return cols, np.stack(data, axis=1).tolist()


def curve_gap(clean, noisy) -> float:
    return float(np.linalg.norm(np.asarray(clean) - np.asarray(noisy)))
