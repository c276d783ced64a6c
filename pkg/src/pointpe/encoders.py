"""Per-point embeddings.

Analytical encoders (impulse, sinc grid, tensor-product sinusoids, random
Fourier features, Gaussian lattice) and randomly initialized baselines (a
deep ReLU MLP and an RFF front end followed by four self-attention layers).
All randomness is spent when an encoder is built; encoding is a pure
function afterwards.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, DataError, ResourceLimitError
from .pointcloud import PointCloud
from .rng import seeded_rng

ENCODER_KINDS = (
    "impulse",
    "sinc1d",
    "sinusoid_grid",
    "rff",
    "gaussian_pe",
    "relu_mlp",
    "rff_attention",
)

RELU_WIDTHS = (64, 128, 1024)
ATTENTION_LAYERS = 4
MAX_GRID_TERMS = 10**6


@dataclass(frozen=True)
class Encoder:
    """A frozen per-point embedding ``R^dim_in -> R^dim_out``.

    ``params`` holds the materialized, read-only parameter arrays. Only
    ``(kind, dim_in, dim_out, scale, seed)`` is ever serialized; the arrays
    are regenerated from the seed.
    """

    kind: str
    dim_in: int
    dim_out: int
    scale: float
    seed: int
    params: Mapping[str, np.ndarray] = field(repr=False, compare=False)

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dim_in:
            raise DataError(f"expected a {self.dim_in}-vector, got length {x.shape[0]}")
        return self._rows(x[None, :])[0]

    def encode_points(self, points) -> np.ndarray:
        """Embed an ``(N, dim_in)`` array, rows computed in a canonical order.

        Rows are evaluated on the lexicographically sorted points and scattered
        back, so the output for a permuted input is the same matrix with its
        rows permuted, bit for bit.
        """
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, self.dim_in) if self.dim_in > 1 else pts[:, None]
        if pts.ndim != 2 or pts.shape[1] != self.dim_in:
            raise DataError(f"expected points of width {self.dim_in}, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("points must be finite")
        order = np.lexsort(pts.T[::-1])
        out = np.empty((pts.shape[0], self.dim_out))
        out[order] = self._rows(np.ascontiguousarray(pts[order]))
        return out

    def encode_cloud(self, pc: PointCloud) -> np.ndarray:
        return self.encode_points(pc.points)

    def _rows(self, pts: np.ndarray) -> np.ndarray:
        return _FORWARD[self.kind](self, pts)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim_in": self.dim_in,
            "dim_out": self.dim_out,
            "scale": self.scale,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Encoder":
        return build_encoder(d["kind"], d["dim_in"], d["dim_out"], d["scale"], d["seed"])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            a = np.ascontiguousarray(self.params[name])
            h.update(name.encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()


def _freeze(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        a = np.array(v, copy=True)
        a.setflags(write=False)
        out[k] = a
    return out


def build_encoder(kind: str, dim_in: int, dim_out: int, scale: float = 1.0, seed: int = 0) -> Encoder:
    """Materialize an encoder; equal arguments give bit-identical parameters.

    ``scale`` is the frequency standard deviation for ``rff`` and
    ``rff_attention``, the weight standard deviation for ``relu_mlp``, the
    kernel width for ``gaussian_pe`` and the bandwidth ``B`` (rounded) for
    ``sinusoid_grid``. It is ignored by ``impulse`` and ``sinc1d``.
    """
    if kind not in _BUILDERS:
        raise ConfigError(f"unknown encoder kind {kind!r}; expected one of {ENCODER_KINDS}")
    dim_in, dim_out = int(dim_in), int(dim_out)
    if dim_in < 1 or dim_out < 1:
        raise ConfigError("encoder dimensions must be >= 1")
    if not (scale > 0 and math.isfinite(scale)):
        raise ConfigError(f"scale must be positive, got {scale}")
    rng = seeded_rng(seed)
    params = _BUILDERS[kind](dim_in, dim_out, float(scale), rng)
    return Encoder(kind, dim_in, dim_out, float(scale), int(seed), _freeze(params))


def rff_from_matrix(W) -> Encoder:
    """An RFF encoder with an explicit ``F x D`` frequency matrix."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    return Encoder("rff", W.shape[1], 2 * W.shape[0], float(np.std(W)) or 1.0, -1, _freeze({"W": W}))


# ---------------------------------------------------------------------------
# builders


def _one_d_only(kind, dim_in):
    if dim_in != 1:
        raise ConfigError(f"{kind} encodes scalars; dim_in must be 1, got {dim_in}")


def _build_impulse(dim_in, dim_out, scale, rng):
    _one_d_only("impulse", dim_in)
    return {}


def _build_sinc(dim_in, dim_out, scale, rng):
    _one_d_only("sinc1d", dim_in)
    if dim_out < 2:
        raise ConfigError("sinc1d needs bandwidth >= 2")
    return {"centers": sinc_grid(dim_out)}


def _build_rff(dim_in, dim_out, scale, rng):
    if dim_out % 2:
        raise ConfigError(f"rff needs an even output dimension, got {dim_out}")
    return {"W": rng.normal(0.0, scale, size=(dim_out // 2, dim_in))}


def _build_sinusoid_grid(dim_in, dim_out, scale, rng):
    bandwidth = max(1, int(round(scale)))
    grid = expand_frequency_grid(dim_in, bandwidth)
    if dim_out > len(grid.freqs):
        raise ConfigError(f"sinusoid_grid has only {len(grid.freqs)} terms, asked for {dim_out}")
    pick = np.sort(rng.choice(len(grid.freqs), size=dim_out, replace=False))
    return {"freqs": grid.freqs[pick].astype(np.float64), "is_sin": grid.is_sin[pick]}


def _build_gaussian_pe(dim_in, dim_out, scale, rng):
    per_axis = int(round(dim_out ** (1.0 / dim_in)))
    if per_axis**dim_in != dim_out:
        raise ConfigError(f"gaussian_pe needs dim_out = m**{dim_in}, got {dim_out}")
    axis = np.linspace(-1.0, 1.0, per_axis) if per_axis > 1 else np.zeros(1)
    centers = np.array(list(itertools.product(axis, repeat=dim_in)))
    return {"centers": centers}


def _build_relu_mlp(dim_in, dim_out, scale, rng):
    widths = [dim_in, *RELU_WIDTHS[:-1], dim_out]
    params = {}
    for layer, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"W{layer}"] = rng.normal(0.0, scale, size=(b, a))
        params[f"b{layer}"] = np.zeros(b)
    return params


def _build_rff_attention(dim_in, dim_out, scale, rng):
    if dim_out % (2 * ATTENTION_LAYERS):
        raise ConfigError(f"rff_attention needs dim_out divisible by {2 * ATTENTION_LAYERS}")
    width = dim_out // ATTENTION_LAYERS
    params = _build_rff(dim_in, width, scale, rng)
    std = 1.0 / math.sqrt(width)
    for layer in range(ATTENTION_LAYERS):
        for name in ("q", "k", "v"):
            params[f"{name}{layer}"] = rng.normal(0.0, std, size=(width, width))
    return params


_BUILDERS = {
    "impulse": _build_impulse,
    "sinc1d": _build_sinc,
    "sinusoid_grid": _build_sinusoid_grid,
    "rff": _build_rff,
    "gaussian_pe": _build_gaussian_pe,
    "relu_mlp": _build_relu_mlp,
    "rff_attention": _build_rff_attention,
}


# ---------------------------------------------------------------------------
# forward passes on (N, D) arrays


def _impulse_rows(enc, pts):
    x = pts[:, 0]
    if np.any((x <= 0) | (x >= 1)):
        raise DataError("impulse encoding needs points in the open interval (0, 1)")
    out = np.zeros((len(x), enc.dim_out))
    out[np.arange(len(x)), impulse_bins(x, enc.dim_out)] = 1.0
    return out


def _sinc_rows(enc, pts):
    return np.sinc(enc.dim_out * (enc.params["centers"][None, :] - pts[:, :1]))


def rff_features(W: np.ndarray, pts: np.ndarray) -> np.ndarray:
    proj = pts @ W.T
    return np.concatenate([np.cos(proj), np.sin(proj)], axis=1)


def _rff_rows(enc, pts):
    return rff_features(enc.params["W"], pts)


def _sinusoid_rows(enc, pts):
    phase = 2 * np.pi * (pts @ enc.params["freqs"].T)
    return np.where(enc.params["is_sin"][None, :], np.sin(phase), np.cos(phase))


def _gaussian_rows(enc, pts):
    c = enc.params["centers"]
    d2 = ((pts[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-d2 / (2 * enc.scale**2))


def _relu_rows(enc, pts):
    h = pts
    layer = 0
    while f"W{layer}" in enc.params:
        h = np.maximum(h @ enc.params[f"W{layer}"].T + enc.params[f"b{layer}"], 0.0)
        layer += 1
    return h


def _softmax_rows(s):
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def _attention_rows(enc, pts):
    f = rff_features(enc.params["W"], pts)
    width = f.shape[1]
    outs = []
    for layer in range(ATTENTION_LAYERS):
        q = f @ enc.params[f"q{layer}"]
        k = f @ enc.params[f"k{layer}"]
        v = f @ enc.params[f"v{layer}"]
        f = _softmax_rows(q @ k.T / math.sqrt(width)) @ v
        outs.append(f)
    return np.concatenate(outs, axis=1)


_FORWARD = {
    "impulse": _impulse_rows,
    "sinc1d": _sinc_rows,
    "sinusoid_grid": _sinusoid_rows,
    "rff": _rff_rows,
    "gaussian_pe": _gaussian_rows,
    "relu_mlp": _relu_rows,
    "rff_attention": _attention_rows,
}


def encode(enc: Encoder, x) -> np.ndarray:
    return enc.encode(x)


def encode_cloud(enc: Encoder, pc: PointCloud) -> np.ndarray:
    return enc.encode_cloud(pc)


# ---------------------------------------------------------------------------
# 1D analytical encodings of a whole point set


def impulse_bins(x: np.ndarray, grid_size: int) -> np.ndarray:
    return np.minimum((np.asarray(x) * grid_size).astype(np.int64), grid_size - 1)


def encode_impulse(points, grid_size: int) -> np.ndarray:
    """Histogram of a 1D point set on ``grid_size`` uniform bins of (0, 1)."""
    x = np.asarray(points, dtype=np.float64).reshape(-1)
    if np.any((x <= 0) | (x >= 1)):
        raise DataError("impulse encoding needs points in the open interval (0, 1)")
    return np.bincount(impulse_bins(x, grid_size), minlength=grid_size).astype(np.float64)


def sinc_grid(bandwidth: int) -> np.ndarray:
    """Nyquist sample locations ``k / K`` for ``k = 0..K-1``."""
    return np.arange(bandwidth) / bandwidth


def sinc_signal(points, bandwidth: int, t) -> np.ndarray:
    """``sum_i sinc(K (t - x_i))`` evaluated at ``t``."""
    x = np.asarray(points, dtype=np.float64).reshape(-1)
    t = np.asarray(t, dtype=np.float64)
    return np.sinc(bandwidth * (t[..., None] - x)).sum(axis=-1)


def encode_sinc(points, bandwidth: int) -> np.ndarray:
    """Coefficients ``gamma_k`` of the summed sinc signal at the K grid nodes."""
    if bandwidth < 2:
        raise ConfigError("bandwidth must be >= 2")
    return sinc_signal(points, bandwidth, sinc_grid(bandwidth))


def reconstruct_sinc(coeffs, t) -> np.ndarray:
    """Band-limited interpolation ``sum_k gamma_k sinc(K (t - u_k))``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    K = len(coeffs)
    t = np.asarray(t, dtype=np.float64)
    return (np.sinc(K * (t[..., None] - sinc_grid(K))) * coeffs).sum(axis=-1)


# ---------------------------------------------------------------------------
# tensor-product sinusoids and their rotated frequency form


@dataclass(frozen=True)
class FrequencyGrid:
    """Rotated-basis terms ``trig(2 pi f.x)``: ``freqs`` rows with ``is_sin`` flags."""

    freqs: np.ndarray
    is_sin: np.ndarray
    bandwidth: int

    def __len__(self) -> int:
        return len(self.freqs)


def expand_frequency_grid(dim: int, bandwidth: int, cap: int = MAX_GRID_TERMS) -> FrequencyGrid:
    """All ``(2B)^D`` rotated frequency terms of a D-dimensional sinusoid grid.

    Every lattice tuple ``(i1, .., iD)`` with ``0 <= i < B`` appears with each
    sign pattern ``(i1, +-i2, .., +-iD)`` under both cosine and sine.
    """
    if dim not in (1, 2, 3):
        raise ConfigError(f"dimension must be 1, 2 or 3, got {dim}")
    if bandwidth < 1:
        raise ConfigError("bandwidth must be >= 1")
    n_terms = (2 * bandwidth) ** dim
    if n_terms > cap:
        raise ResourceLimitError(f"(2B)^D = {n_terms} terms exceeds the cap of {cap}")
    lattice = np.array(list(itertools.product(range(bandwidth), repeat=dim)), dtype=np.int64)
    signs = np.array(list(itertools.product((1, -1), repeat=dim - 1)), dtype=np.int64).reshape(2 ** (dim - 1), dim - 1)
    signs = np.concatenate([np.ones((len(signs), 1), dtype=np.int64), signs], axis=1)
    signed = (signs[:, None, :] * lattice[None, :, :]).reshape(-1, dim)
    freqs = np.concatenate([signed, signed])
    is_sin = np.repeat([False, True], len(signed))
    return FrequencyGrid(freqs, is_sin, bandwidth)


def product_vs_rotated_basis(u: float, v: float, i: int, j: int) -> tuple[float, float]:
    """``cos(iu) cos(jv)`` and its rotated form ``(cos(iu+jv) + cos(iu-jv)) / 2``."""
    return (
        math.cos(i * u) * math.cos(j * v),
        0.5 * (math.cos(i * u + j * v) + math.cos(i * u - j * v)),
    )


def rotate_product_term(is_sin, freqs) -> list[tuple[float, bool, tuple[int, ...]]]:
    """Expand ``prod_d trig_d(2 pi f_d x_d)`` into rotated terms.

    Returns ``(coefficient, is_sin, signed frequency)`` triples, obtained by
    folding in one axis at a time with the product-to-sum identities.
    """
    terms = [(1.0, bool(is_sin[0]), (int(freqs[0]),))]
    for s_new, f in zip(is_sin[1:], freqs[1:]):
        nxt = []
        for c, s_old, fr in terms:
            plus, minus = fr + (int(f),), fr + (-int(f),)
            if not s_old and not s_new:  # cos a cos b
                nxt += [(c / 2, False, plus), (c / 2, False, minus)]
            elif s_old and not s_new:  # sin a cos b
                nxt += [(c / 2, True, plus), (c / 2, True, minus)]
            elif not s_old and s_new:  # cos a sin b
                nxt += [(c / 2, True, plus), (-c / 2, True, minus)]
            else:  # sin a sin b
                nxt += [(-c / 2, False, plus), (c / 2, False, minus)]
        terms = nxt
    return terms


def eval_product_term(is_sin, freqs, x) -> float:
    out = 1.0
    for s, f, xd in zip(is_sin, freqs, x):
        a = 2 * math.pi * f * xd
        out *= math.sin(a) if s else math.cos(a)
    return out


def eval_rotated_terms(terms, x) -> float:
    total = 0.0
    for c, s, fr in terms:
        a = 2 * math.pi * sum(f * xd for f, xd in zip(fr, x))
        total += c * (math.sin(a) if s else math.cos(a))
    return total
