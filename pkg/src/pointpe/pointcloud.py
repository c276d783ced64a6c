"""Point-cloud data model, file ingestion and synthetic shapes."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError, ParseError
from .rng import RngLike, seeded_rng

SHAPES = ("sphere", "cube", "torus", "cylinder", "cone", "helix")

TORUS_MAJOR = 0.7
TORUS_MINOR = 0.3
CYLINDER_HEIGHT = 2.0
CYLINDER_RADIUS = 0.7
CONE_HEIGHT = 2.0
CONE_RADIUS = 0.7
HELIX_TURNS = 2.0
HELIX_RADIUS = 0.7
HELIX_PITCH = 0.5


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of N points in 3-space with an optional class label."""

    points: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 3:
            pts = pts.reshape(1, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DataError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise DataError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise DataError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.label)


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise DataError("face index out of range")
        object.__setattr__(self, "vertices", _frozen(v))
        f = f.copy()
        f.setflags(write=False)
        object.__setattr__(self, "faces", f)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


# ---------------------------------------------------------------------------
# XYZ text files


def load_xyz(path, label: Optional[int] = None) -> PointCloud:
    """Read one point per line; blank lines and ``#`` comments are skipped."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"expected 3 values, got {len(parts)}", path, lineno)
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ParseError(f"not a number in {line!r}", path, lineno) from None
    if not rows:
        raise ParseError("file holds no points", path)
    return PointCloud(np.array(rows), label)


def format_xyz(pc: PointCloud) -> str:
    # repr() is the shortest string that round-trips a float exactly
    return "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pc.points.tolist())


def save_xyz(path, pc: PointCloud) -> None:
    atomic_write_text(path, format_xyz(pc))


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary sibling, then rename over ``path``; parents are created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# OFF meshes


def _off_tokens(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def load_off(path) -> TriangleMesh:
    """Parse an OFF mesh. Polygons are fan-triangulated from their first vertex.

    ModelNet ships files whose counts are fused onto the header line
    (``OFF490 518 0``); that form is accepted.
    """
    lines = _off_tokens(path)
    try:
        lineno, first = next(lines)
    except StopIteration:
        raise ParseError("empty file", path) from None
    if not first.startswith("OFF"):
        raise ParseError("missing OFF header", path, lineno)
    rest = first[3:].strip()
    if not rest:
        try:
            lineno, rest = next(lines)
        except StopIteration:
            raise ParseError("missing counts line", path) from None
    try:
        counts = [int(t) for t in rest.split()]
        n_verts, n_faces = counts[0], counts[1]
    except (ValueError, IndexError):
        raise ParseError(f"bad counts line {rest!r}", path, lineno) from None

    verts = np.empty((n_verts, 3))
    for k in range(n_verts):
        try:
            lineno, line = next(lines)
            verts[k] = [float(t) for t in line.split()[:3]]
        except StopIteration:
            raise ParseError("unexpected end of file in vertex block", path) from None
        except ValueError:
            raise ParseError(f"bad vertex {line!r}", path, lineno) from None

    tris = []
    for _ in range(n_faces):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise ParseError("unexpected end of file in face block", path) from None
        try:
            toks = [int(t) for t in line.split()]
        except ValueError:
            raise ParseError(f"bad face {line!r}", path, lineno) from None
        n = toks[0]
        idx = toks[1 : 1 + n]
        if n < 3 or len(idx) != n:
            raise ParseError(f"face needs >= 3 indices, got {line!r}", path, lineno)
        for i in idx:
            if i < 0 or i >= n_verts:
                raise ParseError(f"face index {i} out of range [0, {n_verts})", path, lineno)
        for j in range(1, n - 1):
            tris.append((idx[0], idx[j], idx[j + 1]))
    return TriangleMesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))


def sample_surface(mesh: TriangleMesh, n: int, rng: RngLike = None) -> PointCloud:
    """Area-weighted triangle choice followed by uniform barycentric sampling."""
    if n < 1:
        raise DataError("n must be >= 1")
    rng = seeded_rng(rng)
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise DataError("degenerate mesh: total surface area is zero")
    tri = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = (mesh.vertices[mesh.faces[tri, k]] for k in range(3))
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return PointCloud(pts)


# ---------------------------------------------------------------------------
# normalization and synthetic shapes


def normalize(pc: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the farthest point has norm 1.

    A cloud whose points all coincide (up to rounding of the mean) is only
    centered.
    """
    pts = pc.points
    if not np.ptp(pts, axis=0).any():
        return PointCloud(np.zeros_like(pts), pc.label)
    centered = pts - pts.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius > 1e-12 * np.abs(pts).max():
        centered = centered / radius
    return PointCloud(centered, pc.label)


def _unit_vectors(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sphere(rng, n):
    # antipodal pairs (plus a zero-sum triple for odd n) keep the sample
    # centroid at the origin, so normalization leaves every norm at 1
    if n == 1:
        return _unit_vectors(rng, 1)
    n_pairs = n // 2 if n % 2 == 0 else (n - 3) // 2
    half = _unit_vectors(rng, n_pairs)
    parts = [half, -half]
    if n % 2:
        p = _unit_vectors(rng, 1)[0]
        q = np.cross(p, _unit_vectors(rng, 1)[0])
        q /= np.linalg.norm(q)
        s = math.sqrt(3) / 2
        parts.append(np.array([p, -0.5 * p + s * q, -0.5 * p - s * q]))
    return np.concatenate(parts)


def _cube(rng, n):
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts = np.empty((n, 3))
    for k in range(3):
        others = [a for a in range(3) if a != k]
        m = axis == k
        pts[m, k] = sign[m]
        pts[m, others[0]] = uv[m, 0]
        pts[m, others[1]] = uv[m, 1]
    return pts


def _torus(rng, n):
    R, r = TORUS_MAJOR, TORUS_MINOR
    out = np.empty(0)
    # rejection on the tube angle: surface density is proportional to R + r cos v
    while out.size < n:
        v = rng.uniform(0, 2 * np.pi, size=2 * n)
        keep = rng.random(2 * n) * (R + r) < R + r * np.cos(v)
        out = np.concatenate([out, v[keep]])
    v = out[:n]
    u = rng.uniform(0, 2 * np.pi, size=n)
    rho = R + r * np.cos(v)
    return np.stack([rho * np.cos(u), rho * np.sin(u), r * np.sin(v)], axis=1)


def _disk(rng, n, radius):
    rho = radius * np.sqrt(rng.random(n))
    t = rng.uniform(0, 2 * np.pi, size=n)
    return rho * np.cos(t), rho * np.sin(t)


def _cylinder(rng, n):
    r, h = CYLINDER_RADIUS, CYLINDER_HEIGHT
    side, cap = 2 * np.pi * r * h, np.pi * r * r
    which = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    t = rng.uniform(0, 2 * np.pi, size=n)
    z = rng.uniform(-h / 2, h / 2, size=n)
    x, y = r * np.cos(t), r * np.sin(t)
    dx, dy = _disk(rng, n, r)
    pts = np.stack([x, y, z], axis=1)
    for k, zc in ((1, h / 2), (2, -h / 2)):
        m = which == k
        pts[m] = np.stack([dx[m], dy[m], np.full(m.sum(), zc)], axis=1)
    return pts


def _cone(rng, n):
    r, h = CONE_RADIUS, CONE_HEIGHT
    side, base = np.pi * r * math.hypot(r, h), np.pi * r * r
    on_base = rng.random(n) < base / (side + base)
    # distance from apex, as a fraction of the slant, has density 2s on [0, 1]
    s = np.sqrt(rng.random(n))
    t = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.stack([s * r * np.cos(t), s * r * np.sin(t), h / 2 - s * h], axis=1)
    dx, dy = _disk(rng, n, r)
    pts[on_base] = np.stack([dx, dy, np.full(n, -h / 2)], axis=1)[on_base]
    return pts


def _helix(rng, n):
    # constant speed parameterization, so uniform in t is uniform in arc length
    t = rng.uniform(0, HELIX_TURNS, size=n)
    a = 2 * np.pi * t
    height = HELIX_TURNS * HELIX_PITCH
    return np.stack(
        [HELIX_RADIUS * np.cos(a), HELIX_RADIUS * np.sin(a), HELIX_PITCH * t - height / 2], axis=1
    )


_SAMPLERS = {
    "sphere": _sphere,
    "cube": _cube,
    "torus": _torus,
    "cylinder": _cylinder,
    "cone": _cone,
    "helix": _helix,
}


def make_shape(kind: str, n: int, rng: RngLike = None) -> PointCloud:
    """Sample ``n`` points on a canonical synthetic surface and normalize.

    The label is the shape's index in :data:`SHAPES`.
    """
    if kind not in _SAMPLERS:
        raise DataError(f"unknown shape {kind!r}; expected one of {SHAPES}")
    if n < 1:
        raise DataError("n must be >= 1")
    pts = _SAMPLERS[kind](seeded_rng(rng), n)
    return normalize(PointCloud(pts, SHAPES.index(kind)))


def random_rotation(rng) -> np.ndarray:
    """Haar-uniform rotation matrix."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def make_instance(
    kind: str,
    n: int,
    rng: RngLike = None,
    stretch: float = 0.0,
    rotate: bool = False,
) -> PointCloud:
    """A randomized member of a shape class.

    Per-axis scale factors are drawn from ``[1 - stretch, 1 + stretch]`` and,
    with ``rotate``, a uniformly random orientation is applied; the result is
    normalized again.
    """
    rng = seeded_rng(rng)
    pc = make_shape(kind, n, rng)
    pts = pc.points
    if stretch:
        pts = pts * rng.uniform(1 - stretch, 1 + stretch, size=3)
    if rotate:
        pts = pts @ random_rotation(rng).T
    return normalize(PointCloud(pts, pc.label))


def quadratic_warp(pc: PointCloud, strength: float, rng: RngLike = None) -> PointCloud:
    """Add a random quadratic field ``A [x^2, y^2, z^2, xy, yz, zx]`` and renormalize.

    ``A`` has ``N(0, strength^2)`` entries. A generic warp removes the mirror
    and half-turn symmetries of the primitive shapes.
    """
    rng = seeded_rng(rng)
    p = pc.points
    quad = np.stack([p[:, 0] ** 2, p[:, 1] ** 2, p[:, 2] ** 2, p[:, 0] * p[:, 1], p[:, 1] * p[:, 2], p[:, 2] * p[:, 0]], axis=1)
    A = rng.normal(0.0, strength, size=(3, 6))
    return normalize(pc.with_points(p + quad @ A.T))


def make_synthetic_dataset(
    per_class: int,
    n_points: int = 1024,
    seed: int = 0,
    kinds: Sequence[str] = SHAPES,
    stretch: float = 0.0,
    rotate: bool = False,
) -> list[PointCloud]:
    """``per_class`` randomized instances of every shape, class-major order."""
    rng = seeded_rng(seed)
    return [
        make_instance(kind, n_points, rng, stretch=stretch, rotate=rotate)
        for kind in kinds
        for _ in range(per_class)
    ]


# ---------------------------------------------------------------------------
# dataset manifests


def write_manifest(path, records: Iterable[dict]) -> None:
    """Write a JSON array of ``{"path", "label"}`` records."""
    recs = [{"path": str(r["path"]), "label": int(r["label"])} for r in records]
    atomic_write_text(path, json.dumps(recs, indent=1) + "\n")


def read_manifest(path) -> list[dict]:
    path = Path(path)
    try:
        recs = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(recs, list) or not recs:
        raise DataError(f"{path}: manifest must be a non-empty JSON array")
    out = []
    for r in recs:
        if not isinstance(r, dict) or "path" not in r or "label" not in r:
            raise DataError(f"{path}: each record needs 'path' and 'label'")
        p = Path(r["path"])
        if not p.is_absolute():
            p = path.parent / p
        out.append({"path": p, "label": int(r["label"])})
    return out


def load_manifest(path) -> list[PointCloud]:
    return [load_xyz(r["path"], r["label"]) for r in read_manifest(path)]
