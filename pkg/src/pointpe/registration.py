"""Rigid registration by Gauss-Newton on pooled global features.

The unknown pose is updated on the left, ``T <- exp(dxi) T``, with
``dxi = (J^T J + lambda I)^-1 J^T (f(target) - f(T source))``. ``J`` is a
central-difference Jacobian of the pooled feature with respect to the six
twist generators, so any encoder and pooling can be plugged in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .encoders import Encoder
from .errors import ConfigError, DataError, NumericalError
from .pointcloud import SHAPES, PointCloud, make_instance, quadratic_warp
from .pooling import PooledFeature, pool_values
from .rng import child_seed, seeded_rng

DAMPING_FLOOR = 1e-9
DAMPING_CEIL = 1e12
# accept a damped step only if it realizes this share of the predicted decrease
GAIN_RATIO_MIN = 0.25
PREDICTED_FLOOR = 1e-15
REORTHONORMALIZE_EVERY = 10
ORTHO_TOL = 1e-6
SUCCESS_ROT_DEG = 5.0
SUCCESS_TRANS = 0.05
MAX_PERTURB_DEG = 30.0
MAX_PERTURB_SHIFT = 0.3
_LOG_PI_MARGIN = 1e-6


def hat(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def vee(S) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise NumericalError("rigid transform must be finite")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ConfigError("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def apply(self, points) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def transform(self, pc: PointCloud) -> PointCloud:
        return pc.with_points(self.apply(pc.points))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def orthonormalized(self) -> "RigidTransform":
        """Nearest rotation (polar factor) with the same translation."""
        U, _, Vt = np.linalg.svd(self.rotation)
        R = U @ Vt
        if np.linalg.det(R) < 0:
            U[:, -1] *= -1
            R = U @ Vt
        return RigidTransform(R, self.translation)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    K = hat(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + math.sin(theta) / theta * K + (1 - math.cos(theta)) / theta**2 * (K @ K)


def _so3_log(R) -> tuple[np.ndarray, float]:
    s = 0.5 * vee(R - R.T)
    sin_t = float(np.linalg.norm(s))
    cos_t = 0.5 * (np.trace(R) - 1.0)
    theta = math.atan2(sin_t, cos_t)
    if theta > math.pi - _LOG_PI_MARGIN:
        raise NumericalError("logarithm is ambiguous at a rotation angle of pi")
    if sin_t < 1e-12:
        return s, theta
    return s * (theta / sin_t), theta


def se3_exp(xi) -> RigidTransform:
    """Twist ``(omega, v)`` to a rigid transform (Rodrigues plus the V matrix)."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    w, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    K = hat(w)
    if theta < 1e-8:
        V = np.eye(3) + 0.5 * K + K @ K / 6.0
    else:
        V = np.eye(3) + (1 - math.cos(theta)) / theta**2 * K + (theta - math.sin(theta)) / theta**3 * (K @ K)
    return RigidTransform(so3_exp(w), V @ v)


def se3_log(T: RigidTransform) -> np.ndarray:
    w, theta = _so3_log(T.rotation)
    K = hat(w)
    if theta < 1e-8:
        Vinv = np.eye(3) - 0.5 * K + K @ K / 12.0
    else:
        half = 0.5 * theta
        coef = (1 - half * math.cos(half) / math.sin(half)) / theta**2
        Vinv = np.eye(3) - 0.5 * K + coef * (K @ K)
    return np.concatenate([w, Vinv @ T.translation])


def rotation_angle_deg(R) -> float:
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    s = np.linalg.norm(0.5 * vee(R - R.T))
    return math.degrees(math.atan2(s, c))


def pose_errors(estimate: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """Rotation error in degrees and translation error of ``estimate`` vs ``truth``."""
    dR = estimate.rotation @ truth.rotation.T
    return rotation_angle_deg(dR), float(np.linalg.norm(estimate.translation - truth.translation))


# ---------------------------------------------------------------------------
# features and Jacobian


def global_feature_values(points, encoder: Encoder, pooling_kind: str) -> np.ndarray:
    return pool_values(encoder.encode_points(points), pooling_kind)


def global_feature(pc: PointCloud, encoder: Encoder, pooling_kind: str):
    if pooling_kind not in ("max", "mean", "median", "sum"):
        raise ConfigError(f"unknown pooling {pooling_kind!r}")
    return PooledFeature(global_feature_values(pc.points, encoder, pooling_kind), pooling_kind)


def _jacobian(points, encoder, pooling_kind, step):
    cols = []
    for j in range(6):
        e = np.zeros(6)
        e[j] = step
        fp = global_feature_values(se3_exp(e).apply(points), encoder, pooling_kind)
        fm = global_feature_values(se3_exp(-e).apply(points), encoder, pooling_kind)
        cols.append((fp - fm) / (2 * step))
    J = np.stack(cols, axis=1)
    if not np.all(np.isfinite(J)):
        raise NumericalError("non-finite feature Jacobian")
    return J


def feature_jacobian(pc: PointCloud, encoder: Encoder, pooling_kind: str, step: float = 1e-3) -> np.ndarray:
    """``K x 6`` central-difference derivative of the pooled feature.

    Column ``j`` perturbs the cloud by ``exp(+-step e_j)`` on the left; columns
    0..2 are rotations about x, y, z and 3..5 translations along x, y, z.
    """
    if not step > 0:
        raise ConfigError("finite-difference step must be positive")
    return _jacobian(pc.points, encoder, pooling_kind, step)


def rff_translation_jacobian(W, points, pooling_kind: str = "mean") -> np.ndarray:
    """Exact ``K x 3`` derivative of pooled RFF features under translation.

    ``d cos(Wx)/dt = -sin(Wx) W`` and ``d sin(Wx)/dt = cos(Wx) W``; only mean
    and sum pooling are linear, so only they are supported.
    """
    W = np.asarray(W, dtype=np.float64)
    proj = np.asarray(points) @ W.T
    dcos = -np.sin(proj)[:, :, None] * W[None, :, :]
    dsin = np.cos(proj)[:, :, None] * W[None, :, :]
    d = np.concatenate([dcos, dsin], axis=1)
    if pooling_kind == "mean":
        return d.mean(axis=0)
    if pooling_kind == "sum":
        return d.sum(axis=0)
    raise ConfigError("analytic translation Jacobian needs mean or sum pooling")


# ---------------------------------------------------------------------------
# solver


@dataclass(frozen=True)
class RegistrationOptions:
    max_iters: int = 50
    tol: float = 1e-7
    step: float = 1e-3
    damping: float = 1e-6
    max_rejects: int = 12
    init_centroid: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if not self.step > 0:
            raise ConfigError("step must be positive")
        if self.damping < 0:
            raise ConfigError("damping must be >= 0")


@dataclass
class RegistrationResult:
    estimate: RigidTransform
    iterations: int
    residual: float
    converged: bool
    step_norm: float
    status: str = "max_iters"
    rotation_error_deg: Optional[float] = None
    translation_error: Optional[float] = None
    residuals: list = field(default_factory=list)

    def success(self, rot_deg: float = SUCCESS_ROT_DEG, trans: float = SUCCESS_TRANS) -> bool:
        if self.rotation_error_deg is None:
            raise ConfigError("success needs a ground-truth comparison")
        return self.rotation_error_deg < rot_deg and self.translation_error < trans


def register(
    source: PointCloud,
    target: PointCloud,
    encoder: Encoder,
    pooling_kind: str = "mean",
    opts: RegistrationOptions = RegistrationOptions(),
    truth: Optional[RigidTransform] = None,
) -> RegistrationResult:
    """Estimate ``T`` with ``f(T source) = f(target)`` in feature space.

    Damping follows a Levenberg schedule (x10 on a rejected step, /10 on an
    accepted one, floor 1e-9). A step is rejected unless the cost decrease
    is at least a quarter of the one predicted by the linearization, which
    keeps large early steps from jumping into a distant basin. With
    ``damping=0`` plain Gauss-Newton steps are always taken. Singular
    normal equations end the run with status ``"singular"`` instead of
    raising.

    With ``init_centroid`` the iteration starts from the translation that
    matches the two centroids. Without it, a large offset leaks into the
    rotation columns of the first linearization and the solver can settle
    in a flipped pose.
    """
    src = source.points
    f_target = global_feature_values(target.points, encoder, pooling_kind)
    T = RigidTransform.identity()
    if opts.init_centroid:
        T = RigidTransform(np.eye(3), target.points.mean(axis=0) - src.mean(axis=0))
    r = f_target - global_feature_values(T.apply(src), encoder, pooling_kind)
    cost = float(r @ r)
    lam = opts.damping
    residuals = [math.sqrt(cost)]
    status, converged, step_norm = "max_iters", False, float("inf")
    compositions = 0
    it = 0
    while it < opts.max_iters:
        it += 1
        moved = T.apply(src)
        J = _jacobian(moved, encoder, pooling_kind, opts.step)
        JtJ, Jtr = J.T @ J, J.T @ r
        accepted = False
        for _ in range(opts.max_rejects + 1):
            A = JtJ + lam * np.eye(6)
            if lam == 0 and np.linalg.cond(A) > 1e14:
                status = "singular"
                break
            try:
                dxi = np.linalg.solve(A, Jtr)
            except np.linalg.LinAlgError:
                status = "singular"
                break
            if not np.all(np.isfinite(dxi)):
                status = "singular"
                break
            T_new = se3_exp(dxi) @ T
            compositions += 1
            if compositions % REORTHONORMALIZE_EVERY == 0:
                T_new = T_new.orthonormalized()
            r_new = f_target - global_feature_values(T_new.apply(src), encoder, pooling_kind)
            cost_new = float(r_new @ r_new)
            step_norm = float(np.linalg.norm(dxi))
            predicted = float(2 * dxi @ Jtr - dxi @ JtJ @ dxi)
            good = cost_new <= cost and (predicted <= PREDICTED_FLOOR or cost - cost_new >= GAIN_RATIO_MIN * predicted)
            if opts.damping == 0 or good:
                T, r, cost = T_new, r_new, cost_new
                if opts.damping > 0:
                    lam = max(lam / 10.0, DAMPING_FLOOR)
                accepted = True
                break
            lam = min(max(lam, DAMPING_FLOOR) * 10.0, DAMPING_CEIL)
        if status == "singular":
            break
        residuals.append(math.sqrt(cost))
        if not accepted:
            status = "stalled"
            break
        if step_norm < opts.tol:
            status, converged = "converged", True
            break
    result = RegistrationResult(T, it, math.sqrt(cost), converged, step_norm, status, residuals=residuals)
    if truth is not None:
        result.rotation_error_deg, result.translation_error = pose_errors(T, truth)
    return result


# ---------------------------------------------------------------------------
# noise sweeps


REGISTRATION_SHAPES = ("cube", "cone", "helix", "torus", "cylinder")


def registration_sources(
    kinds: Sequence[str] = REGISTRATION_SHAPES,
    n_points: int = 512,
    stretch: float = 0.3,
    warp: float = 0.3,
    seed: int = 0,
) -> list[PointCloud]:
    """Stretched and quadratically warped synthetic shapes without exact symmetries.

    A symmetric source (box, cylinder) has several poses with the same
    feature, so its ground truth is not identifiable.
    """
    out = []
    for i, kind in enumerate(kinds):
        if kind not in SHAPES:
            raise ConfigError(f"unknown shape {kind!r}")
        rng = seeded_rng(child_seed(seed, i))
        pc = make_instance(kind, n_points, rng, stretch=stretch)
        out.append(quadratic_warp(pc, warp, rng) if warp else pc)
    return out


def random_perturbation(
    rng, max_deg: float = MAX_PERTURB_DEG, max_shift: float = MAX_PERTURB_SHIFT
) -> RigidTransform:
    """Axis uniform on the sphere, angle uniform in [0, max_deg], shift uniform in the cube."""
    rng = seeded_rng(rng)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(rng.uniform(0.0, max_deg))
    return RigidTransform(so3_exp(axis * angle), rng.uniform(-max_shift, max_shift, size=3))


@dataclass
class SweepRow:
    pooling: str
    sigma: float
    trials: int
    successes: int
    mean_rot_err_deg: float
    mean_trans_err: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


SWEEP_COLUMNS = ("pooling", "sigma", "trials", "successes", "mean_rot_err_deg", "mean_trans_err")
SUCCESS_CRITERION = f"rotation error < {SUCCESS_ROT_DEG} deg and translation error < {SUCCESS_TRANS}"


def registration_trial(
    source: PointCloud,
    truth: RigidTransform,
    sigma: float,
    encoder: Encoder,
    pooling_kind: str,
    noise_seed: int,
    opts: RegistrationOptions = RegistrationOptions(),
) -> RegistrationResult:
    """Register ``source`` against ``truth(source)`` plus Gaussian noise of std ``sigma``."""
    target = truth.apply(source.points)
    if sigma > 0:
        target = target + seeded_rng(noise_seed).normal(0.0, sigma, size=target.shape)
    return register(source, source.with_points(target), encoder, pooling_kind, opts, truth)


def noise_sweep(
    dataset: Sequence[PointCloud],
    encoder: Union[Encoder, Mapping[str, Encoder]],
    pooling_kinds: Sequence[str],
    noise_levels: Sequence[float],
    trials: int = 50,
    seed: int = 0,
    opts: RegistrationOptions = RegistrationOptions(),
    trace: Optional[list] = None,
) -> list[SweepRow]:
    """Success-rate table, one row per (pooling, noise level).

    Trial ``t`` registers ``dataset[t % len]`` under a perturbation seeded by
    ``(seed, t)``, shared by every pooling and level, with target noise
    seeded by ``(seed, t, level index)``.
    """
    if not dataset:
        raise DataError("registration sweep needs a non-empty dataset")
    perturb = [random_perturbation(child_seed(seed, t)) for t in range(trials)]
    rows = []
    for pooling in pooling_kinds:
        enc = encoder[pooling] if isinstance(encoder, Mapping) else encoder
        for li, sigma in enumerate(noise_levels):
            rot, trans, ok = [], [], 0
            for t in range(trials):
                res = registration_trial(
                    dataset[t % len(dataset)], perturb[t], sigma, enc, pooling, child_seed(seed, t, li + 1), opts
                )
                rot.append(res.rotation_error_deg)
                trans.append(res.translation_error)
                ok += res.success()
                if trace is not None:
                    trace.append(
                        {
                            "pooling": pooling,
                            "sigma": sigma,
                            "trial": t,
                            "iterations": res.iterations,
                            "status": res.status,
                            "residual": res.residual,
                            "rot_err_deg": res.rotation_error_deg,
                            "trans_err": res.translation_error,
                        }
                    )
            rows.append(
                SweepRow(pooling, float(sigma), trials, ok, float(np.mean(rot)) if rot else 0.0, float(np.mean(trans)) if trans else 0.0)
            )
    return rows
