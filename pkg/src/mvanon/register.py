"""Rigid point-set registration: GMM-EM coarse alignment plus ICP refinement.

The EM stage treats the moving cloud as the centroids of an isotropic
Gaussian mixture and the fixed cloud as observations, with a uniform outlier
component of weight w mixed in. Its E-step evaluates exact correspondence
posteriors (no approximation; the intended workloads stay below roughly
1500 x 8000 points) and its M-step is a closed-form weighted rigid
Procrustes solve followed by the exact isotropic variance update, so the
data log-likelihood never decreases. The ICP stage then refines with hard
nearest-neighbor correspondences capped at a maximum distance.

Both stages return the absolute moving-to-fixed transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .geometry import RigidTransform, nearest_rotation

# Variance floor (mm^2): EM on noise-free data drives sigma^2 to zero; at
# this point the fit is exact and iteration stops instead of underflowing.
_SIGMA2_FLOOR = 1e-10


class NoCorrespondences(RuntimeError):
    """ICP start pose has no fixed point within max_corr_dist of any moving
    point."""


class NumericalFailure(RuntimeError):
    """The EM update produced a non-finite or impossible parameter."""


@dataclass
class GmmEmConfig:
    max_iterations: int = 50
    sigma2_init: float = 0.0  # mm^2; 0 picks (fixed bounding diagonal / 4)^2
    outlier_weight: float = 0.2
    tol: float = 1e-6  # relative objective change that counts as converged

    def __post_init__(self):
        if not 0.0 <= self.outlier_weight < 1.0:
            raise ValueError("outlier_weight must lie in [0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.sigma2_init < 0:
            raise ValueError("sigma2_init must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class IcpConfig:
    iterations: int = 250
    max_corr_dist: float = 100.0  # mm
    tol: float = 1e-6  # relative MSE change that counts as converged

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.max_corr_dist <= 0:
            raise ValueError("max_corr_dist must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class RegistrationResult:
    transform: RigidTransform  # moving -> fixed
    final_mse: float  # mm^2
    iterations_used: int
    converged: bool
    # Per-iteration traces, kept so callers can audit monotonicity: the EM
    # objective (data log-likelihood) never decreases, the ICP MSE never
    # increases across accepted steps.
    objective_history: list = field(default_factory=list)
    mse_history: list = field(default_factory=list)


def _points(cloud) -> np.ndarray:
    pts = getattr(cloud, "points", cloud)
    return np.asarray(pts, dtype=float).reshape(-1, 3)


def _check_nondegenerate(pts: np.ndarray, name: str) -> None:
    if len(pts) < 3:
        raise ValueError(f"{name} cloud needs at least 3 points")
    centered = pts - pts.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[1] <= 1e-9 * max(s[0], 1.0):
        raise ValueError(f"{name} cloud is collinear or coincident")


def _procrustes(src: np.ndarray, dst: np.ndarray, weights=None):
    """Least-squares rigid fit src -> dst; returns (R, t).

    SVD of the weighted cross-covariance, with the usual det correction so
    the result is a proper rotation even for reflective covariance.
    """
    if weights is None:
        weights = np.ones(len(src))
    wsum = float(weights.sum())
    mu_s = (weights @ src) / wsum
    mu_d = (weights @ dst) / wsum
    a = (dst - mu_d).T @ ((src - mu_s) * weights[:, None])
    u, _, vt = np.linalg.svd(a)
    d = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    t = mu_d - r @ mu_s
    return r, t


def register_gmm_em(
    moving, fixed, cfg: GmmEmConfig | None = None, init: RigidTransform | None = None
) -> RegistrationResult:
    """Coarse rigid alignment of `moving` onto `fixed` by EM on a GMM.

    Robust to a misalignment of roughly 30 degrees / 300 mm and to outlier
    contamination around the configured weight. Raises NumericalFailure when
    the variance update underflows to a non-finite or negative value, and
    ValueError for degenerate input clouds.
    """
    cfg = cfg or GmmEmConfig()
    y = _points(moving)
    x = _points(fixed)
    _check_nondegenerate(y, "moving")
    _check_nondegenerate(x, "fixed")
    n, m = len(x), len(y)
    w = cfg.outlier_weight

    if cfg.sigma2_init > 0:
        sigma2 = cfg.sigma2_init
    else:
        diag = float(np.linalg.norm(x.max(axis=0) - x.min(axis=0)))
        sigma2 = max((diag / 4.0) ** 2, _SIGMA2_FLOOR)

    if init is not None:
        rot, tr = init.rotation.copy(), init.translation.copy()
    else:
        rot, tr = np.eye(3), np.zeros(3)

    history: list[float] = []
    converged = False
    iterations_used = 0

    for it in range(cfg.max_iterations):
        ty = y @ rot.T + tr
        d2 = cdist(x, ty, "sqeuclidean")
        k = np.exp(-d2 / (2.0 * sigma2))
        # Uniform outlier mass folded into the posterior denominator.
        c = (2.0 * np.pi * sigma2) ** 1.5 * (w / (1.0 - w)) * (m / n) if w > 0 else 0.0
        denom = k.sum(axis=1) + c
        np.maximum(denom, 1e-300, out=denom)

        # Data log-likelihood under the current parameters (constant terms
        # included so the trace is the true objective, not a surrogate).
        ll = float(
            np.log(denom).sum()
            + n * (np.log1p(-w) - np.log(m) - 1.5 * np.log(2.0 * np.pi * sigma2))
        )
        history.append(ll)
        if it > 0:
            prev = history[-2]
            if ll < prev - 1e-8 * max(1.0, abs(prev)):
                raise NumericalFailure(
                    f"EM objective decreased at iteration {it}: {prev} -> {ll}"
                )
            if abs(ll - prev) <= cfg.tol * max(1.0, abs(prev)):
                converged = True
                iterations_used = it
                break

        p = k / denom[:, None]  # (n, m) posteriors, outliers excluded
        px = p.sum(axis=1)
        py = p.sum(axis=0)
        np_total = float(px.sum())
        if np_total < 1e-12:
            raise NumericalFailure("all probability mass on the outlier component")
        mu_x = px @ x / np_total
        mu_y = py @ y / np_total
        xc = x - mu_x
        yc = y - mu_y
        a = xc.T @ (p @ yc)
        u, _, vt = np.linalg.svd(a)
        d = np.sign(np.linalg.det(u @ vt))
        rot = u @ np.diag([1.0, 1.0, d]) @ vt
        tr = mu_x - rot @ mu_y
        iterations_used = it + 1

        # Exact isotropic variance update for the rigid (no scale) model.
        tr_xx = float(((xc**2).sum(axis=1) * px).sum())
        tr_yy = float(((yc**2).sum(axis=1) * py).sum())
        tr_ar = float((a * rot).sum())
        sigma2 = (tr_xx - 2.0 * tr_ar + tr_yy) / (3.0 * np_total)
        if not np.isfinite(sigma2):
            raise NumericalFailure("sigma^2 became non-finite")
        if sigma2 < _SIGMA2_FLOOR:
            if sigma2 < -1e-6:
                raise NumericalFailure(f"sigma^2 underflowed to {sigma2}")
            # Perfect fit: the model explains the data to machine precision.
            sigma2 = _SIGMA2_FLOOR
            converged = True
            break

    transform = RigidTransform.from_noisy(rot, tr)
    ty = y @ transform.rotation.T + transform.translation
    dist, _ = cKDTree(x).query(ty)
    return RegistrationResult(
        transform=transform,
        final_mse=float(np.mean(dist**2)),
        iterations_used=iterations_used,
        converged=converged,
        objective_history=history,
    )


def register_icp(
    moving, fixed, init: RigidTransform | None = None, cfg: IcpConfig | None = None
) -> RegistrationResult:
    """Point-to-point ICP refinement of `moving` onto `fixed`.

    Correspondences are nearest neighbors capped at cfg.max_corr_dist, with
    exact distance ties broken toward the lower fixed-point index. A step
    whose MSE would exceed the previous accepted step is rejected and the
    iteration stops, so the recorded MSE trace is non-increasing.
    """
    cfg = cfg or IcpConfig()
    y = _points(moving)
    x = _points(fixed)
    _check_nondegenerate(y, "moving")
    _check_nondegenerate(x, "fixed")
    tree = cKDTree(x)

    if init is not None:
        rot, tr = init.rotation.copy(), init.translation.copy()
    else:
        rot, tr = np.eye(3), np.zeros(3)

    mse_history: list[float] = []
    converged = False

    for _ in range(cfg.iterations):
        ty = y @ rot.T + tr
        dist, idx = tree.query(ty, k=2)
        nn = idx[:, 0].copy()
        tie = dist[:, 0] == dist[:, 1]
        nn[tie] = np.minimum(idx[tie, 0], idx[tie, 1])
        sel = dist[:, 0] <= cfg.max_corr_dist
        if not sel.any():
            if not mse_history:
                raise NoCorrespondences(
                    f"no fixed point within {cfg.max_corr_dist} mm at the start pose"
                )
            converged = True
            break
        src = y[sel]
        dst = x[nn[sel]]
        r_new, t_new = _procrustes(src, dst)
        mse = float(np.mean(np.sum((src @ r_new.T + t_new - dst) ** 2, axis=1)))
        if mse_history and mse > mse_history[-1] + 1e-12:
            # Re-matching increased the error; keep the last accepted pose.
            converged = True
            break
        rot, tr = r_new, t_new
        mse_history.append(mse)
        if len(mse_history) > 1:
            prev = mse_history[-2]
            if abs(prev - mse) <= cfg.tol * max(prev, 1e-12):
                converged = True
                break

    return RegistrationResult(
        transform=RigidTransform.from_noisy(rot, tr),
        final_mse=mse_history[-1] if mse_history else 0.0,
        iterations_used=len(mse_history),
        converged=converged,
        mse_history=mse_history,
    )


def register_coarse_to_fine(
    moving,
    fixed,
    gmm_cfg: GmmEmConfig | None = None,
    icp_cfg: IcpConfig | None = None,
) -> RegistrationResult:
    """EM coarse alignment followed by ICP refinement from the EM pose."""
    em = register_gmm_em(moving, fixed, gmm_cfg)
    icp = register_icp(moving, fixed, em.transform, icp_cfg)
    return RegistrationResult(
        transform=icp.transform,
        final_mse=icp.final_mse,
        iterations_used=em.iterations_used + icp.iterations_used,
        converged=em.converged and icp.converged,
        objective_history=em.objective_history,
        mse_history=icp.mse_history,
    )
