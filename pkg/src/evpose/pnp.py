"""Pose from 2D-3D correspondences: EPnP initialisation, Levenberg-Marquardt
refinement, range-based rejection and an optional RANSAC wrapper."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import rotation
from .errors import NoSolutionError
from .scene import CameraIntrinsics, Pose

STATUS_OK = "ok"
STATUS_NO_SOLUTION = "rejected_no_solution"
STATUS_RANGE = "rejected_range"
STATUSES = (STATUS_OK, STATUS_NO_SOLUTION, STATUS_RANGE)

MAX_RANGE_M = 30.0
PLANAR_RATIO = 1e-9
MIN_POINTS = 4


@dataclass(frozen=True)
class Correspondences:
    """``n`` pairs of body-frame 3D points and sensor-pixel 2D observations."""

    points_3d: np.ndarray
    points_2d: np.ndarray
    camera: CameraIntrinsics
    indices: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.points_3d, dtype=np.float64).reshape(-1, 3)
        u = np.asarray(self.points_2d, dtype=np.float64).reshape(-1, 2)
        if len(X) != len(u):
            raise ValueError(f"{len(X)} 3D points but {len(u)} 2D points")
        object.__setattr__(self, "points_3d", X)
        object.__setattr__(self, "points_2d", u)
        idx = np.arange(len(X)) if self.indices is None else np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.points_3d)

    @classmethod
    def from_keypoints(cls, model, kps, camera):
        """Valid keypoints of a KeypointSet paired with the model's 3D keypoints."""
        sel = np.flatnonzero(kps.valid)
        idx = kps.indices[sel]
        return cls(model.keypoints_3d[idx], kps.points[sel], camera, idx)

    def subset(self, sel):
        sel = np.asarray(sel, dtype=np.int64)
        return Correspondences(self.points_3d[sel], self.points_2d[sel], self.camera, self.indices[sel])


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose | None
    reprojection_rmse: float
    status: str
    inliers: np.ndarray | None = None

    @property
    def ok(self):
        return self.status == STATUS_OK

    def to_dict(self):
        d = {
            "status": self.status,
            "reprojection_rmse": None if not np.isfinite(self.reprojection_rmse) else float(self.reprojection_rmse),
            "pose": None if self.pose is None else self.pose.to_dict(),
        }
        if self.inliers is not None:
            d["inliers"] = [int(i) for i in self.inliers]
        return d


@dataclass(frozen=True)
class RefineResult:
    pose: Pose
    accepted_steps: int
    initial_cost: float
    final_cost: float
    converged: bool


# ---------------------------------------------------------------------------
# reprojection


def reprojection_residuals(corr, R, t):
    """Pixel residuals ``project(X) - u`` as an ``[n, 2]`` array (NaN behind the camera)."""
    cam = corr.camera
    Xc = corr.points_3d @ R.T + t
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = np.column_stack([cam.fx * Xc[:, 0] / z + cam.cx, cam.fy * Xc[:, 1] / z + cam.cy])
    proj[z <= 0] = np.nan
    return proj - corr.points_2d


def reprojection_rmse(corr, pose):
    r = reprojection_residuals(corr, pose.R, pose.t)
    return float(np.sqrt(np.mean(np.sum(r * r, axis=1))))


# ---------------------------------------------------------------------------
# EPnP


def _control_points(X):
    """Centroid plus principal axes scaled by their standard deviation.

    Returns ``(C [m, 3], planar)`` with ``m = 3`` for planar point sets.
    """
    c0 = X.mean(axis=0)
    d = X - c0
    evals, evecs = np.linalg.eigh(d.T @ d / len(X))
    evals = np.clip(evals, 0.0, None)
    if evals[-1] <= 0:
        raise NoSolutionError("all 3D points coincide")
    planar = evals[0] < PLANAR_RATIO * evals[-1]
    if planar and evals[1] < PLANAR_RATIO * evals[-1]:
        raise NoSolutionError("3D points are collinear")
    axes = [2, 1] if planar else [2, 1, 0]
    C = [c0] + [c0 + np.sqrt(evals[a]) * evecs[:, a] for a in axes]
    return np.array(C), planar


def barycentric(X, C):
    """Weights ``alpha [n, m]`` with rows summing to 1 and ``alpha @ C = X``."""
    D = (C[1:] - C[0]).T
    coef = np.linalg.lstsq(D, (X - C[0]).T, rcond=None)[0].T
    return np.column_stack([1.0 - coef.sum(axis=1), coef])


def _projection_system(alpha, un, vn):
    n, m = alpha.shape
    M = np.zeros((2 * n, 3 * m))
    for j in range(m):
        a = alpha[:, j]
        M[0::2, 3 * j] = a
        M[0::2, 3 * j + 2] = -a * un
        M[1::2, 3 * j + 1] = a
        M[1::2, 3 * j + 2] = -a * vn
    return M


def _pairs(m):
    return list(itertools.combinations(range(m), 2))


def _betas_refine(V, d2, betas, iters=10):
    """Gauss-Newton on ``||sum_k b_k (V_k[i] - V_k[j])||^2 = d_ij^2``."""
    m = V.shape[1]
    pairs = _pairs(m)
    diffs = np.array([[V[k, i] - V[k, j] for (i, j) in pairs] for k in range(len(V))])  # [N, P, 3]
    b = np.array(betas, dtype=np.float64)
    for _ in range(iters):
        dv = np.tensordot(b, diffs, axes=1)  # [P, 3]
        r = np.sum(dv * dv, axis=1) - d2
        J = 2.0 * np.einsum("pc,kpc->pk", dv, diffs)
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        b = b + step
        if np.linalg.norm(step) < 1e-14 * max(1.0, np.linalg.norm(b)):
            break
    return b


def _candidate_betas(V, C):
    """Initial beta estimates for the N=1 and N=2 null-space cases."""
    m = C.shape[0]
    pairs = _pairs(m)
    dC = np.array([C[i] - C[j] for (i, j) in pairs])
    d2 = np.sum(dC * dC, axis=1)
    out = []
    # N = 1
    dv1 = np.array([V[0, i] - V[0, j] for (i, j) in pairs])
    n1 = np.linalg.norm(dv1, axis=1)
    b1 = np.sum(np.sqrt(d2) * n1) / np.sum(n1 * n1)
    out.append(_betas_refine(V[:1], d2, [b1]))
    # N = 2: linearise in (b11, b12, b22)
    dv2 = np.array([V[1, i] - V[1, j] for (i, j) in pairs])
    L = np.column_stack([
        np.sum(dv1 * dv1, axis=1), 2 * np.sum(dv1 * dv2, axis=1), np.sum(dv2 * dv2, axis=1)
    ])
    rho = np.linalg.lstsq(L, d2, rcond=None)[0]
    if rho[0] > 0:
        b_1 = np.sqrt(rho[0])
        b_2 = rho[1] / b_1
        out.append(_betas_refine(V[:2], d2, [b_1, b_2]))
    elif rho[2] > 0:
        b_2 = np.sqrt(rho[2])
        out.append(_betas_refine(V[:2], d2, [rho[1] / b_2, b_2]))
    return out


def procrustes(A, B):
    """Rigid ``(R, t)`` minimising ``sum ||R a_i + t - b_i||^2`` with ``det(R) = +1``."""
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    H = (A - ca).T @ (B - cb)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return R, cb - R @ ca


def _complete_planar(Cc, Cw):
    """Add a fourth control point along the plane normal so Procrustes is well posed."""
    def fourth(C):
        nrm = np.cross(C[1] - C[0], C[2] - C[0])
        return C[0] + nrm / np.sqrt(np.linalg.norm(nrm))
    return np.vstack([Cc, fourth(Cc)]), np.vstack([Cw, fourth(Cw)])


def epnp(corr):
    """Initial pose estimate. Raises NoSolutionError on degenerate input."""
    n = len(corr)
    if n < MIN_POINTS:
        raise NoSolutionError(f"EPnP needs at least {MIN_POINTS} points, got {n}")
    X = corr.points_3d
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(corr.points_2d))):
        raise NoSolutionError("non-finite correspondences")
    cam = corr.camera
    Cw, planar = _control_points(X)
    alpha = barycentric(X, Cw)
    un = (corr.points_2d[:, 0] - cam.cx) / cam.fx
    vn = (corr.points_2d[:, 1] - cam.cy) / cam.fy
    M = _projection_system(alpha, un, vn)
    _, _, Vt = np.linalg.svd(M.T @ M)
    m = Cw.shape[0]
    V = Vt[::-1][:2].reshape(2, m, 3)  # two smallest right-singular vectors
    best = None
    for betas in _candidate_betas(V, Cw):
        Cc = np.tensordot(betas, V[: len(betas)], axes=1)
        Xc = alpha @ Cc
        if np.mean(Xc[:, 2]) < 0:  # cheirality: choose the sign in front of the camera
            Cc, Xc = -Cc, -Xc
        A, B = (Cw, Cc) if not planar else _complete_planar(Cc, Cw)[::-1]
        R, t = procrustes(A, B)
        r = reprojection_residuals(corr, R, t)
        err = float(np.sum(r * r))
        if np.isfinite(err) and (best is None or err < best[0]):
            best = (err, R, t)
    if best is None:
        raise NoSolutionError("no EPnP candidate in front of the camera")
    return Pose.from_matrix(best[1], best[2])


# ---------------------------------------------------------------------------
# Levenberg-Marquardt refinement


def _jacobian(corr, R, t):
    """Residual Jacobian w.r.t. (left axis-angle increment, translation): ``[2n, 6]``."""
    cam = corr.camera
    RX = corr.points_3d @ R.T
    Xc = RX + t
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    n = len(Xc)
    dp = np.zeros((n, 2, 3))
    dp[:, 0, 0] = cam.fx / z
    dp[:, 0, 2] = -cam.fx * x / z**2
    dp[:, 1, 1] = cam.fy / z
    dp[:, 1, 2] = -cam.fy * y / z**2
    dX = np.zeros((n, 3, 6))
    dX[:, :, :3] = -np.array([rotation.skew(p) for p in RX])
    dX[:, :, 3:] = np.eye(3)
    return np.einsum("nij,njk->nik", dp, dX).reshape(2 * n, 6)


def _cost(corr, R, t):
    r = reprojection_residuals(corr, R, t)
    c = 0.5 * float(np.sum(r * r))
    return c if np.isfinite(c) else np.inf


def refine_lm(corr, initial, max_iters=20, damping=1e-3, max_damping=1e12):
    """Levenberg-Marquardt with multiplicative damping; only cost-decreasing steps are accepted."""
    R, t = initial.R, np.array(initial.t, dtype=np.float64)
    cost0 = cost = _cost(corr, R, t)
    lam = float(damping)
    accepted = 0
    converged = False
    for _ in range(max_iters):
        r = reprojection_residuals(corr, R, t).reshape(-1)
        if not np.all(np.isfinite(r)):
            break
        J = _jacobian(corr, R, t)
        JtJ, g = J.T @ J, J.T @ r
        stepped = False
        while lam <= max_damping:
            A = JtJ + lam * np.diag(np.diag(JtJ) + 1e-12)
            try:
                delta = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if np.linalg.norm(delta) < 1e-10:
                converged = True
                break
            R_new = rotation.exp_so3(delta[:3]) @ R
            t_new = t + delta[3:]
            c_new = _cost(corr, R_new, t_new)
            if c_new < cost:
                decrease = cost - c_new
                R, t, cost = R_new, t_new, c_new
                accepted += 1
                lam = max(lam / 10.0, 1e-12)
                stepped = True
                converged = decrease < 1e-12
                break
            lam *= 10.0
        if converged or not stepped:
            converged = converged or lam > max_damping
            break
    return RefineResult(Pose.from_matrix(R, t), accepted, cost0, cost, converged)


def refine(corr, initial, max_iters=20, damping=1e-3):
    """Refined pose; the initial pose is returned untouched if no step lowers the cost."""
    res = refine_lm(corr, initial, max_iters, damping)
    return initial if res.accepted_steps == 0 else res.pose


# ---------------------------------------------------------------------------
# public solvers


def _no_solution(inliers=None):
    return PoseEstimate(None, float("nan"), STATUS_NO_SOLUTION, inliers)


def solve(corr, max_range=MAX_RANGE_M, max_iters=20):
    """EPnP then LM, followed by the range rejection rule ``||t|| > max_range``."""
    if len(corr) < MIN_POINTS:
        return _no_solution()
    try:
        with np.errstate(all="ignore"):
            pose = refine(corr, epnp(corr), max_iters)
    except (NoSolutionError, np.linalg.LinAlgError, ValueError):
        return _no_solution()
    rmse = reprojection_rmse(corr, pose)
    if not (np.all(np.isfinite(pose.t)) and np.isfinite(rmse)):
        return _no_solution()
    if np.linalg.norm(pose.t) > max_range:
        return PoseEstimate(pose, rmse, STATUS_RANGE)
    return PoseEstimate(pose, rmse, STATUS_OK)


def _subsets(n, iterations, rng):
    total = int(np.prod(range(n - 3, n + 1)) // 24)
    if total <= iterations:
        yield from itertools.combinations(range(n), 4)
        return
    for _ in range(iterations):
        yield tuple(np.sort(rng.choice(n, size=4, replace=False)))


def solve_ransac(corr, iterations=100, inlier_threshold=3.0, seed=0, max_range=MAX_RANGE_M):
    """Best consensus over minimal 4-point hypotheses, then ``solve`` on the consensus.

    All 4-subsets are enumerated when there are at most ``iterations`` of them
    (70 for eight points). The reported RMSE covers every input point, so
    rejected outliers stay visible in it.
    """
    n = len(corr)
    if n < MIN_POINTS + 1:
        raise ValueError(f"RANSAC needs at least {MIN_POINTS + 1} points, got {n}")
    rng = np.random.default_rng(seed)
    best = None
    with np.errstate(all="ignore"):
        for sub in _subsets(n, iterations, rng):
            try:
                pose = epnp(corr.subset(sub))
            except (NoSolutionError, np.linalg.LinAlgError):
                continue
            r = reprojection_residuals(corr, pose.R, pose.t)
            err = np.sqrt(np.sum(r * r, axis=1))
            inl = np.flatnonzero(err <= inlier_threshold)
            if best is None or len(inl) > len(best):
                best = inl
    if best is None or len(best) < MIN_POINTS:
        return _no_solution()
    est = solve(corr.subset(best), max_range)
    if est.pose is None:
        return _no_solution(best)
    rmse = reprojection_rmse(corr, est.pose)
    return PoseEstimate(est.pose, rmse, est.status, best)
