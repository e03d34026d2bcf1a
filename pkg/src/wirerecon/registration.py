"""Robust 2D/3D centerline registration over SE(3).

Energy: forward term matches every projected 3D centerline point to its
nearest 2D observation under a Mahalanobis metric; an optional backward
term back-projects every 2D point (at the depth of its nearest projected
3D point) and matches it against the 3D centerline. Both terms pass
through a pseudo-Huber kernel. Minimization is Levenberg-Marquardt with
left-multiplicative twist updates and gain-ratio damping adaptation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .centerline import Centerline2D, Centerline3D
from .errors import (
    DivergedBehindCamera,
    EmptyCenterline,
    SingularNormalEquations,
)
from .liegeom import (
    CameraIntrinsics,
    RigidTransform,
    _pixel_jacobian_blocks,
    exp_map,
    log_map,
)

# behind-camera points enter the energy at this saturated squared pixel
# residual; high enough that steps pushing points behind the camera lose
SATURATION_PX2 = 1.0e4

# exhaustive nearest-neighbor below this many points, grid hash above
HASH_THRESHOLD = 500

# per-step trust caps on the twist update; the damped normal equations
# alone cannot bound steps once the gain ratio has shrunk mu, and
# nearest-neighbor correspondences are only trustworthy locally
MAX_STEP_ROT = 0.05    # rad
MAX_STEP_TRANS = 25.0  # px

# how often an accepted step may be re-applied while the energy decreases
MAX_STEP_EXTENSIONS = 6


@dataclass(frozen=True)
class RegistrationConfig:
    """Solver parameters; defaults reproduce the reference experiment setup."""

    lambda_bidir: float = 0.1
    huber_delta: float = 1.0
    mu_init: float = 1.0
    max_iters: int = 100
    eps_abs: float = 1e-4
    eps_rel: float = 1e-4
    sigma2d: np.ndarray = field(default_factory=lambda: 4.0 * np.eye(2))  # sigma_geo = 2 px
    sigma3d: np.ndarray = field(default_factory=lambda: np.eye(3))
    temporal_weight: float = 0.0

    def __post_init__(self):
        if min(self.lambda_bidir, 0.0) < 0 or self.temporal_weight < 0:
            raise ValueError("weights must be non-negative")
        for name in ("huber_delta", "mu_init", "eps_abs", "eps_rel"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters <= 0:
            raise ValueError("max_iters must be positive")
        for name, dim in (("sigma2d", 2), ("sigma3d", 3)):
            M = np.asarray(getattr(self, name), dtype=float)
            if M.shape != (dim, dim) or not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be a symmetric {dim}x{dim} matrix")
            np.linalg.cholesky(M)  # positive definite
            object.__setattr__(self, name, M)


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    final_energy: float
    iterations: int
    converged: bool
    residual_rms: float
    per_iteration_energy: list

    def to_json_dict(self) -> dict:
        return {
            "transform": self.transform.to_json_dict(),
            "final_energy": self.final_energy,
            "iterations": self.iterations,
            "converged": self.converged,
            "residual_rms": self.residual_rms,
            "per_iteration_energy": list(self.per_iteration_energy),
        }

    def to_json(self, path=None) -> str:
        s = json.dumps(self.to_json_dict(), indent=2)
        if path is not None:
            Path(path).write_text(s + "\n")
        return s

    @staticmethod
    def from_json_dict(d: dict) -> "RegistrationResult":
        return RegistrationResult(
            RigidTransform.from_json_dict(d["transform"]),
            float(d["final_energy"]),
            int(d["iterations"]),
            bool(d["converged"]),
            float(d["residual_rms"]),
            list(d["per_iteration_energy"]),
        )


# ---------------------------------------------------------------------------
# robust kernel
# ---------------------------------------------------------------------------

def pseudo_huber(s, delta: float):
    """rho(s) = s / (1 + sqrt(1 + s/delta^2)) on squared residuals s >= 0."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    s = np.asarray(s, dtype=float)
    return s / (1.0 + np.sqrt(1.0 + s / delta**2))


def pseudo_huber_deriv(s, delta: float):
    """d rho / d s; behaves like 1/2 near zero, decays like 1/(2 sqrt(s))."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    s = np.asarray(s, dtype=float)
    u = np.sqrt(1.0 + s / delta**2)
    return (1.0 + u - s / (2.0 * delta**2 * u)) / (1.0 + u) ** 2


# ---------------------------------------------------------------------------
# nearest neighbors (whitened coordinates)
# ---------------------------------------------------------------------------

def _cross_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared distances via the matmul expansion, clipped at 0."""
    d2 = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


class _NearestNeighbor:
    """Exact exhaustive NN below HASH_THRESHOLD points, grid hash above.

    The hash is exact within a 3x3 cell window and expands the search ring
    until a candidate is found, so results match the exhaustive path.
    """

    def __init__(self, pts: np.ndarray):
        self.pts = np.asarray(pts, dtype=float)
        self.n = len(self.pts)
        self.grid = None
        if self.n >= HASH_THRESHOLD and self.pts.shape[1] == 2:
            span = self.pts.max(axis=0) - self.pts.min(axis=0)
            area = max(float(np.prod(span)), 1e-9)
            self.cell = max(math.sqrt(area / self.n) * 2.0, 1e-6)
            self.grid = {}
            cells = np.floor(self.pts / self.cell).astype(np.int64)
            for i, key in enumerate(map(tuple, cells)):
                self.grid.setdefault(key, []).append(i)

    def query(self, qs: np.ndarray):
        qs = np.asarray(qs, dtype=float)
        if self.grid is None:
            idx = np.argmin(_cross_sq_dists(qs, self.pts), axis=1)
            # exact distances for the winners; the matmul form used for the
            # argmin carries ~1e-11 cancellation error
            return idx, ((qs - self.pts[idx]) ** 2).sum(axis=1)
        idx = np.empty(len(qs), dtype=np.int64)
        dist2 = np.empty(len(qs))
        for k, q in enumerate(qs):
            cx, cy = int(np.floor(q[0] / self.cell)), int(np.floor(q[1] / self.cell))
            ring = 1
            cand = []
            while not cand and ring < 1_000_000:
                for ix in range(cx - ring, cx + ring + 1):
                    for iy in range(cy - ring, cy + ring + 1):
                        cand.extend(self.grid.get((ix, iy), ()))
                ring += 1
            arr = self.pts[cand]
            d2 = ((arr - q) ** 2).sum(axis=1)
            j = int(np.argmin(d2))
            idx[k] = cand[j]
            dist2[k] = d2[j]
        return idx, dist2


def _whitener(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of cov^-1; x @ W gives whitened coordinates."""
    return np.linalg.cholesky(np.linalg.inv(cov))


# ---------------------------------------------------------------------------
# energy and normal equations
# ---------------------------------------------------------------------------

class _Problem:
    """Static data shared by every evaluation within one register() call."""

    def __init__(self, p3: np.ndarray, q2: np.ndarray, K: CameraIntrinsics,
                 cfg: RegistrationConfig, T_prev: RigidTransform | None):
        self.p3 = p3
        self.q2 = q2
        self.K = K
        self.cfg = cfg
        self.T_prev = T_prev
        self.sigma2d_inv = np.linalg.inv(cfg.sigma2d)
        self.sigma3d_inv = np.linalg.inv(cfg.sigma3d)
        self.w2 = _whitener(cfg.sigma2d)
        self.w3 = _whitener(cfg.sigma3d)
        self.nn2 = _NearestNeighbor(q2 @ self.w2)
        self.nn3 = _NearestNeighbor(p3 @ self.w3)
        self.rays = K.ray_direction(q2)  # (M, 3), z = 1
        # saturated Mahalanobis residual for behind-camera points
        self.s_sat = SATURATION_PX2 * float(np.trace(self.sigma2d_inv)) / 2.0

    def evaluate(self, T: RigidTransform, with_system: bool = False):
        cfg = self.cfg
        N, M = len(self.p3), len(self.q2)
        pc = self.p3 @ T.rotation.T + T.translation
        z = pc[:, 2]
        front = z > 1e-9
        n_front = int(front.sum())
        delta = cfg.huber_delta

        energy = float((N - n_front) * pseudo_huber(self.s_sat, delta))
        H = np.zeros((6, 6))
        g = np.zeros(6)
        r_sq = 0.0
        uv = np.empty((0, 2))
        j_star = np.empty(0, dtype=np.int64)

        if n_front:
            pcf = pc[front]
            zf = z[front]
            uv = np.column_stack(
                [
                    self.K.fx * pcf[:, 0] / zf + self.K.cx,
                    self.K.fy * pcf[:, 1] / zf + self.K.cy,
                ]
            )
            j_star, s_fw = self.nn2.query(uv @ self.w2)
            rho_fw = pseudo_huber(s_fw, delta)
            energy += float(rho_fw.sum())
            res_fw = uv - self.q2[j_star]
            r_sq += float((res_fw**2).sum())
            if with_system:
                w = pseudo_huber_deriv(s_fw, delta)
                J = _pixel_jacobian_blocks(pcf, self.K)           # (n,2,6)
                WJ = self.sigma2d_inv[None] @ J * w[:, None, None]
                H += np.einsum("nij,nik->jk", J, WJ)
                g += np.einsum("nij,ni->j", WJ, res_fw)

        if cfg.lambda_bidir > 0 and n_front:
            # depth of the 2D-nearest projected 3D point resolves the
            # non-invertible projection in the backward term
            i2 = np.argmin(_cross_sq_dists(self.q2 @ self.w2, uv @ self.w2), axis=1)
            d_hat = zf[i2]
            y = d_hat[:, None] * self.rays                        # camera frame
            x = (y - T.translation) @ T.rotation                  # world frame
            k_back, s_bw = self.nn3.query(x @ self.w3)
            rho_bw = pseudo_huber(s_bw, delta)
            energy += float(cfg.lambda_bidir * rho_bw.sum())
            e_bw = x - self.p3[k_back]
            r_sq += float(cfg.lambda_bidir * (e_bw**2).sum())
            if with_system:
                w = cfg.lambda_bidir * pseudo_huber_deriv(s_bw, delta)
                B = self._backward_jacobians(T, pcf[i2], y)
                WB = self.sigma3d_inv[None] @ B * w[:, None, None]
                H += np.einsum("nij,nik->jk", B, WB)
                g += np.einsum("nij,ni->j", WB, e_bw)

        if cfg.temporal_weight > 0 and self.T_prev is not None:
            ell = log_map(self.T_prev.inverse().compose(T))
            energy += float(cfg.temporal_weight * ell @ ell)
            r_sq += float(cfg.temporal_weight * ell @ ell)
            if with_system:
                Jl = self._temporal_jacobian(T)
                H += cfg.temporal_weight * Jl.T @ Jl
                g += cfg.temporal_weight * Jl.T @ ell

        if not with_system:
            return energy, n_front
        return energy, n_front, H, g, math.sqrt(r_sq)

    def _backward_jacobians(self, T, pc_match, y):
        """(M,3,6) derivative of the backward residual w.r.t. a left twist.

        Includes the dependence of the matched depth on the pose; columns
        follow the (omega, v) twist layout.
        """
        Rt = T.rotation.T
        m = len(y)
        base = np.zeros((m, 3, 6))
        # omega block: +[y]x (residual moves along y x domega), v block: -I
        base[:, 0, 1] = -y[:, 2]
        base[:, 0, 2] = y[:, 1]
        base[:, 1, 0] = y[:, 2]
        base[:, 1, 2] = -y[:, 0]
        base[:, 2, 0] = -y[:, 1]
        base[:, 2, 1] = y[:, 0]
        base[:, 0, 3] = -1.0
        base[:, 1, 4] = -1.0
        base[:, 2, 5] = -1.0
        a = np.zeros((m, 6))
        a[:, 0] = pc_match[:, 1]
        a[:, 1] = -pc_match[:, 0]
        a[:, 5] = 1.0
        k = y / np.maximum(y[:, 2:3], 1e-12)  # unit-depth ray, z = 1
        base += k[:, :, None] * a[:, None, :]
        return Rt[None] @ base

    def _temporal_jacobian(self, T, h: float = 1e-6) -> np.ndarray:
        Jl = np.empty((6, 6))
        Tp_inv = self.T_prev.inverse()
        for k in range(6):
            d = np.zeros(6)
            d[k] = h
            up = log_map(Tp_inv.compose(exp_map(d).compose(T)))
            dn = log_map(Tp_inv.compose(exp_map(-d).compose(T)))
            Jl[:, k] = (up - dn) / (2.0 * h)
        return Jl


def energy(
    T: RigidTransform,
    c3d: Centerline3D,
    c2d: Centerline2D,
    K: CameraIntrinsics,
    cfg: RegistrationConfig,
    T_prev: RigidTransform | None = None,
) -> float:
    """Bidirectional robust registration energy at pose T."""
    if len(c3d) == 0 or len(c2d) == 0:
        raise EmptyCenterline("both centerlines must be non-empty")
    prob = _Problem(c3d.points, c2d.points, K, cfg, T_prev)
    E, _ = prob.evaluate(T)
    return E


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LMState:
    """Mutable-by-replacement solver state threaded through lm_step."""

    transform: RigidTransform
    mu: float
    energy: float
    step_norm: float = math.inf
    converged: bool = False
    accepted_energies: tuple = ()
    n_front: int = 0
    n_total: int = 0
    n_accepted: int = 0


def _make_state(prob: _Problem, T: RigidTransform, mu: float) -> LMState:
    E, n_front = prob.evaluate(T)
    return LMState(
        transform=T,
        mu=mu,
        energy=E,
        accepted_energies=(E,),
        n_front=n_front,
        n_total=len(prob.p3),
    )


def _solve_damped(H: np.ndarray, g: np.ndarray, mu: float):
    """Cholesky solve of (H + mu I) d = -g, re-damping up to 5 times."""
    for _ in range(6):
        try:
            L = np.linalg.cholesky(H + mu * np.eye(6))
            d = np.linalg.solve(L.T, np.linalg.solve(L, -g))
            return d, mu
        except np.linalg.LinAlgError:
            mu *= 2.0
    raise SingularNormalEquations(
        "normal equations stayed singular after 5 dampings"
    )


def damping_multiplier(eta: float) -> float:
    """Gain-ratio damping update factor: max(1/3, 1 - (2 eta - 1)^3)."""
    return max(1.0 / 3.0, 1.0 - (2.0 * eta - 1.0) ** 3)


def lm_step(state: LMState, prob: _Problem) -> LMState:
    """One damped Gauss-Newton step with gain-ratio damping adaptation.

    Accepts the candidate only when the exact energy decreases; on
    acceptance mu shrinks by ``damping_multiplier`` of the gain ratio, on
    rejection it doubles. Correspondences re-enter through the exact
    energy evaluation.
    """
    cfg = prob.cfg
    T = state.transform
    E0, n_front, H, g, r_norm = prob.evaluate(T, with_system=True)
    delta, mu = _solve_damped(H, g, state.mu)
    step_norm = float(np.linalg.norm(delta))
    grad_ok = float(np.abs(g).max()) <= cfg.eps_rel * r_norm
    if step_norm < cfg.eps_abs and grad_ok:
        return replace(state, mu=mu, step_norm=step_norm, converged=True)

    scale = min(
        1.0,
        MAX_STEP_ROT / max(float(np.linalg.norm(delta[:3])), 1e-300),
        MAX_STEP_TRANS / max(float(np.linalg.norm(delta[3:])), 1e-300),
    )
    delta = scale * delta
    step_norm = float(np.linalg.norm(delta))

    T_cand = exp_map(delta).compose(T)
    if (state.n_accepted + 1) % 20 == 0:
        T_cand = T_cand.orthonormalized()
    E_cand, n_front_cand = prob.evaluate(T_cand)
    # model decrease of the (half-)energy quadratic, valid for clipped steps
    predicted = float(-2.0 * g @ delta - delta @ (H @ delta))
    eta = (E0 - E_cand) / max(predicted, 1e-300)

    if E_cand < E0:
        if n_front_cand < 0.5 * state.n_total:
            raise DivergedBehindCamera(
                f"{state.n_total - n_front_cand}/{state.n_total} points behind camera"
            )
        # correspondence re-assignment makes pure point-to-point steps crawl
        # tangentially; extending an accepted step while the exact energy
        # keeps dropping collapses that geometric series
        step_exp = exp_map(delta)
        for _ in range(MAX_STEP_EXTENSIONS):
            T_ext = step_exp.compose(T_cand)
            E_ext, n_front_ext = prob.evaluate(T_ext)
            if not (E_ext < E_cand and n_front_ext >= 0.5 * state.n_total):
                break
            T_cand, E_cand, n_front_cand = T_ext, E_ext, n_front_ext
            step_norm += float(np.linalg.norm(delta))
        mu_new = max(mu * damping_multiplier(eta), 1e-12)
        return replace(
            state,
            transform=T_cand,
            mu=mu_new,
            energy=E_cand,
            step_norm=step_norm,
            accepted_energies=state.accepted_energies + (E_cand,),
            n_front=n_front_cand,
            n_accepted=state.n_accepted + 1,
        )
    return replace(state, mu=2.0 * mu, step_norm=math.inf)


DEFAULT_INIT_TRANSLATION = np.array([0.0, 0.0, 1000.0])


def register(
    c3d: Centerline3D,
    c2d: Centerline2D,
    K: CameraIntrinsics,
    cfg: RegistrationConfig = None,
    T_init: RigidTransform | None = None,
    T_prev: RigidTransform | None = None,
) -> RegistrationResult:
    """Align the 3D centerline to the 2D observation over SE(3).

    Iterates lm_step until the twist update norm drops below ``eps_abs``
    with the scaled gradient below ``eps_rel``, or ``max_iters`` solver
    iterations. When ``T_prev`` is given and ``temporal_weight`` > 0, the
    squared twist distance to the previous pose joins the energy.
    """
    if cfg is None:
        cfg = RegistrationConfig()
    if len(c3d) == 0 or len(c2d) == 0:
        raise EmptyCenterline("both centerlines must be non-empty")
    if T_init is None:
        T_init = RigidTransform(np.eye(3), DEFAULT_INIT_TRANSLATION.copy())
    prob = _Problem(c3d.points, c2d.points, K, cfg, T_prev)
    state = _make_state(prob, T_init, cfg.mu_init)
    if state.n_front < 0.5 * state.n_total:
        raise DivergedBehindCamera(
            f"initial pose leaves {state.n_total - state.n_front}/{state.n_total} points behind camera"
        )
    iterations = 0
    while iterations < cfg.max_iters and not state.converged:
        state = lm_step(state, prob)
        iterations += 1

    # final forward residual RMS in raw pixels
    T = state.transform
    pc = c3d.points @ T.rotation.T + T.translation
    front = pc[:, 2] > 1e-9
    rms = math.inf
    if front.any():
        pcf = pc[front]
        uv = np.column_stack(
            [
                K.fx * pcf[:, 0] / pcf[:, 2] + K.cx,
                K.fy * pcf[:, 1] / pcf[:, 2] + K.cy,
            ]
        )
        d2 = ((uv[:, None, :] - c2d.points[None, :, :]) ** 2).sum(axis=2).min(axis=1)
        rms = float(np.sqrt(d2.mean()))
    return RegistrationResult(
        transform=state.transform,
        final_energy=state.energy,
        iterations=iterations,
        converged=bool(state.converged),
        residual_rms=rms,
        per_iteration_energy=list(state.accepted_energies),
    )
