"""Batch linear quadratic tracking in open-loop form.

The single-arm solve follows the classical analytic solution; the coordinated
two-arm solve minimizes the summed per-arm tracking costs plus a weighted
relative-motion term by assembling the stacked normal equations and factoring
the (PD) curvature. No non-square transfer matrix is ever inverted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .gaussians import _readonly


def _check_psd(m: np.ndarray, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float)).copy()
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} must be finite")
    scale = max(1.0, float(np.max(np.abs(m))))
    if float(np.max(np.abs(m - m.T))) > 1e-9 * scale:
        raise ValueError(f"{name} must be symmetric")
    m = 0.5 * (m + m.T)
    try:
        np.linalg.cholesky(m + 1e-9 * scale * np.eye(m.shape[0]))
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive semi-definite") from None
    return m


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Discrete linear dynamics x_{t+1} = A x_t + B u_t.

    ``order`` 1 means the state is the position; order 2 appends velocities
    (state = position then velocity, controls act as accelerations).
    """

    A: np.ndarray
    B: np.ndarray
    dt: float
    order: int = 1

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float)).copy()
        B = np.atleast_2d(np.asarray(self.B, dtype=float)).copy()
        dt = float(self.dt)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError("A must be square and B must have matching rows")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))) or not np.isfinite(dt) or dt <= 0:
            raise ValueError("system matrices must be finite and dt positive")
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if A.shape[0] != self.order * B.shape[1]:
            raise ValueError("state dimension must equal order times the control dimension")
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "B", _readonly(B))
        object.__setattr__(self, "dt", dt)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]

    @property
    def position_dim(self) -> int:
        return self.control_dim

    @classmethod
    def integrator(cls, n_channels: int, dt: float, order: int = 2) -> "LinearSystem":
        """Single (order 1) or double (order 2) integrator over ``n_channels``."""
        eye = np.eye(n_channels)
        if order == 1:
            return cls(eye, dt * eye, dt, order=1)
        if order == 2:
            A = np.block([[eye, dt * eye], [np.zeros((n_channels, n_channels)), eye]])
            B = np.vstack([0.5 * dt * dt * eye, dt * eye])
            return cls(A, B, dt, order=2)
        raise ValueError("order must be 1 or 2")

    def pad_state(self, position: np.ndarray) -> np.ndarray:
        """Full state from a position (zero velocity for order 2)."""
        pos = np.atleast_1d(np.asarray(position, dtype=float))
        if pos.shape != (self.position_dim,):
            raise ValueError("position length must match the system's channels")
        if self.order == 1:
            return pos.copy()
        return np.concatenate([pos, np.zeros_like(pos)])


def build_transfer_matrices(sys: LinearSystem, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked maps (S_x, S_u) with x = S_x x_1 + S_u u over ``horizon`` steps."""
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    ds, dc = sys.state_dim, sys.control_dim
    powers = [np.eye(ds)]
    for _ in range(horizon - 1):
        powers.append(sys.A @ powers[-1])
    s_x = np.vstack(powers[:horizon])
    s_u = np.zeros((ds * horizon, dc * (horizon - 1)))
    blocks = [powers[i] @ sys.B for i in range(horizon - 1)]
    for r in range(1, horizon):
        for s in range(r):
            s_u[r * ds : (r + 1) * ds, s * dc : (s + 1) * dc] = blocks[r - 1 - s]
    return s_x, s_u


def rollout(sys: LinearSystem, x1: np.ndarray, u: np.ndarray) -> np.ndarray:
    """States (T x Ds) produced by stacked commands u from initial state x1."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.size % sys.control_dim != 0:
        raise ValueError("command length must be a multiple of the control dimension")
    horizon = u.size // sys.control_dim + 1
    s_x, s_u = build_transfer_matrices(sys, horizon)
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    return (s_x @ x1 + s_u @ u).reshape(horizon, sys.state_dim)


@dataclass(frozen=True, eq=False)
class LQTProblem:
    """Reference means, stacked tracking precision, control cost, start state."""

    ref_means: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x1: np.ndarray

    def __post_init__(self) -> None:
        ref = np.atleast_2d(np.asarray(self.ref_means, dtype=float)).copy()
        x1 = np.atleast_1d(np.asarray(self.x1, dtype=float)).copy()
        if ref.ndim != 2 or ref.shape[0] < 2:
            raise ValueError("ref_means must be T x Ds with T >= 2")
        t, ds = ref.shape
        if x1.shape != (ds,):
            raise ValueError("x1 must match the state dimension")
        if not (np.all(np.isfinite(ref)) and np.all(np.isfinite(x1))):
            raise ValueError("problem data must be finite")
        q = _check_psd(self.Q, "Q")
        if q.shape != (t * ds, t * ds):
            raise ValueError("Q must be (T*Ds) x (T*Ds)")
        r = np.atleast_2d(np.asarray(self.R, dtype=float)).copy()
        if r.shape[0] != r.shape[1] or r.shape[0] % (t - 1) != 0:
            raise ValueError("R must be square with D*(T-1) rows")
        scale = max(1.0, float(np.max(np.abs(r))))
        if float(np.max(np.abs(r - r.T))) > 1e-9 * scale or not np.all(np.isfinite(r)):
            raise ValueError("R must be symmetric and finite")
        r = 0.5 * (r + r.T)
        try:
            np.linalg.cholesky(r)
        except np.linalg.LinAlgError:
            raise ValueError("R must be positive-definite") from None
        object.__setattr__(self, "ref_means", _readonly(ref))
        object.__setattr__(self, "Q", _readonly(q))
        object.__setattr__(self, "R", _readonly(r))
        object.__setattr__(self, "x1", _readonly(x1))

    @property
    def horizon(self) -> int:
        return self.ref_means.shape[0]

    @property
    def state_dim(self) -> int:
        return self.ref_means.shape[1]

    @classmethod
    def from_position_references(
        cls,
        means: np.ndarray,
        covs: np.ndarray,
        control_cost: float,
        x1_position: np.ndarray,
        order: int = 2,
    ) -> "LQTProblem":
        """Assemble a problem from per-timestep position references.

        The tracking precision at each step is the inverse reference
        covariance on the position block and zero on velocities; references
        are zero-padded likewise.
        """
        means = np.atleast_2d(np.asarray(means, dtype=float))
        covs = np.asarray(covs, dtype=float)
        t, d = means.shape
        if covs.shape != (t, d, d):
            raise ValueError("covs must be T x D x D")
        control_cost = float(control_cost)
        if not np.isfinite(control_cost) or control_cost <= 0:
            raise ValueError("control_cost must be positive")
        ds = d * order
        ref = np.zeros((t, ds))
        ref[:, :d] = means
        q = np.zeros((t * ds, t * ds))
        eye = np.eye(d)
        for i in range(t):
            chol = np.linalg.cholesky(0.5 * (covs[i] + covs[i].T))
            prec = cho_solve((chol, True), eye)
            q[i * ds : i * ds + d, i * ds : i * ds + d] = 0.5 * (prec + prec.T)
        r = control_cost * np.eye(d * (t - 1))
        x1_pos = np.atleast_1d(np.asarray(x1_position, dtype=float))
        x1 = x1_pos if order == 1 else np.concatenate([x1_pos, np.zeros(d)])
        return cls(ref, q, r, x1)


def solve_tracking_terms(
    sys: LinearSystem,
    x1: np.ndarray,
    terms: Sequence[tuple[np.ndarray, np.ndarray]],
    R: np.ndarray,
) -> tuple[np.ndarray, tuple[np.ndarray, bool], np.ndarray]:
    """Minimize sum_i (ref_i - x)^T Q_i (ref_i - x) + u^T R u over commands.

    ``terms`` holds (flat reference, stacked Q) pairs sharing one horizon.
    Returns the optimal command, the Cholesky factor of the curvature, and the
    optimal state trajectory.
    """
    if not terms:
        raise ValueError("need at least one tracking term")
    n_states = terms[0][0].size
    horizon = n_states // sys.state_dim
    s_x, s_u = build_transfer_matrices(sys, horizon)
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    curvature = np.asarray(R, dtype=float).copy()
    rhs = np.zeros(s_u.shape[1])
    free = s_x @ x1
    for ref, q in terms:
        ref = np.asarray(ref, dtype=float).ravel()
        qs = q @ s_u
        curvature += s_u.T @ qs
        rhs += qs.T @ (ref - free)
    curvature = 0.5 * (curvature + curvature.T)
    try:
        factor = cho_factor(curvature)
    except np.linalg.LinAlgError:
        raise ValueError("tracking curvature is singular; R must be PD") from None
    u = cho_solve(factor, rhs)
    x = (free + s_u @ u).reshape(horizon, sys.state_dim)
    return u, factor, x


def solve_lqt(p: LQTProblem, sys: LinearSystem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Open-loop optimum of the tracking cost; returns (u_hat, Sigma_u, x_hat).

    u_hat = (S_u^T Q S_u + R)^{-1} S_u^T Q (ref - S_x x1), Sigma_u is the
    inverse curvature, and x_hat the resulting state trajectory.
    """
    if p.state_dim != sys.state_dim:
        raise ValueError("problem and system state dimensions differ")
    u, factor, x = solve_tracking_terms(sys, p.x1, [(p.ref_means.ravel(), p.Q)], p.R)
    sigma_u = cho_solve(factor, np.eye(u.size))
    return u, 0.5 * (sigma_u + sigma_u.T), x


@dataclass(frozen=True, eq=False)
class CoordinationMatrix:
    """Signed block selectors coupling stacked per-arm commands.

    The unsigned selectors pick one arm's block; the signed coupling row
    forms the relative command (arm 1 minus arm 2 for the default signs).
    """

    signs: tuple[int, ...] = (1, -1)

    def __post_init__(self) -> None:
        signs = tuple(int(s) for s in self.signs)
        if len(signs) < 2 or any(s not in (-1, 1) for s in signs):
            raise ValueError("signs must be -1/+1, one per arm")
        object.__setattr__(self, "signs", signs)

    @property
    def n_arms(self) -> int:
        return len(self.signs)

    def block_size(self, stacked_len: int) -> int:
        if stacked_len % self.n_arms != 0:
            raise ValueError(
                f"stacked length {stacked_len} is not divisible by {self.n_arms} arms"
            )
        return stacked_len // self.n_arms

    def select(self, stacked: np.ndarray, arm: int) -> np.ndarray:
        """Arm ``arm``'s command block of a stacked vector."""
        stacked = np.atleast_1d(np.asarray(stacked, dtype=float))
        m = self.block_size(stacked.size)
        return stacked[arm * m : (arm + 1) * m].copy()

    def selector_matrix(self, arm: int, block: int) -> np.ndarray:
        out = np.zeros((block, self.n_arms * block))
        out[:, arm * block : (arm + 1) * block] = np.eye(block)
        return out

    def coupling_matrix(self, block: int) -> np.ndarray:
        return np.hstack([s * np.eye(block) for s in self.signs])


def extract_arm_commands(u_stacked: np.ndarray, c: CoordinationMatrix) -> list[np.ndarray]:
    """Per-arm command blocks of a stacked command vector (lossless split)."""
    u_stacked = np.atleast_1d(np.asarray(u_stacked, dtype=float))
    return [c.select(u_stacked, h) for h in range(c.n_arms)]


@dataclass(frozen=True, eq=False)
class CoordinatedLQTProblem:
    """Two per-arm tracking problems coupled by a weighted relative term."""

    arms: tuple[LQTProblem, LQTProblem]
    rel_ref: np.ndarray
    Q_c: np.ndarray
    sigma: float = 1.0
    coordination: CoordinationMatrix = CoordinationMatrix()

    def __post_init__(self) -> None:
        arms = tuple(self.arms)
        if len(arms) != 2 or not all(isinstance(a, LQTProblem) for a in arms):
            raise ValueError("exactly two per-arm problems are supported")
        a, b = arms
        if a.horizon != b.horizon or a.state_dim != b.state_dim or a.R.shape != b.R.shape:
            raise ValueError("arms must share horizon, state dimension, and command layout")
        rel = np.atleast_2d(np.asarray(self.rel_ref, dtype=float)).copy()
        if rel.shape != (a.horizon, a.state_dim) or not np.all(np.isfinite(rel)):
            raise ValueError("rel_ref must be a finite T x Ds matrix")
        qc = _check_psd(self.Q_c, "Q_c")
        if qc.shape != a.Q.shape:
            raise ValueError("Q_c must match the per-arm Q layout")
        sigma = float(self.sigma)
        if not np.isfinite(sigma) or sigma < 0:
            raise ValueError("sigma must be finite and non-negative")
        if self.coordination.n_arms != 2:
            raise ValueError("coordination matrix must cover two arms")
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "rel_ref", _readonly(rel))
        object.__setattr__(self, "Q_c", _readonly(qc))
        object.__setattr__(self, "sigma", sigma)


def solve_coordinated_lqt(
    p: CoordinatedLQTProblem, sys: LinearSystem
) -> tuple[np.ndarray, np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Minimize the coordinated composition cost over stacked commands.

    Cost: sum_h [(ref_h - x_h)^T Q_h (ref_h - x_h) + u_h^T R_h u_h]
    + sigma * (rel_ref - x_c)^T Q_c (rel_ref - x_c), with x_c the signed
    combination of the arm trajectories. Returns the stacked optimum, its
    inverse curvature, and the per-arm state trajectories.
    """
    a, b = p.arms
    horizon = a.horizon
    if a.state_dim != sys.state_dim:
        raise ValueError("problem and system state dimensions differ")
    s_x, s_u = build_transfer_matrices(sys, horizon)
    m = s_u.shape[1]

    def arm_normal_eq(arm: LQTProblem) -> tuple[np.ndarray, np.ndarray]:
        qs = arm.Q @ s_u
        curv = s_u.T @ qs + arm.R
        rhs = qs.T @ (arm.ref_means.ravel() - s_x @ arm.x1)
        return curv, rhs

    if p.sigma == 0.0:
        # exact decoupling: the joint optimum is the two independent optima
        u_parts, x_parts, sig_parts = [], [], []
        for arm in p.arms:
            u, sigma_u, x = solve_lqt(arm, sys)
            u_parts.append(u)
            x_parts.append(x)
            sig_parts.append(sigma_u)
        u_hat = np.concatenate(u_parts)
        sigma_big = np.zeros((2 * m, 2 * m))
        sigma_big[:m, :m] = sig_parts[0]
        sigma_big[m:, m:] = sig_parts[1]
        return u_hat, sigma_big, (x_parts[0], x_parts[1])

    curv1, rhs1 = arm_normal_eq(a)
    curv2, rhs2 = arm_normal_eq(b)
    signs = p.coordination.signs
    qcs = p.Q_c @ s_u
    g = s_u.T @ qcs
    w = p.rel_ref.ravel() - s_x @ (signs[0] * a.x1 + signs[1] * b.x1)
    gw = qcs.T @ w

    big = np.zeros((2 * m, 2 * m))
    big[:m, :m] = curv1 + p.sigma * g
    big[m:, m:] = curv2 + p.sigma * g
    big[:m, m:] = p.sigma * signs[0] * signs[1] * g
    big[m:, :m] = big[:m, m:].T
    rhs = np.concatenate([rhs1 + p.sigma * signs[0] * gw, rhs2 + p.sigma * signs[1] * gw])
    big = 0.5 * (big + big.T)
    try:
        factor = cho_factor(big)
    except np.linalg.LinAlgError:
        raise ValueError("coordinated curvature is singular; per-arm R must be PD") from None
    u_hat = cho_solve(factor, rhs)
    sigma_u = cho_solve(factor, np.eye(2 * m))
    commands = extract_arm_commands(u_hat, p.coordination)
    x_hats = tuple(
        (s_x @ arm.x1 + s_u @ u).reshape(horizon, sys.state_dim)
        for arm, u in zip(p.arms, commands)
    )
    return u_hat, 0.5 * (sigma_u + sigma_u.T), x_hats
