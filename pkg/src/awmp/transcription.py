"""Uniform time grids, grid norms, and the discrete transcription.

The transcription is explicit Euler with piecewise-constant controls and
path constraints evaluated at left nodes:

    defect_i = x_{i+1} - x_i - h f(t_i, x_i, u_i),      i = 0..N-1
    b(t_i, x_i, u_i) = 0,  g(t_i, x_i, u_i) <= 0,       i = 0..N-1

Internal NLP multipliers are kept in the standard minimization convention
(nu for defects, beta for equalities, mu >= 0 for inequalities, sigma for
endpoint equalities).  ``lift_multipliers`` maps them to the continuous
sign convention: the costate is p_{i+1} = nu_i, and the path densities are
q = -beta/h, r = -mu/h, which keeps r <= 0 and turns the discrete
stationarity identities into

    -(p_{i+1} - p_i)/h = grad_x H(t_i, x_i, p_{i+1}, q_i, r_i, u_i)

together with the control stationarity grad_u H in the box normal cone.
The leading costate value p_0 is completed from the i = 0 adjoint relation,
so the lifted adjoint residual vanishes at discrete stationary points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ControlProblem, MultiplierSet, Process

__all__ = [
    "TimeGrid",
    "make_grid",
    "grid_norms",
    "DiscreteNLP",
    "transcribe",
    "lift_multipliers",
    "unlift_multipliers",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with N intervals on [t0, t1]."""

    t0: float
    t1: float
    N: int
    h: float
    nodes: np.ndarray  # (N+1,)

    def __post_init__(self):
        self.nodes.flags.writeable = False


def make_grid(t0: float, t1: float, N: int) -> TimeGrid:
    """Uniform grid with nodes t0 + i*h, h = (t1 - t0)/N."""
    if N < 2:
        raise ValueError("grid needs at least N = 2 intervals")
    if not (t0 < t1):
        raise ValueError("require t0 < t1")
    h = (t1 - t0) / N
    return TimeGrid(t0=float(t0), t1=float(t1), N=int(N), h=float(h),
                    nodes=np.linspace(t0, t1, N + 1))


def grid_norms(grid: TimeGrid, v: np.ndarray):
    """Grid norms of an interval-indexed field ``v`` of shape (N,) or (N, d).

    Returns ``(l1, linf, weak_window)`` where l1 = h * sum of per-row
    Euclidean norms, linf = max per-row norm, and weak_window is the
    largest magnitude of h * sum(v[a:b, j]) over all contiguous windows
    [a, b) and components j, i.e. integration against indicator test
    functions.  weak_window <= l1 always.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] != grid.N:
        raise ValueError(f"field has {v.shape[0]} rows, grid has N={grid.N}")
    if v.size == 0:
        return 0.0, 0.0, 0.0
    norms = np.linalg.norm(v, axis=1)
    l1 = float(grid.h * norms.sum())
    linf = float(norms.max())
    # max_{a<b} |sum(v[a:b])| per component = spread of the prefix sums.
    prefix = np.vstack([np.zeros((1, v.shape[1])), np.cumsum(v, axis=0)])
    spread = prefix.max(axis=0) - prefix.min(axis=0)
    weak = float(grid.h * spread.max())
    return l1, linf, weak


class DiscreteNLP:
    """Explicit-Euler transcription with augmented-Lagrangian evaluators.

    Variables are the flattened states at nodes followed by the controls on
    intervals; total count (N+1)*n + N*m.  The object owns the current
    multiplier estimates; the solver is the single writer.
    """

    def __init__(self, prob: ControlProblem, grid: TimeGrid):
        if abs(grid.t0 - prob.t0) > 1e-12 or abs(grid.t1 - prob.t1) > 1e-12:
            raise ValueError("grid interval does not match problem interval")
        self.prob = prob
        self.grid = grid
        N, n, m = grid.N, prob.n, prob.m
        self.N, self.n, self.m = N, n, m
        self.n_x = (N + 1) * n
        self.n_vars = self.n_x + N * m
        self.t = grid.nodes[:-1]
        e0 = prob.endpoint_set.residual(np.zeros(n), np.zeros(n))
        self.n_ep = e0.size
        # NLP-convention multipliers.
        self.nu = np.zeros((N, n))
        self.beta = np.zeros((N, prob.m_b))
        self.mu = np.zeros((N, prob.m_g))
        self.sigma = np.zeros(self.n_ep)
        self.cap_hit = False

    # -- variable layout ---------------------------------------------------

    def split(self, z: np.ndarray):
        X = z[: self.n_x].reshape(self.N + 1, self.n)
        U = z[self.n_x:].reshape(self.N, self.m)
        return X, U

    def join(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        return np.concatenate([X.ravel(), U.ravel()])

    def project(self, z: np.ndarray) -> np.ndarray:
        """Project the control block onto the box (states unconstrained)."""
        X, U = self.split(z)
        return self.join(X, self.prob.control_box.project(U))

    # -- residual evaluators -----------------------------------------------

    def defects(self, X, U):
        h = self.grid.h
        return X[1:] - X[:-1] - h * self.prob.dynamics(self.t, X[:-1], U)

    def eq_values(self, X, U):
        return self.prob.eq_constraints(self.t, X[:-1], U)

    def ineq_values(self, X, U):
        return self.prob.ineq_constraints(self.t, X[:-1], U)

    def endpoint_residual(self, X):
        return self.prob.endpoint_set.residual(X[0], X[-1])

    def objective(self, z: np.ndarray) -> float:
        X, _ = self.split(z)
        return float(self.prob.cost(X[0], X[-1]))

    # -- augmented Lagrangian ----------------------------------------------

    def aug_lagrangian(self, z: np.ndarray, rho: float):
        """Value and gradient of the augmented Lagrangian at ``z``.

        Equalities use the shifted quadratic ``mult.c + rho/2 |c|^2``;
        inequalities the standard one-sided shift
        ``(max(0, mu + rho g)^2 - mu^2) / (2 rho)``.
        """
        prob, h, t = self.prob, self.grid.h, self.t
        X, U = self.split(z)
        d = self.defects(X, U)
        bv = self.eq_values(X, U)
        gv = self.ineq_values(X, U)
        ev = self.endpoint_residual(X)

        nu_t = self.nu + rho * d
        beta_t = self.beta + rho * bv
        mu_t = np.maximum(0.0, self.mu + rho * gv)
        sig_t = self.sigma + rho * ev

        value = (
            self.objective(z)
            + float(np.sum(self.nu * d)) + 0.5 * rho * float(np.sum(d * d))
            + float(np.sum(self.beta * bv)) + 0.5 * rho * float(np.sum(bv * bv))
            + float(np.sum(mu_t ** 2 - self.mu ** 2)) / (2.0 * rho)
            + float(self.sigma @ ev) + 0.5 * rho * float(ev @ ev)
        )

        fx = prob.dynamics_jac_x(t, X[:-1], U)
        fu = prob.dynamics_jac_u(t, X[:-1], U)
        bx = prob.eq_jac_x(t, X[:-1], U)
        bu = prob.eq_jac_u(t, X[:-1], U)
        gx = prob.ineq_jac_x(t, X[:-1], U)
        gu = prob.ineq_jac_u(t, X[:-1], U)

        gX = np.zeros_like(X)
        gX[1:] += nu_t
        gX[:-1] -= nu_t + h * np.einsum("ijk,ij->ik", fx, nu_t)
        gX[:-1] += np.einsum("ijk,ij->ik", bx, beta_t)
        gX[:-1] += np.einsum("ijk,ij->ik", gx, mu_t)
        gU = (-h * np.einsum("ijk,ij->ik", fu, nu_t)
              + np.einsum("ijk,ij->ik", bu, beta_t)
              + np.einsum("ijk,ij->ik", gu, mu_t))

        cg = prob.cost_grad(X[0], X[-1])
        gX[0] += cg[: self.n]
        gX[-1] += cg[self.n:]
        self._add_endpoint_grad(gX, sig_t)
        return value, self.join(gX, gU)

    def _add_endpoint_grad(self, gX, sig_t):
        from .model import AffineEquality, FixedBoth, FixedInitial
        ep = self.prob.endpoint_set
        if isinstance(ep, FixedInitial):
            gX[0] += sig_t
        elif isinstance(ep, FixedBoth):
            gX[0] += sig_t[: self.n]
            gX[-1] += sig_t[self.n:]
        elif isinstance(ep, AffineEquality):
            v = ep.A.T @ sig_t
            gX[0] += v[: self.n]
            gX[-1] += v[self.n:]

    def update_multipliers(self, z: np.ndarray, rho: float, cap: float) -> None:
        """First-order multiplier update with a safeguard cap."""
        X, U = self.split(z)
        nu = self.nu + rho * self.defects(X, U)
        beta = self.beta + rho * self.eq_values(X, U)
        mu = np.maximum(0.0, self.mu + rho * self.ineq_values(X, U))
        sigma = self.sigma + rho * self.endpoint_residual(X)
        if (np.abs(nu).max(initial=0.0) > cap
                or np.abs(beta).max(initial=0.0) > cap
                or mu.max(initial=0.0) > cap
                or np.abs(sigma).max(initial=0.0) > cap):
            self.cap_hit = True
        self.nu = np.clip(nu, -cap, cap)
        self.beta = np.clip(beta, -cap, cap)
        self.mu = np.clip(mu, 0.0, cap)
        self.sigma = np.clip(sigma, -cap, cap)


def transcribe(prob: ControlProblem, grid: TimeGrid) -> DiscreteNLP:
    """Build the explicit-Euler transcription of the problem on the grid."""
    return DiscreteNLP(prob, grid)


def lift_multipliers(nlp: DiscreteNLP, grid: TimeGrid,
                     process: Process | None = None,
                     lam: float = 1.0) -> MultiplierSet:
    """Map internal NLP multipliers to the continuous sign convention.

    p_{i+1} = nu_i, q = -beta/h, r = -mu/h; the inherited mu >= 0 makes
    r <= 0 by construction.  The leading node value p_0 is completed from
    the i = 0 adjoint relation p_0 = p_1 + h grad_x H(t_0), which requires
    the process at which the Jacobians are evaluated.
    """
    h = grid.h
    q = -nlp.beta / h
    r = -nlp.mu / h
    p = np.zeros((grid.N + 1, nlp.n))
    p[1:] = nlp.nu
    if process is None:
        p[0] = p[1]
    else:
        t0 = grid.nodes[:1]
        x0 = process.X[:1]
        u0 = process.U[:1]
        fx = nlp.prob.dynamics_jac_x(t0, x0, u0)[0]
        bx = nlp.prob.eq_jac_x(t0, x0, u0)[0]
        gx = nlp.prob.ineq_jac_x(t0, x0, u0)[0]
        grad_x = fx.T @ p[1] + bx.T @ q[0] + gx.T @ r[0]
        p[0] = p[1] + h * grad_x
    return MultiplierSet(lam=lam, p=p, q=q, r=r, zeta=None)


def unlift_multipliers(ms: MultiplierSet, grid: TimeGrid):
    """Inverse of the density mapping: returns (nu, beta, mu)."""
    nu = ms.p[1:].copy()
    beta = -grid.h * ms.q
    mu = -grid.h * ms.r
    return nu, beta, mu
