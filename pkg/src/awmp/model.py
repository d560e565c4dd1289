"""Problem data, processes, multipliers, and pointwise Hamiltonian evaluation.

A control problem is posed in Mayer form on a fixed interval [t0, t1]:

    minimize  cost(x(t0), x(t1))
    subject   x'(t) = f(t, x, u),
              b(t, x, u) = 0,   g(t, x, u) <= 0,
              u(t) in a constant box,   (x(t0), x(t1)) in an endpoint set.

All problem callables are *batched*: they take a node vector ``t`` of shape
``(N,)`` together with states ``(N, n)`` and controls ``(N, m)`` and return
stacked values/Jacobians.  This keeps solver inner loops free of per-node
Python overhead.  The pointwise operations in this module wrap the batched
callables with a singleton batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Box",
    "EndpointSet",
    "FixedInitial",
    "FixedBoth",
    "Free",
    "AffineEquality",
    "ControlProblem",
    "Process",
    "MultiplierSet",
    "FeasibilityResiduals",
    "eval_hamiltonian",
    "grad_hamiltonian",
    "g_minus",
    "g_plus",
    "feasibility_report",
    "project_box",
    "normal_cone_violation",
    "finite_difference_check",
]

# Activity tolerance used when classifying which box bounds are active.
ACTIVE_TOL = 1e-8


class Box:
    """Constant box ``lower <= u <= upper`` (bounds may be infinite)."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if np.any(self.lower > self.upper):
            raise ValueError("box requires lower <= upper componentwise")
        self.lower.flags.writeable = False
        self.upper.flags.writeable = False

    @property
    def m(self) -> int:
        return self.lower.size

    def project(self, v: np.ndarray) -> np.ndarray:
        return np.clip(v, self.lower, self.upper)

    def contains(self, u: np.ndarray, atol: float = ACTIVE_TOL) -> bool:
        return bool(
            np.all(u >= self.lower - atol) and np.all(u <= self.upper + atol)
        )

    def activity(self, u: np.ndarray, atol: float = ACTIVE_TOL):
        """Classify components of ``u`` (batched or not) against the bounds.

        Returns boolean masks ``(pinched, at_lower, at_upper)``; a pinched
        component (``upper - lower <= atol``) has normal cone R, an active
        lower bound (-inf, 0], an active upper bound [0, +inf), and an
        interior component {0}.
        """
        pinched = np.broadcast_to(self.upper - self.lower <= atol, u.shape)
        at_lower = (u - self.lower <= atol) & ~pinched
        at_upper = (self.upper - u <= atol) & ~pinched
        # A component within tolerance of both bounds of a thin (but not
        # pinched) box behaves like a pinched one.
        both = at_lower & at_upper
        return pinched | both, at_lower & ~both, at_upper & ~both

    def cone_project(self, u: np.ndarray, v: np.ndarray,
                     atol: float = ACTIVE_TOL) -> np.ndarray:
        """Componentwise projection of ``v`` onto the normal cone at ``u``."""
        pinched, at_lower, at_upper = self.activity(u, atol)
        out = np.zeros_like(v)
        out[pinched] = v[pinched]
        out[at_lower] = np.minimum(v[at_lower], 0.0)
        out[at_upper] = np.maximum(v[at_upper], 0.0)
        return out


class EndpointSet:
    """Endpoint constraint set C for (x(t0), x(t1)), with closed-form cones."""

    def residual(self, x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
        """Equality residual vector whose zero set is C."""
        raise NotImplementedError

    def distance(self, x0: np.ndarray, x1: np.ndarray) -> float:
        """Euclidean distance from (x0, x1) to C."""
        raise NotImplementedError

    def project_normal_cone(self, v: np.ndarray) -> np.ndarray:
        """Projection of ``v`` in R^{2n} onto the normal cone of C."""
        raise NotImplementedError


@dataclass(frozen=True)
class FixedInitial(EndpointSet):
    """C = {a} x R^n; normal cone R^n x {0}."""

    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))

    def residual(self, x0, x1):
        return x0 - self.a

    def distance(self, x0, x1):
        return float(np.linalg.norm(x0 - self.a))

    def project_normal_cone(self, v):
        out = np.zeros_like(v)
        n = self.a.size
        out[:n] = v[:n]
        return out


@dataclass(frozen=True)
class FixedBoth(EndpointSet):
    """C = {a} x {b}; normal cone R^{2n}."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))

    def residual(self, x0, x1):
        return np.concatenate([x0 - self.a, x1 - self.b])

    def distance(self, x0, x1):
        return float(np.linalg.norm(self.residual(x0, x1)))

    def project_normal_cone(self, v):
        return v.copy()


@dataclass(frozen=True)
class Free(EndpointSet):
    """C = R^n x R^n; normal cone {0}."""

    def residual(self, x0, x1):
        return np.zeros(0)

    def distance(self, x0, x1):
        return 0.0

    def project_normal_cone(self, v):
        return np.zeros_like(v)


class AffineEquality(EndpointSet):
    """C = {z in R^{2n} : A z = c}; normal cone = row space of A."""

    def __init__(self, A, c):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        if self.A.shape[0] != self.c.size:
            raise ValueError("A and c have incompatible shapes")
        # Orthonormal basis of range(A^T) for cone projections, pseudo-inverse
        # for minimal-norm distance to the affine set.
        q, rmat = np.linalg.qr(self.A.T)
        keep = np.abs(np.diag(rmat)) > 1e-12 * max(1.0, np.abs(rmat).max())
        self._basis = q[:, keep]
        self._pinv = np.linalg.pinv(self.A)

    def residual(self, x0, x1):
        return self.A @ np.concatenate([x0, x1]) - self.c

    def distance(self, x0, x1):
        return float(np.linalg.norm(self._pinv @ self.residual(x0, x1)))

    def project_normal_cone(self, v):
        return self._basis @ (self._basis.T @ v)


def _zero_path_fn(rows: int):
    def fn(t, X, U):
        return np.zeros((len(np.atleast_1d(t)), rows))
    return fn


def _zero_jac_fn(rows: int, cols_of):
    def fn(t, X, U):
        base = X if cols_of == "x" else U
        return np.zeros((len(np.atleast_1d(t)), rows, base.shape[1]))
    return fn


@dataclass
class ControlProblem:
    """Mayer-form mixed-constrained optimal control problem on [t0, t1].

    Parameters
    ----------
    n, m : int
        State and control dimensions.
    m_b, m_g : int
        Numbers of equality and inequality mixed constraints.
    t0, t1 : float
        Time interval endpoints, t0 < t1.
    cost, cost_grad : callable
        ``cost(x0, x1) -> float`` and its gradient ``(2n,)``.
    dynamics, dynamics_jac_x, dynamics_jac_u : callable
        Batched ``f(t, X, U) -> (N, n)`` with Jacobians ``(N, n, n)`` and
        ``(N, n, m)``.
    eq_constraints, eq_jac_x, eq_jac_u : callable, optional
        Batched ``b(t, X, U) -> (N, m_b)`` with Jacobians; defaulted to
        zero-row evaluators when ``m_b == 0``.
    ineq_constraints, ineq_jac_x, ineq_jac_u : callable, optional
        Same for ``g`` with ``m_g`` rows.
    control_box : Box
        Constant control box (bounds may be infinite).
    endpoint_set : EndpointSet
        Endpoint constraint with closed-form normal cone.
    hypothesis_notes : str
        Free-text record of which standing regularity hypotheses hold
        analytically for this problem.
    """

    n: int
    m: int
    m_b: int
    m_g: int
    t0: float
    t1: float
    cost: Callable
    cost_grad: Callable
    dynamics: Callable
    dynamics_jac_x: Callable
    dynamics_jac_u: Callable
    control_box: Box
    endpoint_set: EndpointSet
    eq_constraints: Callable | None = None
    eq_jac_x: Callable | None = None
    eq_jac_u: Callable | None = None
    ineq_constraints: Callable | None = None
    ineq_jac_x: Callable | None = None
    ineq_jac_u: Callable | None = None
    hypothesis_notes: str = ""

    def __post_init__(self):
        if not (self.t0 < self.t1):
            raise ValueError("require t0 < t1")
        if self.n < 1 or self.m < 1 or self.m_b < 0 or self.m_g < 0:
            raise ValueError("require n, m >= 1 and m_b, m_g >= 0")
        if self.control_box.m != self.m:
            raise ValueError("control box dimension does not match m")
        if self.eq_constraints is None:
            if self.m_b != 0:
                raise ValueError("m_b > 0 requires eq_constraints")
            self.eq_constraints = _zero_path_fn(0)
            self.eq_jac_x = _zero_jac_fn(0, "x")
            self.eq_jac_u = _zero_jac_fn(0, "u")
        if self.ineq_constraints is None:
            if self.m_g != 0:
                raise ValueError("m_g > 0 requires ineq_constraints")
            self.ineq_constraints = _zero_path_fn(0)
            self.ineq_jac_x = _zero_jac_fn(0, "x")
            self.ineq_jac_u = _zero_jac_fn(0, "u")


@dataclass
class Process:
    """Discretized process: states at nodes, piecewise-constant controls."""

    grid: "TimeGrid"  # noqa: F821 - forward reference to transcription
    X: np.ndarray     # (N+1, n)
    U: np.ndarray     # (N, m)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.U = np.asarray(self.U, dtype=float)
        N = self.grid.N
        if self.X.ndim != 2 or self.U.ndim != 2:
            raise ValueError("X and U must be 2-d arrays")
        if self.X.shape[0] != N + 1 or self.U.shape[0] != N:
            raise ValueError(
                f"shapes {self.X.shape}/{self.U.shape} do not match grid N={N}"
            )
        self.X.flags.writeable = False
        self.U.flags.writeable = False


@dataclass
class MultiplierSet:
    """Multipliers (lambda, p, q, r, zeta) in the sign convention r <= 0.

    ``p`` holds costate values at the N+1 grid nodes; ``q``, ``r`` and
    ``zeta`` are interval densities (N rows).  ``zeta`` may be ``None``,
    meaning "reconstruct from the normal-cone split when needed".
    """

    lam: float
    p: np.ndarray              # (N+1, n)
    q: np.ndarray              # (N, m_b)
    r: np.ndarray              # (N, m_g)
    zeta: np.ndarray | None = None  # (N, m) or None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        if self.zeta is not None:
            self.zeta = np.asarray(self.zeta, dtype=float)

    def scaled(self, c: float) -> "MultiplierSet":
        return MultiplierSet(
            lam=self.lam * c,
            p=self.p * c,
            q=self.q * c,
            r=self.r * c,
            zeta=None if self.zeta is None else self.zeta * c,
        )

    @property
    def p_sup(self) -> float:
        """Grid sup-norm max_i |p_i|_inf used in the normalization."""
        return float(np.abs(self.p).max(initial=0.0))


@dataclass
class FeasibilityResiduals:
    """Max and h-weighted l1 norms of the constraint violations."""

    dyn_max: float
    dyn_l1: float
    b_max: float
    b_l1: float
    gplus_max: float
    gplus_l1: float
    box_max: float
    box_l1: float
    endpoint_distance: float

    @property
    def max_violation(self) -> float:
        return max(self.dyn_max, self.b_max, self.gplus_max, self.box_max,
                   self.endpoint_distance)


def _as_batch(t, x, u):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    return t, x, u


def eval_hamiltonian(prob: ControlProblem, t, x, p, q, r, u) -> float:
    """Augmented Pontryagin function p.f + q.b + r.g at a single point."""
    p = np.asarray(p, dtype=float).reshape(prob.n)
    q = np.asarray(q, dtype=float).reshape(prob.m_b)
    r = np.asarray(r, dtype=float).reshape(prob.m_g)
    tb, xb, ub = _as_batch(t, x, u)
    if xb.shape[1] != prob.n or ub.shape[1] != prob.m:
        raise ValueError("state/control dimensions do not match problem")
    fv = prob.dynamics(tb, xb, ub)[0]
    bv = prob.eq_constraints(tb, xb, ub)[0]
    gv = prob.ineq_constraints(tb, xb, ub)[0]
    return float(p @ fv + q @ bv + r @ gv)


def grad_hamiltonian(prob: ControlProblem, t, x, p, q, r, u):
    """Gradient of the augmented Pontryagin function in (x, u).

    Returns ``(grad_x, grad_u)`` with shapes ``(n,)`` and ``(m,)``.
    """
    p = np.asarray(p, dtype=float).reshape(prob.n)
    q = np.asarray(q, dtype=float).reshape(prob.m_b)
    r = np.asarray(r, dtype=float).reshape(prob.m_g)
    tb, xb, ub = _as_batch(t, x, u)
    if xb.shape[1] != prob.n or ub.shape[1] != prob.m:
        raise ValueError("state/control dimensions do not match problem")
    fx = prob.dynamics_jac_x(tb, xb, ub)[0]
    fu = prob.dynamics_jac_u(tb, xb, ub)[0]
    bx = prob.eq_jac_x(tb, xb, ub)[0]
    bu = prob.eq_jac_u(tb, xb, ub)[0]
    gx = prob.ineq_jac_x(tb, xb, ub)[0]
    gu = prob.ineq_jac_u(tb, xb, ub)[0]
    grad_x = fx.T @ p + bx.T @ q + gx.T @ r
    grad_u = fu.T @ p + bu.T @ q + gu.T @ r
    return grad_x, grad_u


def g_minus(prob: ControlProblem, t, x, u) -> np.ndarray:
    """Slack max{-g, 0} of the inequality constraints at a point."""
    tb, xb, ub = _as_batch(t, x, u)
    return np.maximum(-prob.ineq_constraints(tb, xb, ub)[0], 0.0)


def g_plus(prob: ControlProblem, t, x, u) -> np.ndarray:
    """Violation max{g, 0}, the quantity feasibility monitoring needs."""
    tb, xb, ub = _as_batch(t, x, u)
    return np.maximum(prob.ineq_constraints(tb, xb, ub)[0], 0.0)


def project_box(v: np.ndarray, box: Box) -> np.ndarray:
    """Componentwise clamp of ``v`` onto the box."""
    return box.project(np.asarray(v, dtype=float))


def normal_cone_violation(u, box: Box, zeta, atol: float = ACTIVE_TOL) -> float:
    """Distance of ``zeta`` from the normal cone of the box at ``u``."""
    u = np.asarray(u, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if not box.contains(u, atol):
        raise ValueError("u lies outside the box beyond tolerance")
    return float(np.linalg.norm(zeta - box.cone_project(u, zeta, atol)))


def _row_norms(v: np.ndarray) -> np.ndarray:
    v = v.reshape(v.shape[0], -1)
    return np.linalg.norm(v, axis=1)


def feasibility_report(prob: ControlProblem, process: Process) -> FeasibilityResiduals:
    """Aggregate constraint violations of a discretized process.

    Dynamics defects use the explicit-Euler rule on the process grid;
    path constraints are evaluated at left nodes, matching the
    transcription.
    """
    grid = process.grid
    X, U = process.X, process.U
    h = grid.h
    t = grid.nodes[:-1]
    defects = X[1:] - X[:-1] - h * prob.dynamics(t, X[:-1], U)
    bv = prob.eq_constraints(t, X[:-1], U)
    gp = np.maximum(prob.ineq_constraints(t, X[:-1], U), 0.0)
    box_viol = U - prob.control_box.project(U)

    def pair(v):
        if v.size == 0:
            return 0.0, 0.0
        norms = _row_norms(v)
        return float(norms.max()), float(h * norms.sum())

    dyn_max, dyn_l1 = pair(defects)
    b_max, b_l1 = pair(bv)
    g_max, g_l1 = pair(gp)
    box_max, box_l1 = pair(box_viol)
    return FeasibilityResiduals(
        dyn_max=dyn_max, dyn_l1=dyn_l1,
        b_max=b_max, b_l1=b_l1,
        gplus_max=g_max, gplus_l1=g_l1,
        box_max=box_max, box_l1=box_l1,
        endpoint_distance=prob.endpoint_set.distance(X[0], X[-1]),
    )


def finite_difference_check(prob: ControlProblem, rng: np.random.Generator,
                            n_points: int = 100, step: float = 1e-6):
    """Compare analytic Jacobians with central finite differences.

    Samples random interior points (states and multipliers standard normal,
    controls uniform inside the box clipped to [-10, 10]) and returns the
    worst relative error over the Hamiltonian gradient, the cost gradient,
    and the b/g Jacobians.
    """
    lo = np.clip(prob.control_box.lower, -10.0, 10.0)
    hi = np.clip(prob.control_box.upper, -10.0, 10.0)
    worst = 0.0
    for _ in range(n_points):
        t = rng.uniform(prob.t0, prob.t1)
        x = rng.standard_normal(prob.n)
        u = lo + (hi - lo) * rng.uniform(0.1, 0.9, size=prob.m)
        p = rng.standard_normal(prob.n)
        q = rng.standard_normal(prob.m_b)
        r = -np.abs(rng.standard_normal(prob.m_g))

        gx, gu = grad_hamiltonian(prob, t, x, p, q, r, u)
        scale = max(1.0, np.abs(gx).max(initial=0.0), np.abs(gu).max(initial=0.0))
        for k in range(prob.n):
            e = np.zeros(prob.n)
            e[k] = step
            d = (eval_hamiltonian(prob, t, x + e, p, q, r, u)
                 - eval_hamiltonian(prob, t, x - e, p, q, r, u)) / (2 * step)
            worst = max(worst, abs(d - gx[k]) / scale)
        for k in range(prob.m):
            e = np.zeros(prob.m)
            e[k] = step
            d = (eval_hamiltonian(prob, t, x, p, q, r, u + e)
                 - eval_hamiltonian(prob, t, x, p, q, r, u - e)) / (2 * step)
            worst = max(worst, abs(d - gu[k]) / scale)

        x0 = rng.standard_normal(prob.n)
        x1 = rng.standard_normal(prob.n)
        grad = prob.cost_grad(x0, x1)
        z = np.concatenate([x0, x1])
        cscale = max(1.0, np.abs(grad).max())
        for k in range(2 * prob.n):
            e = np.zeros(2 * prob.n)
            e[k] = step
            zp, zm = z + e, z - e
            d = (prob.cost(zp[:prob.n], zp[prob.n:])
                 - prob.cost(zm[:prob.n], zm[prob.n:])) / (2 * step)
            worst = max(worst, abs(d - grad[k]) / cscale)
    return worst
