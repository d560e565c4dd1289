"""Built-in problem library with closed-form oracle bundles.

Three registered problems:

* ``paper-linear``: minimize x(1) subject to x' = u1, x + u1 + 2 u2 = 0,
  u1 + 2 u2 = 0 on [0, 1], free controls and endpoints.  The zero process
  is the only feasible one and hence optimal, yet no classical first-order
  certificate exists; the bundle generates the closed-form iterate family
  whose multiplier densities concentrate and blow up in sup norm while
  staying bounded in L1.
* ``exp-tracking``: minimize x(1) for x' = u, x(0) = 0, -u - x - 1 <= 0,
  u in [-1, 1].  Solution x(t) = exp(-t) - 1 with the inequality active
  throughout and closed-form costate/multiplier -exp(t-1).
* ``trivial-free``: minimize x(1) for x' = u, x(0) = 0, u in [-1, 1] with
  no mixed constraints; the control rides the lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import (
    Box,
    ControlProblem,
    FixedInitial,
    Free,
    MultiplierSet,
    Process,
)
from .monitor import compute_awmp_residuals, normalize_multipliers
from .solver import IterateRecord
from .transcription import TimeGrid

__all__ = [
    "AnalyticBundle",
    "NamedProblem",
    "get_problem",
    "problem_names",
    "analytic_awmp_iterate",
    "discrete_optimal_process",
]


@dataclass
class AnalyticBundle:
    """Closed-form optimum, multipliers, and iterate generator."""

    objective: float
    process: Callable[[TimeGrid], Process]
    multipliers: Callable[[TimeGrid], MultiplierSet]
    awmp_iterate: Callable[[int, TimeGrid], IterateRecord]


@dataclass
class NamedProblem:
    name: str
    problem: ControlProblem
    analytic: AnalyticBundle | None = None


def _tile(mat, t):
    return np.broadcast_to(mat, (len(t),) + mat.shape).copy()


# ---------------------------------------------------------------------------
# paper-linear
# ---------------------------------------------------------------------------


def _build_paper_linear() -> NamedProblem:
    fu = np.array([[1.0, 0.0]])
    bx = np.array([[1.0], [0.0]])
    bu = np.array([[1.0, 2.0], [1.0, 2.0]])
    prob = ControlProblem(
        n=1, m=2, m_b=2, m_g=0, t0=0.0, t1=1.0,
        cost=lambda x0, x1: float(x1[0]),
        cost_grad=lambda x0, x1: np.array([0.0, 1.0]),
        dynamics=lambda t, X, U: U[:, :1].copy(),
        dynamics_jac_x=lambda t, X, U: np.zeros((len(t), 1, 1)),
        dynamics_jac_u=lambda t, X, U: _tile(fu, t),
        eq_constraints=lambda t, X, U: np.column_stack(
            [X[:, 0] + U[:, 0] + 2.0 * U[:, 1], U[:, 0] + 2.0 * U[:, 1]]),
        eq_jac_x=lambda t, X, U: _tile(bx, t),
        eq_jac_u=lambda t, X, U: _tile(bu, t),
        control_box=Box([-np.inf, -np.inf], [np.inf, np.inf]),
        endpoint_set=Free(),
        hypothesis_notes=(
            "linear data: Lipschitz/measurability and convexity hypotheses "
            "hold globally; the integrable-envelope condition on the "
            "x-part multiplier combination fails along the closed-form "
            "iterate family"),
    )

    def process(grid: TimeGrid) -> Process:
        return Process(grid, np.zeros((grid.N + 1, 1)), np.zeros((grid.N, 2)))

    def multipliers(grid: TimeGrid) -> MultiplierSet:
        # No classical multipliers exist; expose the first iterate of the
        # family as a representative element.
        return analytic_awmp_iterate("paper-linear", 1, grid).multipliers

    def awmp_iterate(k: int, grid: TimeGrid) -> IterateRecord:
        if k < 1:
            raise ValueError("iterate index k must be >= 1")
        if abs(grid.t0) > 1e-12 or abs(grid.t1 - 1.0) > 1e-12:
            raise ValueError("the closed-form family lives on [0, 1]")
        t = grid.nodes
        # Piecewise-linear costate: zero head, ramp to -1/2 on the tail
        # that starts at k/(k+1).  Exact node samples.
        p = np.minimum(0.0, (k - (k + 1) * t) / 2.0)[:, None]
        # Interval densities as exact cell averages: q1 = -dp/h matches
        # -p' cellwise, including the cell containing the breakpoint, so
        # the lifted adjoint identity holds exactly and the l1 norm
        # telescopes to 1/2 for every k.  Definitional sign: q1 = -p' is
        # +(k+1)/2 on the tail.
        q1 = -np.diff(p[:, 0]) / grid.h
        q = np.column_stack([q1, -q1])
        ms = MultiplierSet(lam=0.5, p=p, q=q, r=np.zeros((grid.N, 0)),
                           zeta=np.zeros((grid.N, 2)))
        proc = process(grid)
        report = compute_awmp_residuals(prob, grid, proc, ms)
        return IterateRecord(k=k, process=proc, multipliers=ms, rho=0.0,
                             awmp=report, objective=0.0)

    bundle = AnalyticBundle(objective=0.0, process=process,
                            multipliers=multipliers, awmp_iterate=awmp_iterate)
    return NamedProblem("paper-linear", prob, bundle)


# ---------------------------------------------------------------------------
# exp-tracking
# ---------------------------------------------------------------------------


def _build_exp_tracking() -> NamedProblem:
    prob = ControlProblem(
        n=1, m=1, m_b=0, m_g=1, t0=0.0, t1=1.0,
        cost=lambda x0, x1: float(x1[0]),
        cost_grad=lambda x0, x1: np.array([0.0, 1.0]),
        dynamics=lambda t, X, U: U.copy(),
        dynamics_jac_x=lambda t, X, U: np.zeros((len(t), 1, 1)),
        dynamics_jac_u=lambda t, X, U: np.ones((len(t), 1, 1)),
        ineq_constraints=lambda t, X, U: -U - X - 1.0,
        ineq_jac_x=lambda t, X, U: np.full((len(t), 1, 1), -1.0),
        ineq_jac_u=lambda t, X, U: np.full((len(t), 1, 1), -1.0),
        control_box=Box([-1.0], [1.0]),
        endpoint_set=FixedInitial(np.array([0.0])),
        hypothesis_notes=(
            "smooth data with globally Lipschitz constraints; bounded "
            "closed-form multipliers, all standing hypotheses hold"),
    )

    def process(grid: TimeGrid) -> Process:
        t = grid.nodes
        X = (np.exp(-t) - 1.0)[:, None]
        U = -np.exp(-t[:-1])[:, None]
        return Process(grid, X, U)

    def multipliers(grid: TimeGrid) -> MultiplierSet:
        t = grid.nodes
        p = -np.exp(t - 1.0)[:, None]
        r = -np.exp(t[:-1] - 1.0)[:, None]
        ms = MultiplierSet(lam=1.0, p=p, q=np.zeros((grid.N, 0)), r=r,
                           zeta=np.zeros((grid.N, 1)))
        return normalize_multipliers(ms)

    def awmp_iterate(k: int, grid: TimeGrid) -> IterateRecord:
        if k < 1:
            raise ValueError("iterate index k must be >= 1")
        proc = process(grid)
        ms = multipliers(grid)
        report = compute_awmp_residuals(prob, grid, proc, ms)
        return IterateRecord(k=k, process=proc, multipliers=ms, rho=0.0,
                             awmp=report,
                             objective=prob.cost(proc.X[0], proc.X[-1]))

    bundle = AnalyticBundle(objective=float(np.exp(-1.0) - 1.0),
                            process=process, multipliers=multipliers,
                            awmp_iterate=awmp_iterate)
    return NamedProblem("exp-tracking", prob, bundle)


# ---------------------------------------------------------------------------
# trivial-free
# ---------------------------------------------------------------------------


def _build_trivial_free() -> NamedProblem:
    prob = ControlProblem(
        n=1, m=1, m_b=0, m_g=0, t0=0.0, t1=1.0,
        cost=lambda x0, x1: float(x1[0]),
        cost_grad=lambda x0, x1: np.array([0.0, 1.0]),
        dynamics=lambda t, X, U: U.copy(),
        dynamics_jac_x=lambda t, X, U: np.zeros((len(t), 1, 1)),
        dynamics_jac_u=lambda t, X, U: np.ones((len(t), 1, 1)),
        control_box=Box([-1.0], [1.0]),
        endpoint_set=FixedInitial(np.array([0.0])),
        hypothesis_notes="no mixed constraints; all standing hypotheses hold",
    )

    def process(grid: TimeGrid) -> Process:
        X = (-grid.nodes)[:, None]
        U = np.full((grid.N, 1), -1.0)
        return Process(grid, X, U)

    def multipliers(grid: TimeGrid) -> MultiplierSet:
        p = np.full((grid.N + 1, 1), -1.0)
        ms = MultiplierSet(lam=1.0, p=p, q=np.zeros((grid.N, 0)),
                           r=np.zeros((grid.N, 0)), zeta=p[:-1].copy())
        return normalize_multipliers(ms)

    def awmp_iterate(k: int, grid: TimeGrid) -> IterateRecord:
        if k < 1:
            raise ValueError("iterate index k must be >= 1")
        proc = process(grid)
        ms = multipliers(grid)
        report = compute_awmp_residuals(prob, grid, proc, ms)
        return IterateRecord(k=k, process=proc, multipliers=ms, rho=0.0,
                             awmp=report,
                             objective=prob.cost(proc.X[0], proc.X[-1]))

    bundle = AnalyticBundle(objective=-1.0, process=process,
                            multipliers=multipliers, awmp_iterate=awmp_iterate)
    return NamedProblem("trivial-free", prob, bundle)


_BUILDERS = {
    "paper-linear": _build_paper_linear,
    "exp-tracking": _build_exp_tracking,
    "trivial-free": _build_trivial_free,
}


def problem_names() -> list[str]:
    return sorted(_BUILDERS)


def get_problem(name: str) -> NamedProblem:
    """Look up a built-in problem by its stable name."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(
            f"unknown problem {name!r}; available: {', '.join(problem_names())}"
        ) from None
    return builder()


def analytic_awmp_iterate(name: str, k: int, grid: TimeGrid) -> IterateRecord:
    """The k-th closed-form iterate of a built-in problem.

    ``paper-linear`` yields the genuinely k-dependent family with
    unbounded multiplier sup norms; the regular problems return their
    (constant) closed-form certificate iterate for every k.
    """
    named = get_problem(name)
    if named.analytic is None:
        raise ValueError(f"problem {name!r} has no analytic bundle")
    return named.analytic.awmp_iterate(k, grid)


def discrete_optimal_process(name: str, grid: TimeGrid) -> Process:
    """Exactly feasible optimum of the transcribed problem, in closed form.

    Useful wherever exact discrete feasibility matters (certificate
    searches); the sampled continuous optimum carries O(h) Euler defects
    instead.
    """
    if name == "exp-tracking":
        h = grid.h
        X = np.empty((grid.N + 1, 1))
        X[0, 0] = 0.0
        for i in range(grid.N):
            X[i + 1, 0] = (1.0 - h) * X[i, 0] - h
        U = -1.0 - X[:-1]
        return Process(grid, X, U)
    if name == "trivial-free":
        return Process(grid, (-grid.nodes)[:, None], np.full((grid.N, 1), -1.0))
    if name == "paper-linear":
        return Process(grid, np.zeros((grid.N + 1, 1)), np.zeros((grid.N, 2)))
    raise KeyError(
        f"unknown problem {name!r}; available: {', '.join(problem_names())}")
