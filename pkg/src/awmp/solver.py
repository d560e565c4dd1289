"""Method-of-multipliers outer loop with a projected-gradient inner solver.

Each outer iteration minimizes the augmented Lagrangian over all states
and controls (controls projected onto the box), applies the first-order
multiplier updates, lifts the internal multipliers to the continuous sign
convention, normalizes them to lambda + max|p| = 1, and records the full
residual report.  The iterate history is the object of study: on
well-behaved problems it converges with bounded multipliers; on
degenerate ones feasibility still improves while the lifted multiplier
densities grow, which the diagnostics layer turns into a verdict.

Convergence gate: ``ConvergedAwmp`` requires the feasibility violation
within ``tol_feas`` and the normalized adjoint, complementarity,
transversality, sign, and cone residuals within ``tol_stat``.  The
reported control residual eta is not gated: its grid representation
carries an O(h) quadrature floor by construction, and its decay is
reported through the l1/weak-window norms instead.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .model import ControlProblem, FixedBoth, FixedInitial, MultiplierSet, Process
from .monitor import AwmpResidualReport, compute_awmp_residuals, normalize_multipliers
from .transcription import DiscreteNLP, TimeGrid, lift_multipliers, make_grid, transcribe

__all__ = [
    "SolverConfig",
    "SolveStatus",
    "IterateRecord",
    "SolveResult",
    "InnerFailureError",
    "projected_gradient",
    "inner_solve",
    "update_multipliers",
    "solve",
]


@dataclass
class SolverConfig:
    """Tuning knobs of the outer/inner loops (defaults are the contract)."""

    N: int = 100
    tol_feas: float = 1e-6
    tol_stat: float = 1e-6
    rho0: float = 10.0
    rho_factor: float = 10.0
    max_outer: int = 100
    max_inner: int = 5000
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    multiplier_cap: float = 1e8
    seed: int = 0
    delta: float = np.inf

    def __post_init__(self):
        if self.tol_feas <= 0 or self.tol_stat <= 0:
            raise ValueError("tolerances must be positive")
        if self.rho_factor <= 1:
            raise ValueError("rho_factor must exceed 1")
        if not (0 < self.backtrack < 1) or not (0 < self.armijo_c < 1):
            raise ValueError("line-search constants out of range")
        if not (self.delta > 0):
            raise ValueError("delta must be positive (may be +inf)")


class SolveStatus(enum.Enum):
    CONVERGED_AWMP = "ConvergedAwmp"
    MAX_ITERATIONS = "MaxIterations"
    INNER_FAILURE = "InnerFailure"
    MULTIPLIER_CAP_HIT = "MultiplierCapHit"


@dataclass
class IterateRecord:
    """One element of the generated sequence, with its residual report."""

    k: int
    process: Process
    multipliers: MultiplierSet
    rho: float
    awmp: AwmpResidualReport
    objective: float


@dataclass
class SolveResult:
    history: list[IterateRecord]
    status: SolveStatus
    cq: object | None = None   # CqReport, attached by the diagnostics layer
    message: str = ""


class InnerFailureError(RuntimeError):
    """Inner minimization failed (stalled line search or non-finite data)."""

    def __init__(self, message: str, z_best: np.ndarray | None = None):
        super().__init__(message)
        self.z_best = z_best


def projected_gradient(value_and_grad, project, z0: np.ndarray,
                       tol: float, max_iter: int,
                       armijo_c: float = 1e-4, backtrack: float = 0.5):
    """Monotone projected gradient with BB steps and Armijo backtracking.

    Minimizes a smooth function over a convex set given by ``project``.
    Terminates when the composite residual |z - project(z - grad)| drops
    below ``tol`` or after ``max_iter`` iterations; returns the best
    iterate seen and an info dict (iterations, pg_norm, accepted values).

    Raises
    ------
    InnerFailureError
        If 60 consecutive halvings fail to produce Armijo decrease, or a
        non-finite value/gradient is encountered at the current iterate.
    """
    z = project(np.asarray(z0, dtype=float))
    f, g = value_and_grad(z)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise InnerFailureError("non-finite value at starting point", z)
    best_z, best_f = z.copy(), f
    values = [f]
    alpha = 1.0 / max(1.0, float(np.linalg.norm(g)))
    pg_norm = np.inf
    iterations = 0
    for iterations in range(max_iter + 1):
        pg = z - project(z - g)
        pg_norm = float(np.linalg.norm(pg))
        if pg_norm <= tol:
            break
        if iterations == max_iter:
            break
        step = alpha
        accepted = False
        for _ in range(60):
            z_new = project(z - step * g)
            f_new, g_new = value_and_grad(z_new)
            d = z_new - z
            if np.isfinite(f_new) and f_new <= f + armijo_c * float(g @ d):
                accepted = True
                break
            step *= backtrack
        if not accepted:
            raise InnerFailureError(
                "line search failed after 60 halvings", best_z)
        s = z_new - z
        y = g_new - g
        sy = float(s @ y)
        alpha = float(s @ s) / sy if sy > 1e-30 else min(2.0 * step, 1e8)
        alpha = float(np.clip(alpha, 1e-12, 1e8))
        z, f, g = z_new, f_new, g_new
        values.append(f)
        if f < best_f:
            best_f, best_z = f, z.copy()
        if not np.all(np.isfinite(g)):
            raise InnerFailureError("non-finite gradient encountered", best_z)
    info = {"iterations": iterations, "pg_norm": pg_norm, "values": values}
    return best_z, info


def inner_solve(nlp: DiscreteNLP, rho: float, warm_start: np.ndarray,
                config: SolverConfig):
    """Minimize the augmented Lagrangian at fixed multipliers and rho."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    tol = config.tol_stat / max(1.0, rho)
    return projected_gradient(
        lambda z: nlp.aug_lagrangian(z, rho),
        nlp.project,
        warm_start,
        tol=tol,
        max_iter=config.max_inner,
        armijo_c=config.armijo_c,
        backtrack=config.backtrack,
    )


def update_multipliers(nlp: DiscreteNLP, z: np.ndarray, rho: float,
                       config: SolverConfig) -> None:
    """First-order multiplier update; mu stays >= 0 and caps are flagged."""
    nlp.update_multipliers(z, rho, config.multiplier_cap)


def _initial_point(nlp: DiscreteNLP, config: SolverConfig) -> np.ndarray:
    rng = np.random.default_rng(config.seed)
    N, n, m = nlp.N, nlp.n, nlp.m
    X = np.zeros((N + 1, n))
    ep = nlp.prob.endpoint_set
    if isinstance(ep, FixedInitial):
        X[:] = ep.a
    elif isinstance(ep, FixedBoth):
        X[:] = np.linspace(ep.a, ep.b, N + 1)
    X += 0.01 * rng.standard_normal(X.shape)
    U = nlp.prob.control_box.project(0.1 * rng.standard_normal((N, m)))
    return nlp.join(X, U)


def _record(prob, grid, nlp, z, k, rho) -> IterateRecord:
    X, U = nlp.split(z)
    process = Process(grid, X, U)
    lifted = lift_multipliers(nlp, grid, process)
    ms = normalize_multipliers(lifted)
    report = compute_awmp_residuals(prob, grid, process, ms)
    ms = MultiplierSet(lam=ms.lam, p=ms.p, q=ms.q, r=ms.r, zeta=report.zeta)
    return IterateRecord(k=k, process=process, multipliers=ms, rho=rho,
                         awmp=report, objective=nlp.objective(z))


def _converged(report: AwmpResidualReport, config: SolverConfig) -> bool:
    stat = max(report.eps_linf, report.theta_max, report.transv_norm,
               report.r_sign_violation, report.zeta_violation)
    return (report.feasibility.max_violation <= config.tol_feas
            and stat <= config.tol_stat)


def solve(prob: ControlProblem, config: SolverConfig | None = None) -> SolveResult:
    """Run the method of multipliers and collect the iterate history.

    Returns a :class:`SolveResult` whose history holds one record per
    outer iteration (lifted, normalized multipliers with their residual
    reports) and whose ``cq`` field carries the regularity diagnostics of
    the generated sequence.
    """
    if config is None:
        config = SolverConfig()
    grid = make_grid(prob.t0, prob.t1, config.N)
    nlp = transcribe(prob, grid)
    z = _initial_point(nlp, config)
    rho = config.rho0
    history: list[IterateRecord] = []
    status = SolveStatus.MAX_ITERATIONS
    message = ""
    prev_feas = np.inf

    for k in range(1, config.max_outer + 1):
        try:
            z, _ = inner_solve(nlp, rho, z, config)
        except InnerFailureError as err:
            if err.z_best is not None:
                z = err.z_best
            update_multipliers(nlp, z, rho, config)
            history.append(_record(prob, grid, nlp, z, k, rho))
            status = SolveStatus.INNER_FAILURE
            message = str(err)
            break
        update_multipliers(nlp, z, rho, config)
        record = _record(prob, grid, nlp, z, k, rho)
        history.append(record)
        if nlp.cap_hit:
            status = SolveStatus.MULTIPLIER_CAP_HIT
            message = "multiplier safeguard cap reached"
            break
        if _converged(record.awmp, config):
            status = SolveStatus.CONVERGED_AWMP
            break
        feas = record.awmp.feasibility.max_violation
        if feas > 0.5 * prev_feas:
            rho *= config.rho_factor
        prev_feas = feas

    result = SolveResult(history=history, status=status, message=message)
    from .diagnostics import diagnose
    result.cq = diagnose(prob, grid, history,
                         cert_feas_tol=max(config.tol_feas, 10.0 / grid.N))
    return result
