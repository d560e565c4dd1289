"""Command-line driver: solves, analytic verifications, certificate runs.

One run per invocation.  Results go to a per-iteration CSV (one row per
element of the generated sequence) and a flat ``key=value`` summary; both
are deterministic byte-for-byte given the same inputs and seed.  The CSV
is the plotting interface; nothing is rendered in-process.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields

import numpy as np

from .diagnostics import CqReport, accq_ratio, diagnose, multiplier_norms
from .monitor import wmp_certificate_search
from .problems import analytic_awmp_iterate, get_problem
from .solver import SolveStatus, SolverConfig, solve
from .transcription import make_grid

__all__ = ["RunConfig", "run_main", "main", "CSV_COLUMNS"]

CSV_COLUMNS = [
    "iter", "rho", "obj",
    "feas_dyn_max", "feas_b_max", "feas_gplus_max",
    "eps_l1", "eps_weak", "eta_l1", "eta_weak",
    "theta_max", "transv_norm", "norm_gap",
    "q_inf", "q_l1", "r_inf", "r_l1", "accq_ratio",
]

MODES = ("solve", "verify-analytic", "certificate-only")


@dataclass
class RunConfig:
    """One run: problem, mode, solver knobs, output paths."""

    problem: str = ""
    mode: str = "solve"
    grid: int = 100
    tol: float = 1e-6
    rho0: float = 10.0
    rho_factor: float = 10.0
    max_outer: int = 100
    max_inner: int = 5000
    kmax: int = 100
    seed: int = 0
    csv: str = "awmp_run.csv"
    summary: str = "awmp_summary.txt"

    # File keys are the flag names with all dashes removed.
    _KEYS = {
        "problem": "problem", "mode": "mode", "grid": "grid", "tol": "tol",
        "rho0": "rho0", "rhofactor": "rho_factor", "maxouter": "max_outer",
        "maxinner": "max_inner", "kmax": "kmax", "seed": "seed",
        "csv": "csv", "summary": "summary",
    }

    def to_file(self, path: str) -> None:
        lines = []
        for key, attr in self._KEYS.items():
            value = getattr(self, attr)
            if isinstance(value, float):
                value = repr(value)
            lines.append(f"{key}={value}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        cfg = cls()
        types = {f.name: f.type for f in fields(cls)}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                attr = cls._KEYS.get(key.strip())
                if attr is None:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                kind = types[attr]
                if kind in ("int", int):
                    parsed = int(value.strip())
                elif kind in ("float", float):
                    parsed = float(value.strip())
                else:
                    parsed = value.strip()
                setattr(cfg, attr, parsed)
        return cfg

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            N=self.grid, tol_feas=self.tol, tol_stat=self.tol,
            rho0=self.rho0, rho_factor=self.rho_factor,
            max_outer=self.max_outer, max_inner=self.max_inner,
            seed=self.seed,
        )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _row(rec, prob, grid) -> list:
    rep = rec.awmp
    q_inf, q_l1, r_inf, r_l1 = multiplier_norms(rec.multipliers, grid)
    ratio, _, _ = accq_ratio(prob, grid, [rec])
    return [
        rec.k, float(rec.rho), float(rec.objective),
        rep.feasibility.dyn_max, rep.feasibility.b_max,
        rep.feasibility.gplus_max,
        rep.eps_l1, rep.eps_weak, rep.eta_l1, rep.eta_weak,
        rep.theta_max, rep.transv_norm, rep.normalization_gap,
        q_inf, q_l1, r_inf, r_l1, ratio,
    ]


def _write_csv(path: str, rows: list[list]) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_summary(path: str, entries: list[tuple[str, object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in entries:
            fh.write(f"{key}={_fmt(value)}\n")


def _summary_from_history(cfg, history, prob, grid, cq: CqReport | None,
                          status: str) -> list[tuple[str, object]]:
    entries = [
        ("problem", cfg.problem), ("mode", cfg.mode), ("grid", cfg.grid),
        ("seed", cfg.seed), ("status", status),
        ("iterations", len(history)),
    ]
    if history:
        last = history[-1]
        entries += [
            ("objective", float(last.objective)),
            ("final_feas_max", last.awmp.feasibility.max_violation),
            ("final_eps_l1", last.awmp.eps_l1),
            ("final_eta_l1", last.awmp.eta_l1),
            ("final_eta_weak", last.awmp.eta_weak),
            ("final_theta_max", last.awmp.theta_max),
            ("final_transv_norm", last.awmp.transv_norm),
        ]
    if cq is not None:
        entries += [
            ("growth_slope_q", cq.growth_slope_q),
            ("growth_slope_r", cq.growth_slope_r),
            ("h8_envelope_ok", cq.h8_envelope_ok),
            ("h9_envelope_ok", cq.h9_envelope_ok),
            ("accq_ratio_sup", cq.accq_ratio_sup),
            ("accq_slope", cq.accq_slope),
            ("verdict", cq.verdict.value),
        ]
        if cq.certificate is not None:
            entries += [
                ("certificate_verdict", cq.certificate.verdict.value),
                ("certificate_residual", cq.certificate.residual),
            ]
    return entries


def _run_solve(cfg: RunConfig) -> int:
    named = get_problem(cfg.problem)
    result = solve(named.problem, cfg.solver_config())
    grid = make_grid(named.problem.t0, named.problem.t1, cfg.grid)
    rows = [_row(rec, named.problem, grid) for rec in result.history]
    _write_csv(cfg.csv, rows)
    entries = _summary_from_history(cfg, result.history, named.problem, grid,
                                    result.cq, result.status.value)
    if result.message:
        entries.append(("message", result.message))
    _write_summary(cfg.summary, entries)
    return 0 if result.status is SolveStatus.CONVERGED_AWMP else 2


def _run_verify_analytic(cfg: RunConfig) -> int:
    named = get_problem(cfg.problem)
    grid = make_grid(named.problem.t0, named.problem.t1, cfg.grid)
    history = [analytic_awmp_iterate(cfg.problem, k, grid)
               for k in range(1, cfg.kmax + 1)]
    rows = [_row(rec, named.problem, grid) for rec in history]
    _write_csv(cfg.csv, rows)
    cq = diagnose(named.problem, grid, history,
                  cert_feas_tol=max(cfg.tol, 10.0 / grid.N))
    entries = _summary_from_history(cfg, history, named.problem, grid, cq,
                                    "AnalyticFamily")
    _write_summary(cfg.summary, entries)
    return 0


def _run_certificate_only(cfg: RunConfig) -> int:
    named = get_problem(cfg.problem)
    grid = make_grid(named.problem.t0, named.problem.t1, cfg.grid)
    process = named.analytic.process(grid)
    cert = wmp_certificate_search(named.problem, grid, process, tol=cfg.tol,
                                  feas_tol=max(cfg.tol, 10.0 / grid.N))
    entries = [
        ("problem", cfg.problem), ("mode", cfg.mode), ("grid", cfg.grid),
        ("certificate_verdict", cert.verdict.value),
        ("certificate_residual", cert.residual),
        ("certificate_tol", cert.tol),
        ("certificate_lambda", cert.multipliers.lam),
    ]
    _write_summary(cfg.summary, entries)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValueError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="awmp", add_help=True, description=__doc__)
    parser.add_argument("--problem", type=str)
    parser.add_argument("--mode", type=str, choices=MODES)
    parser.add_argument("--grid", type=int)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--rho0", type=float)
    parser.add_argument("--rho-factor", dest="rho_factor", type=float)
    parser.add_argument("--max-outer", dest="max_outer", type=int)
    parser.add_argument("--max-inner", dest="max_inner", type=int)
    parser.add_argument("--kmax", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--csv", type=str)
    parser.add_argument("--summary", type=str)
    parser.add_argument("--config", type=str)
    return parser


def run_main(argv: list[str]) -> int:
    """Parse flags, run the requested mode, write outputs.

    Exit codes: 0 success, 2 solver non-convergence (outputs written),
    1 usage error with a message on stderr.
    """
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        cfg = RunConfig.from_file(ns.config) if ns.config else RunConfig()
        for attr in ("problem", "mode", "grid", "tol", "rho0", "rho_factor",
                     "max_outer", "max_inner", "kmax", "seed", "csv",
                     "summary"):
            value = getattr(ns, attr)
            if value is not None:
                setattr(cfg, attr, value)
        if not cfg.problem:
            raise ValueError("--problem is required")
        if cfg.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if cfg.mode == "solve":
            return _run_solve(cfg)
        if cfg.mode == "verify-analytic":
            return _run_verify_analytic(cfg)
        return _run_certificate_only(cfg)
    except SystemExit:
        raise
    except (ValueError, KeyError, OSError) as err:
        msg = err.args[0] if err.args else err
        print(f"awmp: error: {msg}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_main(sys.argv[1:]))
