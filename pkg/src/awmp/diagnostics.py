"""Regularity verdicts from iterate histories.

Three evidence routes, in the order they are tried:

* multiplier boundedness: per-iteration norms of the lifted q and r with
  a log-log growth-slope fit, plus per-node running-max envelopes of
  |eps|, |eta| and of the x-part constraint-gradient combination (the
  integrable-envelope surrogates); bounded slopes with stabilized
  envelopes certify the bounded-multiplier route;
* the calibrated ratio |(q, r)| / |psi| per node and iteration, whose
  stabilized supremum certifies the calibrated route;
* persistent slope growth is reported as irregularity evidence.

The verdicts grade evidence along the one generated sequence; the formal
regularity notion quantifies over all admissible sequences, so "regular"
here means "no obstruction observed", strictly weaker than the
mathematical property.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .model import ControlProblem
from .monitor import WmpCertificate, extract_M_tuple, wmp_certificate_search
from .transcription import TimeGrid, grid_norms

__all__ = [
    "DiagnosticsConfig",
    "CqVerdict",
    "CqReport",
    "multiplier_norms",
    "track_bounds",
    "accq_ratio",
    "regularity_verdict",
    "diagnose",
]

RATIO_FLOOR = 1e-12


@dataclass
class DiagnosticsConfig:
    """Calibration constants for the verdict thresholds."""

    slope_tol: float = 0.05
    irregular_slope_floor: float = 0.5
    min_irregular_iters: int = 10
    envelope_growth_tol: float = 0.01   # last-quarter relative growth
    certificate_tol: float = 1e-6


class CqVerdict(enum.Enum):
    REGULAR_BY_BOUNDEDNESS = "RegularByBoundedness"
    REGULAR_BY_ACCQ = "RegularByACCQ"
    IRREGULAR_EVIDENCE = "IrregularEvidence"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class CqReport:
    """Multiplier-growth fits, calibrated ratios, and the verdict."""

    q_linf_by_iter: np.ndarray = field(default_factory=lambda: np.zeros(0))
    r_linf_by_iter: np.ndarray = field(default_factory=lambda: np.zeros(0))
    q_l1_by_iter: np.ndarray = field(default_factory=lambda: np.zeros(0))
    r_l1_by_iter: np.ndarray = field(default_factory=lambda: np.zeros(0))
    growth_slope_q: float = float("nan")
    growth_slope_r: float = float("nan")
    h8_envelope_ok: bool = False
    h9_envelope_ok: bool = False
    eps_envelope: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eta_envelope: np.ndarray = field(default_factory=lambda: np.zeros(0))
    combo_envelope: np.ndarray = field(default_factory=lambda: np.zeros(0))
    accq_ratio_sup: float = float("nan")
    accq_M_estimate: np.ndarray = field(default_factory=lambda: np.zeros(0))
    accq_sup_by_iter: np.ndarray = field(default_factory=lambda: np.zeros(0))
    accq_slope: float = float("nan")
    verdict: CqVerdict = CqVerdict.INCONCLUSIVE
    evidence: str = ""
    certificate: WmpCertificate | None = None


def _node_mag(v: np.ndarray) -> np.ndarray:
    """Per-node magnitude of an interval density: max |component|."""
    if v.size == 0:
        return np.zeros(v.shape[0])
    return np.abs(v).max(axis=1)


def multiplier_norms(ms, grid: TimeGrid):
    """(q_inf, q_l1, r_inf, r_l1) with per-node magnitude max |component|."""
    qm = _node_mag(ms.q)
    rm = _node_mag(ms.r)
    return (float(qm.max(initial=0.0)), float(grid.h * qm.sum()),
            float(rm.max(initial=0.0)), float(grid.h * rm.sum()))


def _fit_slope(ks: np.ndarray, vals: np.ndarray) -> float:
    """Least-squares slope of log(vals) against log(k) over the last half."""
    lo = len(ks) // 2
    ks, vals = ks[lo:], vals[lo:]
    mask = vals > 1e-300
    if mask.sum() < 2:
        return 0.0
    lx = np.log(ks[mask].astype(float))
    ly = np.log(vals[mask])
    lx = lx - lx.mean()
    denom = float(lx @ lx)
    if denom == 0.0:
        return 0.0
    return float(lx @ (ly - ly.mean())) / denom


def _envelope_growth(grid: TimeGrid, per_iter_mags: list[np.ndarray]) -> tuple[np.ndarray, float]:
    """Running-max envelope and its last-quarter relative l1 growth."""
    stack = np.vstack(per_iter_mags)
    env_full = stack.max(axis=0)
    cut = max(1, (3 * len(per_iter_mags)) // 4)
    env_cut = stack[:cut].max(axis=0)
    l1_full = grid.h * env_full.sum()
    l1_cut = grid.h * env_cut.sum()
    growth = (l1_full - l1_cut) / max(l1_cut, 1e-300)
    return env_full, float(growth)


def track_bounds(prob: ControlProblem, grid: TimeGrid, history,
                 config: DiagnosticsConfig | None = None) -> CqReport:
    """Multiplier-norm tracking and envelope checks over a history.

    Per-node running maxima of |q|, |eps|, |eta| and of the x-part
    combination |sum q grad_x b + sum r grad_x g| stand in for the
    integrable envelopes; an envelope whose h-weighted l1 grows by more
    than the configured fraction over the last quarter of the iterations
    is flagged as unbounded.
    """
    if config is None:
        config = DiagnosticsConfig()
    if len(history) < 3:
        raise ValueError("history too short: need at least 3 iterates")
    ks = np.array([rec.k for rec in history], dtype=float)
    q_linf, q_l1, r_linf, r_l1 = [], [], [], []
    eps_mags, eta_mags, combo_mags = [], [], []
    for rec in history:
        qi, ql, ri, rl = multiplier_norms(rec.multipliers, grid)
        q_linf.append(qi)
        q_l1.append(ql)
        r_linf.append(ri)
        r_l1.append(rl)
        eps_mags.append(np.linalg.norm(rec.awmp.eps, axis=1))
        eta_mags.append(np.linalg.norm(rec.awmp.eta, axis=1))
        phi, _, _, _ = extract_M_tuple(prob, grid, rec.process, rec.multipliers)
        combo_mags.append(np.linalg.norm(phi, axis=1))

    report = CqReport(
        q_linf_by_iter=np.array(q_linf), r_linf_by_iter=np.array(r_linf),
        q_l1_by_iter=np.array(q_l1), r_l1_by_iter=np.array(r_l1),
        growth_slope_q=_fit_slope(ks, np.array(q_linf)),
        growth_slope_r=_fit_slope(ks, np.array(r_linf)),
    )
    eps_env, eps_growth = _envelope_growth(grid, eps_mags)
    eta_env, eta_growth = _envelope_growth(grid, eta_mags)
    combo_env, combo_growth = _envelope_growth(grid, combo_mags)
    report.eps_envelope = eps_env
    report.eta_envelope = eta_env
    report.combo_envelope = combo_env
    report.h8_envelope_ok = bool(
        max(eps_growth, eta_growth) <= config.envelope_growth_tol)
    report.h9_envelope_ok = bool(combo_growth <= config.envelope_growth_tol)
    return report


def accq_ratio(prob: ControlProblem, grid: TimeGrid, history):
    """Calibrated ratios |(q_i, r_i)| / max(|psi_i|, floor) over a history.

    Where both the multiplier magnitude and |psi| vanish (below the
    floor) the ratio is defined as zero.  Returns
    ``(ratio_sup, M_estimate, sup_by_iter)`` with ``M_estimate`` the
    per-node maximum over iterations.
    """
    if not history:
        raise ValueError("history is empty")
    M_est = np.zeros(grid.N)
    sup_by_iter = np.zeros(len(history))
    for idx, rec in enumerate(history):
        _, psi, _, _ = extract_M_tuple(prob, grid, rec.process, rec.multipliers)
        qr = np.hstack([rec.multipliers.q, rec.multipliers.r])
        num = np.linalg.norm(qr, axis=1) if qr.size else np.zeros(grid.N)
        den = np.linalg.norm(psi, axis=1)
        ratio = num / np.maximum(den, RATIO_FLOOR)
        ratio[(den <= RATIO_FLOOR) & (num <= RATIO_FLOOR)] = 0.0
        M_est = np.maximum(M_est, ratio)
        sup_by_iter[idx] = ratio.max(initial=0.0)
    return float(M_est.max(initial=0.0)), M_est, sup_by_iter


def _stabilized(sup_by_iter: np.ndarray, tol: float) -> bool:
    running = np.maximum.accumulate(sup_by_iter)
    cut = max(1, (3 * len(sup_by_iter)) // 4)
    base = max(running[cut - 1], 1e-300)
    return bool((running[-1] - running[cut - 1]) / base <= tol)


def regularity_verdict(prob: ControlProblem, grid: TimeGrid,
                       report: CqReport, history,
                       config: DiagnosticsConfig | None = None,
                       cert_feas_tol: float = 1e-6) -> CqReport:
    """Combine the tracked evidence into a verdict, attaching a certificate.

    Order: bounded multipliers (slopes within tolerance, envelopes
    stabilized), then a stabilized calibrated-ratio supremum, then
    persistent slope growth as irregularity evidence, else inconclusive.
    Either regular verdict triggers a certificate search on the last
    iterate's process.
    """
    if config is None:
        config = DiagnosticsConfig()
    sup, M_est, sup_by_iter = accq_ratio(prob, grid, history)
    report.accq_ratio_sup = sup
    report.accq_M_estimate = M_est
    report.accq_sup_by_iter = sup_by_iter
    ks = np.array([rec.k for rec in history], dtype=float)
    report.accq_slope = _fit_slope(ks, sup_by_iter)

    slopes = [s for s in (report.growth_slope_q, report.growth_slope_r)
              if np.isfinite(s)]
    max_slope = max(slopes) if slopes else 0.0
    window = len(history) - len(history) // 2

    if (max_slope <= config.slope_tol and report.h8_envelope_ok
            and report.h9_envelope_ok):
        report.verdict = CqVerdict.REGULAR_BY_BOUNDEDNESS
        report.evidence = (
            f"slopes q={report.growth_slope_q:.3f} r={report.growth_slope_r:.3f}"
            f" <= {config.slope_tol}; envelopes stabilized")
    elif _stabilized(sup_by_iter, config.envelope_growth_tol):
        report.verdict = CqVerdict.REGULAR_BY_ACCQ
        report.evidence = f"calibrated ratio sup {sup:.6g} stabilized"
    elif (max_slope >= config.irregular_slope_floor
            and window >= config.min_irregular_iters):
        report.verdict = CqVerdict.IRREGULAR_EVIDENCE
        report.evidence = (
            f"multiplier growth slope {max_slope:.3f} >= "
            f"{config.irregular_slope_floor} over {window} iterations")
    else:
        report.verdict = CqVerdict.INCONCLUSIVE
        report.evidence = "insufficient evidence for any route"

    if report.verdict in (CqVerdict.REGULAR_BY_BOUNDEDNESS,
                          CqVerdict.REGULAR_BY_ACCQ):
        last = history[-1]
        try:
            report.certificate = wmp_certificate_search(
                prob, grid, last.process, tol=config.certificate_tol,
                feas_tol=cert_feas_tol)
        except ValueError as err:
            report.evidence += f"; certificate skipped ({err})"
    return report


def diagnose(prob: ControlProblem, grid: TimeGrid, history,
             config: DiagnosticsConfig | None = None,
             cert_feas_tol: float = 1e-6) -> CqReport:
    """Full pipeline: track bounds, calibrated ratios, verdict."""
    if config is None:
        config = DiagnosticsConfig()
    if len(history) < 3:
        return CqReport(verdict=CqVerdict.INCONCLUSIVE,
                        evidence="history shorter than 3 iterates")
    report = track_bounds(prob, grid, history, config)
    return regularity_verdict(prob, grid, report, history, config,
                              cert_feas_tol=cert_feas_tol)
