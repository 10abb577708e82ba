r"""Ergodic sum-rate pipelines: DRA solvers and FRA baselines.

Each pipeline draws together a per-state solver family and the dual
loop, then audits the recovered policy against every constraint before
reporting. Rates are sample averages in nats. The BC pipeline solves
every state twice, through the closed forms and through the auxiliary
MAC, and refuses to return if the two disagree.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import (ConstraintCase, ConstraintReport, PowerBudget,
                          feasibility_check, feasibility_check_bc)
from .dual import ConvergenceReport, DualPoint, ellipsoid_solve
from .errors import SolverFailureError, UsageError
from .fading import ChannelStateBc, ChannelStateMac, bc_arrays, mac_arrays
from .perstate_bc import solve_states_bc, solve_states_bc_via_mac
from .perstate_mac import ACTIVE_TOL

BC_STATE_AGREE_TOL = 1e-8
BC_RATE_AGREE_TOL = 1e-6


@dataclass(frozen=True)
class PolicyResult:
    """Everything measured about one computed power policy."""

    channel: str                 # "mac" or "bc"
    case: ConstraintCase
    mode: str                    # "full", "tdma", or "fra"
    ergodic_sum_rate: float      # nats per channel use
    rate_stderr: float
    gap: float | None            # dual minus primal, None without a dual
    dual_value: float | None
    dual_point: DualPoint | None
    rescale_gamma: float
    achieved_avg_tx_power: np.ndarray
    achieved_worst_tx_power: np.ndarray
    achieved_avg_interference: np.ndarray
    achieved_worst_interference: np.ndarray
    active_count_histogram: np.ndarray
    max_lt_violation: float
    n_states: int
    alloc: np.ndarray            # (n, K) for MAC, (n,) for BC
    feasibility: ConstraintReport
    convergence: ConvergenceReport | None


def _rate_stats(rates: np.ndarray) -> tuple[float, float]:
    mean = float(rates.mean())
    stderr = float(rates.std(ddof=1) / np.sqrt(rates.size)) if rates.size > 1 else 0.0
    return mean, stderr


def _assemble_mac(states, case, budget, P, *, mode, gap, dual_value,
                  dual_point, scale, report) -> PolicyResult:
    H, G = mac_arrays(states)
    n, K = H.shape
    rates = np.log1p(np.einsum("tk,tk->t", H, P))
    rate, stderr = _rate_stats(rates)
    I = np.einsum("tk,tkm->tm", P, G)
    feas = feasibility_check(P, states, case, budget)
    if not feas.all_satisfied:
        raise SolverFailureError("recovered MAC policy failed its feasibility audit",
                                 residual=feas.max_relative_violation)
    hist = np.bincount((P > ACTIVE_TOL).sum(axis=1), minlength=K + 1)
    return PolicyResult(
        channel="mac", case=case, mode=mode,
        ergodic_sum_rate=rate, rate_stderr=stderr,
        gap=gap, dual_value=dual_value, dual_point=dual_point,
        rescale_gamma=scale,
        achieved_avg_tx_power=P.mean(axis=0),
        achieved_worst_tx_power=P.max(axis=0),
        achieved_avg_interference=I.mean(axis=0) if G.shape[2] else np.zeros(0),
        achieved_worst_interference=I.max(axis=0) if G.shape[2] else np.zeros(0),
        active_count_histogram=hist,
        max_lt_violation=feas.max_relative_violation,
        n_states=n, alloc=P, feasibility=feas, convergence=report)


def ergodic_capacity_mac(states, case: ConstraintCase, budget: PowerBudget,
                         *, mode: str = "full", **dual_opts) -> PolicyResult:
    """Ergodic sum capacity of the secondary MAC under `case`.

    mode "full" allows simultaneous transmission, "tdma" restricts each
    state to a single user. Long-term cases run the ellipsoid dual
    loop; case 4 is a single exact per-state pass.
    """
    if mode not in ("full", "tdma"):
        raise UsageError("mode must be 'full' or 'tdma'")
    point, report, policy, scale = ellipsoid_solve(
        states, case, budget, tdma_mode=(mode == "tdma"), **dual_opts)
    rate = report.best_primal
    gap = report.best_dual - rate
    return _assemble_mac(states, case, budget, policy, mode=mode,
                         gap=gap, dual_value=report.best_dual,
                         dual_point=point, scale=scale, report=report)


def ergodic_capacity_mac_tdma(states, case: ConstraintCase, budget: PowerBudget,
                              **dual_opts) -> PolicyResult:
    """TDMA-restricted ergodic sum capacity of the secondary MAC."""
    return ergodic_capacity_mac(states, case, budget, mode="tdma", **dual_opts)


def _assemble_bc(states, case, budget, q, *, mode, gap, dual_value,
                 dual_point, scale, report) -> PolicyResult:
    Hb, F = bc_arrays(states)
    n, K = Hb.shape
    rates = np.log1p(Hb.max(axis=1) * q)
    rate, stderr = _rate_stats(rates)
    I = F * q[:, None]
    feas = feasibility_check_bc(q, states, case, budget)
    if not feas.all_satisfied:
        raise SolverFailureError("recovered BC policy failed its feasibility audit",
                                 residual=feas.max_relative_violation)
    hist = np.bincount((q > ACTIVE_TOL).astype(int), minlength=K + 1)
    return PolicyResult(
        channel="bc", case=case, mode=mode,
        ergodic_sum_rate=rate, rate_stderr=stderr,
        gap=gap, dual_value=dual_value, dual_point=dual_point,
        rescale_gamma=scale,
        achieved_avg_tx_power=np.array([q.mean()]),
        achieved_worst_tx_power=np.array([q.max()]),
        achieved_avg_interference=I.mean(axis=0) if F.shape[1] else np.zeros(0),
        achieved_worst_interference=I.max(axis=0) if F.shape[1] else np.zeros(0),
        active_count_histogram=hist,
        max_lt_violation=feas.max_relative_violation,
        n_states=n, alloc=q, feasibility=feas, convergence=report)


def _bc_agreement_check(states, case, budget, point: DualPoint):
    """Solve every state along both BC paths and compare."""
    Hb, F = bc_arrays(states)
    M = F.shape[1]
    lam = float(point.lam[0]) if point.lam.size else 0.0
    mu = point.mu if point.mu.size else np.zeros(M)
    q1, _ = solve_states_bc(Hb, F, case, lam, mu, budget)
    q2, _ = solve_states_bc_via_mac(Hb, F, case, lam, mu, budget)
    worst = float(np.max(np.abs(q1 - q2) / (1.0 + np.abs(q1))))
    if worst > BC_STATE_AGREE_TOL:
        raise SolverFailureError(
            f"BC closed form and auxiliary-MAC path disagree per state "
            f"({worst:.3e})", residual=worst)
    hstar = Hb.max(axis=1)
    r1 = float(np.mean(np.log1p(hstar * q1)))
    r2 = float(np.mean(np.log1p(hstar * q2)))
    rel = abs(r1 - r2) / max(abs(r1), 1e-12)
    if rel > BC_RATE_AGREE_TOL:
        raise SolverFailureError(
            f"BC ergodic rates disagree between paths ({rel:.3e})", residual=rel)
    return worst, rel


def ergodic_capacity_bc(states, case: ConstraintCase, budget: PowerBudget,
                        **dual_opts) -> PolicyResult:
    """Ergodic capacity of the secondary BC under `case`.

    The dual loop runs on the closed-form per-state solver; the final
    multipliers are then re-solved through the auxiliary MAC and the
    two paths must agree state by state.
    """
    point, report, policy, scale = ellipsoid_solve(states, case, budget,
                                                   **dual_opts)
    _bc_agreement_check(states, case, budget, point)
    rate = report.best_primal
    gap = report.best_dual - rate
    return _assemble_bc(states, case, budget, policy, mode="full",
                        gap=gap, dual_value=report.best_dual,
                        dual_point=point, scale=scale, report=report)


def fra_baseline_mac(states, budget: PowerBudget) -> PolicyResult:
    """Round-robin single-user baseline with a fixed per-state power.

    User (t mod K) transmits in state t at the largest power honoring
    its transmit cap and every interference cap; no channel knowledge
    is used beyond the instantaneous caps.
    """
    H, G = mac_arrays(states)
    n, K = H.shape
    M = G.shape[2]
    users = np.arange(n) % K
    rows = np.arange(n)
    g_user = G[rows, users]                      # (n, M)
    with np.errstate(divide="ignore"):
        cap = np.where(g_user > 0.0, budget.ipc[None, :] / g_user, np.inf).min(axis=1) \
            if M else np.full(n, np.inf)
    p = np.minimum(budget.tpc[users], cap)
    P = np.zeros((n, K))
    P[rows, users] = p
    return _assemble_mac(states, ConstraintCase.IV, budget, P, mode="fra",
                         gap=None, dual_value=None, dual_point=None,
                         scale=1.0, report=None)


def fra_baseline_bc(states, budget: PowerBudget) -> PolicyResult:
    """Round-robin BC baseline: serve user (t mod K) at the fixed power
    min(q_st, min_m gamma_m / f_m)."""
    Hb, F = bc_arrays(states)
    n, K = Hb.shape
    M = F.shape[1]
    if budget.bs_tpc is None:
        raise UsageError("BC baseline needs a bs_tpc threshold")
    users = np.arange(n) % K
    rows = np.arange(n)
    with np.errstate(divide="ignore"):
        cap = np.where(F > 0.0, budget.ipc[None, :] / F, np.inf).min(axis=1) \
            if M else np.full(n, np.inf)
    q = np.minimum(budget.bs_tpc, cap)
    rates = np.log1p(Hb[rows, users] * q)
    rate, stderr = _rate_stats(rates)
    I = F * q[:, None]
    feas = feasibility_check_bc(q, states, ConstraintCase.IV, budget)
    if not feas.all_satisfied:
        raise SolverFailureError("FRA BC policy failed its feasibility audit",
                                 residual=feas.max_relative_violation)
    hist = np.bincount((q > ACTIVE_TOL).astype(int), minlength=K + 1)
    return PolicyResult(
        channel="bc", case=ConstraintCase.IV, mode="fra",
        ergodic_sum_rate=rate, rate_stderr=stderr,
        gap=None, dual_value=None, dual_point=None,
        rescale_gamma=1.0,
        achieved_avg_tx_power=np.array([q.mean()]),
        achieved_worst_tx_power=np.array([q.max()]),
        achieved_avg_interference=I.mean(axis=0) if M else np.zeros(0),
        achieved_worst_interference=I.max(axis=0) if M else np.zeros(0),
        active_count_histogram=hist,
        max_lt_violation=feas.max_relative_violation,
        n_states=n, alloc=q, feasibility=feas, convergence=None)
