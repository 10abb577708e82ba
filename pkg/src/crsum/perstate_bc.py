r"""Per-fading-state optimal BC power control.

For the sum rate, the base station serves only the user with the
largest direct gain in each state, so every per-state subproblem is a
one-dimensional water-filling with case-specific caps:

  case 1:  q = (1/(lam + mu.f) - 1/h*)^+
  case 2:  q = min(min_m gamma_m/f_m, (1/lam - 1/h*)^+)
  case 3:  q = min(q_st, (1/(mu.f) - 1/h*)^+)
  case 4:  q = min(q_st, min_m gamma_m/f_m)

As an independent check, every case can also be solved through an
auxiliary MAC whose K "users" share the BC's direct gains, mapping the
BC constraint mix onto one of the MAC per-state solvers; both paths
must agree state by state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintCase, PowerBudget
from .errors import UnboundedSubproblemError, UsageError
from .fading import ChannelStateBc
from .perstate_mac import solve_states_case1, solve_states_case2


@dataclass(frozen=True)
class BcStateAllocation:
    """Scalar transmit power, the served user, and log(1 + h*q)."""

    q: float
    user: int
    sum_rate_term: float


def _served(Hb: np.ndarray) -> np.ndarray:
    # ties go to the lowest user index
    return np.argmax(Hb, axis=1)


def _require(cond: bool, msg: str):
    if not cond:
        raise UsageError(msg)


def solve_states_bc(Hb: np.ndarray, F: np.ndarray, case: ConstraintCase,
                    lam: float, mu, budget: PowerBudget):
    """Vectorized closed-form BC solver. Returns (q, user) arrays."""
    n, K = Hb.shape
    M = F.shape[1]
    mu = np.asarray(mu, dtype=float)
    user = _served(Hb)
    hstar = Hb[np.arange(n), user]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_h = np.where(hstar > 0.0, 1.0 / hstar, np.inf)
        if M:
            ipc_cap = np.where(F > 0.0, budget.ipc[None, :] / F, np.inf).min(axis=1) \
                if case in (ConstraintCase.II, ConstraintCase.IV) else None
        else:
            ipc_cap = np.full(n, np.inf) \
                if case in (ConstraintCase.II, ConstraintCase.IV) else None

        if case is ConstraintCase.I:
            denom = lam + F @ mu
            bad = (denom <= 0.0) & (hstar > 0.0)
            if np.any(bad):
                t = int(np.flatnonzero(bad)[0])
                raise UnboundedSubproblemError(
                    "base station faces zero effective price",
                    state_index=t, user_index=int(user[t]))
            q = np.maximum(np.where(denom > 0.0, 1.0 / denom, 0.0) - inv_h, 0.0)
            q = np.where(hstar > 0.0, q, 0.0)
        elif case is ConstraintCase.II:
            wf = np.maximum((1.0 / lam if lam > 0.0 else np.inf) - inv_h, 0.0)
            q = np.minimum(ipc_cap, wf)
            bad = np.isinf(q) & (hstar > 0.0)
            if np.any(bad):
                t = int(np.flatnonzero(bad)[0])
                raise UnboundedSubproblemError(
                    "base station faces zero effective price",
                    state_index=t, user_index=int(user[t]))
            q = np.where(np.isfinite(q), np.where(hstar > 0.0, q, 0.0), 0.0)
        elif case is ConstraintCase.III:
            denom = F @ mu
            wf = np.maximum(np.where(denom > 0.0, 1.0 / denom, np.inf) - inv_h, 0.0)
            q = np.minimum(budget.bs_tpc, wf)
            q = np.where(hstar > 0.0, q, 0.0)
        else:
            q = np.minimum(budget.bs_tpc, ipc_cap)
    return q, user


def solve_state_bc(state: ChannelStateBc, case: ConstraintCase,
                   lam: float, mu, budget: PowerBudget) -> BcStateAllocation:
    """Closed-form BC subproblem for one state."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    _require(mu.shape == (state.M,), "mu must have shape (M,)")
    _require(lam >= 0.0 and np.all(mu >= 0.0), "prices must be nonnegative")
    if case in (ConstraintCase.III, ConstraintCase.IV):
        _require(budget.bs_tpc is not None, "case needs a bs_tpc threshold")
    q, user = solve_states_bc(state.h[None], state.f[None], case, lam, mu, budget)
    return BcStateAllocation(q=float(q[0]), user=int(user[0]),
                             sum_rate_term=float(np.log1p(state.h[user[0]] * q[0])))


def solve_states_bc_via_mac(Hb: np.ndarray, F: np.ndarray, case: ConstraintCase,
                            lam: float, mu, budget: PowerBudget):
    """Solve the same per-state problems through an auxiliary MAC.

    The auxiliary MAC gives every "user" k the BC gain h_k and lets the
    appropriate MAC case solver allocate; the BC power is the sum over
    users (at most one is active). This exercises entirely different
    code than the closed forms.
    """
    n, K = Hb.shape
    M = F.shape[1]
    mu = np.asarray(mu, dtype=float)
    if case is ConstraintCase.I:
        G = np.broadcast_to(F[:, None, :], (n, K, M))
        P = solve_states_case1(Hb, G, np.full(K, lam), mu)
    elif case is ConstraintCase.II:
        G = np.broadcast_to(F[:, None, :], (n, K, M))
        P = solve_states_case2(Hb, G, np.full(K, lam), budget.ipc)
    elif case is ConstraintCase.III:
        # a single synthetic constraint sum_k p_k <= q_st, with the
        # interference price folded into each user's transmit price
        G = np.ones((n, K, 1))
        LAM = np.broadcast_to((F @ mu)[:, None], (n, K))
        GAM = np.full((n, 1), budget.bs_tpc)
        P = solve_states_case2(Hb, G, LAM, GAM)
    else:
        G = np.ones((n, K, 1))
        with np.errstate(divide="ignore"):
            cap = np.where(F > 0.0, budget.ipc[None, :] / F, np.inf).min(axis=1) \
                if M else np.full(n, np.inf)
        GAM = np.minimum(budget.bs_tpc, cap)[:, None]
        P = solve_states_case2(Hb, G, np.zeros(K), GAM)
    q = P.sum(axis=1)
    return q, _served(Hb)


def bc_via_dual_mac(state: ChannelStateBc, case: ConstraintCase,
                    lam: float, mu, budget: PowerBudget) -> BcStateAllocation:
    """Scalar wrapper for the auxiliary-MAC path."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    _require(mu.shape == (state.M,), "mu must have shape (M,)")
    q, user = solve_states_bc_via_mac(state.h[None], state.f[None], case,
                                      lam, mu, budget)
    return BcStateAllocation(q=float(q[0]), user=int(user[0]),
                             sum_rate_term=float(np.log1p(state.h[user[0]] * q[0])))
