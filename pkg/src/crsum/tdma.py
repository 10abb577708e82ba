r"""Per-state solvers under the single-transmitter (TDMA) restriction.

Restricting every fading state to at most one transmitting user makes
each per-state subproblem a one-dimensional maximization per candidate
user, solved in closed form; the best candidate wins. Case 1 needs no
restriction at all: its unrestricted optimum is already single-user,
so the solver delegates and the restricted and unrestricted ergodic
problems coincide exactly.
"""
from __future__ import annotations

import numpy as np

from .errors import UnboundedSubproblemError, UsageError
from .fading import ChannelStateMac
from .perstate_mac import (StateAllocation, _allocation, _vec,
                           solve_state_case1, solve_states_case1)


def tdma_states_case1(H: np.ndarray, G: np.ndarray, lam, mu) -> np.ndarray:
    """Identical to the unrestricted case-1 solver."""
    return solve_states_case1(H, G, lam, mu)


def tdma_state_case1(state: ChannelStateMac, lam, mu):
    return solve_state_case1(state, lam, mu)


def _per_user_value(H, P, price):
    with np.errstate(invalid="ignore"):
        val = np.log1p(H * P) - price * P
    return np.where(np.isfinite(val), val, -np.inf)


def _pick(H, P, val):
    n, K = H.shape
    user = np.argmax(val, axis=1)
    rows = np.arange(n)
    out = np.zeros((n, K))
    out[rows, user] = P[rows, user]
    return out


def _ipc_caps(G, GAM):
    """Per-user tightest interference cap, +inf when unconstrained."""
    n, K, M = G.shape
    if M == 0:
        return np.full((n, K), np.inf)
    with np.errstate(divide="ignore"):
        return np.where(G > 0.0, GAM[:, None, :] / G, np.inf).min(axis=2)


def tdma_states_case2(H, G, lam, gamma) -> np.ndarray:
    """Best single user under per-state interference caps and transmit
    prices lam; lam broadcasts from (K,), gamma from (M,)."""
    n, K = H.shape
    M = G.shape[2]
    LAM = np.broadcast_to(np.asarray(lam, dtype=float), (n, K))
    GAM = np.broadcast_to(np.asarray(gamma, dtype=float), (n, M))
    caps = _ipc_caps(G, GAM)
    with np.errstate(divide="ignore", invalid="ignore"):
        wf = 1.0 / LAM - 1.0 / H
    wf = np.where(H > 0.0, np.where(LAM > 0.0, np.maximum(wf, 0.0), np.inf), 0.0)
    P = np.minimum(caps, wf)
    unbounded = np.isinf(P) & (H > 0.0)
    if np.any(unbounded):
        t, k = np.argwhere(unbounded)[0]
        raise UnboundedSubproblemError(
            "user has positive gain but zero transmit and interference price",
            state_index=int(t), user_index=int(k))
    P = np.where(H > 0.0, P, 0.0)
    return _pick(H, P, _per_user_value(H, P, LAM))


def tdma_state_case2(state: ChannelStateMac, lam, gamma_st) -> StateAllocation:
    lam = _vec(lam, state.K, "lam")
    gamma_st = _vec(gamma_st, state.M, "gamma_st")
    P = tdma_states_case2(state.h[None], state.g[None], lam, gamma_st)
    return _allocation(state.h, P[0])


def tdma_states_case3(H, G, mu, p_st) -> np.ndarray:
    """Best single user under power caps and interference prices mu."""
    n, K = H.shape
    W = G @ np.asarray(mu, dtype=float)
    caps = np.broadcast_to(np.asarray(p_st, dtype=float), (n, K))
    with np.errstate(divide="ignore", invalid="ignore"):
        wf = 1.0 / W - 1.0 / H
    wf = np.where(H > 0.0, np.where(W > 0.0, np.maximum(wf, 0.0), np.inf), 0.0)
    P = np.minimum(caps, wf)
    return _pick(H, P, _per_user_value(H, P, W))


def tdma_state_case3(state: ChannelStateMac, mu, p_st) -> StateAllocation:
    mu = _vec(mu, state.M, "mu")
    p_st = _vec(p_st, state.K, "p_st")
    P = tdma_states_case3(state.h[None], state.g[None], mu, p_st)
    return _allocation(state.h, P[0])


def tdma_states_case4(H, G, p_st, gamma) -> np.ndarray:
    """Best single user inside the per-state power polytope: each
    candidate transmits at its tightest cap, the largest h*p wins."""
    n, K = H.shape
    M = G.shape[2]
    GAM = np.broadcast_to(np.asarray(gamma, dtype=float), (n, M))
    caps = np.broadcast_to(np.asarray(p_st, dtype=float), (n, K))
    P = np.where(H > 0.0, np.minimum(caps, _ipc_caps(G, GAM)), 0.0)
    return _pick(H, P, H * P)


def tdma_state_case4(state: ChannelStateMac, p_st, gamma_st) -> StateAllocation:
    p_st = _vec(p_st, state.K, "p_st")
    gamma_st = _vec(gamma_st, state.M, "gamma_st")
    if np.any(p_st <= 0) or np.any(gamma_st <= 0):
        raise UsageError("p_st and gamma_st must be strictly positive")
    P = tdma_states_case4(state.h[None], state.g[None], p_st, gamma_st)
    return _allocation(state.h, P[0])
