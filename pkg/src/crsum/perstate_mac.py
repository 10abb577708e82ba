r"""Per-fading-state optimal MAC power allocation.

Each constraint case turns, after dualizing whatever is long-term,
into a small concave program in the per-state power vector p >= 0:

  case 1:  max log(1+h.p) - lam.p - sum_m mu_m (g_m.p)      (no caps)
  case 2:  max log(1+h.p) - lam.p   s.t. g_m.p <= gamma_m
  case 3:  max log(1+h.p) - sum_m mu_m (g_m.p)  s.t. p <= p_st
  case 4:  max log(1+h.p)  s.t. p <= p_st, g_m.p <= gamma_m

Cases 1 and 3 have closed forms (a single best-ratio user; a
sorted-ratio cap-filling sweep). Cases 2 and 4 are solved exactly by
enumerating KKT active sets: every candidate returned has been checked
against the full first-order system, and since the programs are concave
with affine constraints, a consistent candidate is the global optimum.
All solvers are vectorized across fading states; the scalar operations
wrap the batch with n = 1 and attach a KKT certificate computed from
the returned multipliers.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .errors import SolverFailureError, UnboundedSubproblemError, UsageError
from .fading import ChannelStateMac

logger = logging.getLogger(__name__)

ACTIVE_TOL = 1e-9     # powers above this count as "user transmits"
_STRICT = 1e-9        # candidate accepted as an exact KKT point
_LOOSE = 1e-7         # fallback acceptance for near-degenerate states
_DET_RTOL = 1e-12     # singularity screen for active-set linear systems

# ---------------------------------------------------------------------------
# result types


@dataclass(frozen=True)
class StateAllocation:
    """Optimal per-state powers plus bookkeeping.

    active_set holds the 0-based indices of users with p above
    ACTIVE_TOL; sum_rate_term is log(1 + h.p) in nats.
    """

    p: np.ndarray
    active_set: tuple[int, ...]
    sum_rate_term: float


@dataclass(frozen=True)
class KktReport:
    """First-order certificate computed from returned multipliers.

    stationarity_residual: worst violation of the stationarity
    equation after assigning each user its (clipped-nonnegative)
    inactivity multiplier; a wrong user selection shows up here.
    complementary_slackness_residual: worst |multiplier * slack|.
    primal_infeasibility: worst constraint violation of p itself.
    multipliers: the per-state multipliers by name ("delta" always;
    "mu" for per-state interference caps, "lambda" for power caps).
    """

    stationarity_residual: float
    complementary_slackness_residual: float
    primal_infeasibility: float
    multipliers: dict

    @property
    def max_residual(self) -> float:
        return max(self.stationarity_residual,
                   self.complementary_slackness_residual,
                   self.primal_infeasibility)


@dataclass(frozen=True)
class UserOrdering:
    """Users sorted by decreasing h_k / (mu.g_k), and how many transmit."""

    pi: np.ndarray
    cardinality: int


def _allocation(h: np.ndarray, p: np.ndarray) -> StateAllocation:
    p = np.asarray(p, dtype=float)
    active = tuple(int(k) for k in np.flatnonzero(p > ACTIVE_TOL))
    return StateAllocation(p=p, active_set=active,
                           sum_rate_term=float(np.log1p(h @ p)))


def _as_state_arrays(state: ChannelStateMac):
    return state.h[None, :], state.g[None, :, :]


def _vec(x, size, name) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.shape != (size,):
        raise UsageError(f"{name} must have shape ({size},), got {v.shape}")
    if np.any(v < 0) or np.any(~np.isfinite(v)):
        raise UsageError(f"{name} must be finite and nonnegative")
    return v


# ---------------------------------------------------------------------------
# case 1: single-user water-filling against fixed prices


def solve_states_case1(H: np.ndarray, G: np.ndarray, lam, mu) -> np.ndarray:
    """Vectorized case-1 solver. lam is (K,) or (n,K); mu is (M,)."""
    n, K = H.shape
    mu = np.asarray(mu, dtype=float)
    W = np.broadcast_to(np.asarray(lam, dtype=float), H.shape) + G @ mu
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(H > 0.0, H / W, 0.0)
    sel = np.argmax(ratio, axis=1)
    rows = np.arange(n)
    rsel = ratio[rows, sel]
    if np.any(np.isinf(rsel)):
        t = int(np.flatnonzero(np.isinf(rsel))[0])
        raise UnboundedSubproblemError(
            "zero effective price for a user with positive gain",
            state_index=t, user_index=int(sel[t]))
    wsel = W[rows, sel]
    hsel = H[rows, sel]
    with np.errstate(divide="ignore"):
        psel = np.where(rsel > 1.0, 1.0 / wsel - 1.0 / hsel, 0.0)
    P = np.zeros_like(H)
    P[rows, sel] = psel
    return P


def kkt_report_case1(h, g, lam, mu, p) -> KktReport:
    c = 1.0 + h @ p
    need = lam + g @ mu - h / c
    delta = np.maximum(need, 0.0)
    stat = float(np.max(np.maximum(-need, 0.0), initial=0.0))
    cs = float(np.max(np.abs(delta * p), initial=0.0))
    primal = float(np.max(-p, initial=0.0))
    return KktReport(stationarity_residual=stat,
                     complementary_slackness_residual=cs,
                     primal_infeasibility=max(primal, 0.0),
                     multipliers={"delta": delta})


def solve_state_case1(state: ChannelStateMac, lam, mu):
    """Case-1 subproblem: at most one user transmits.

    The winner maximizes h_k / (lam_k + mu.g_k) and water-fills against
    its own aggregate price. Raises UnboundedSubproblemError when the
    winning user's price is exactly zero while its gain is positive.
    """
    lam = _vec(lam, state.K, "lam")
    mu = _vec(mu, state.M, "mu")
    H, G = _as_state_arrays(state)
    p = solve_states_case1(H, G, lam, mu)[0]
    return _allocation(state.h, p), kkt_report_case1(state.h, state.g, lam, mu, p)


# ---------------------------------------------------------------------------
# candidate bookkeeping for the enumerated cases


class _Pool:
    """Keeps, per state, the best strict KKT candidate (by objective)
    and the least-violating candidate overall (fallback)."""

    def __init__(self, n: int, K: int, M: int):
        self.strict_obj = np.full(n, -np.inf)
        self.strict_P = np.zeros((n, K))
        self.strict_MU = np.zeros((n, M))
        self.strict_LAM = np.zeros((n, K))
        self.loose_viol = np.full(n, np.inf)
        self.loose_P = np.zeros((n, K))
        self.loose_MU = np.zeros((n, M))
        self.loose_LAM = np.zeros((n, K))

    def offer(self, P, MU, LAM, viol, obj):
        strict = viol <= _STRICT
        take = strict & (obj > self.strict_obj)
        if np.any(take):
            self.strict_obj[take] = obj[take]
            self.strict_P[take] = P[take]
            self.strict_MU[take] = MU[take]
            self.strict_LAM[take] = LAM[take]
        take = viol < self.loose_viol
        if np.any(take):
            self.loose_viol[take] = viol[take]
            self.loose_P[take] = P[take]
            self.loose_MU[take] = MU[take]
            self.loose_LAM[take] = LAM[take]

    def resolve(self, what: str):
        have = np.isfinite(self.strict_obj)
        fallback = ~have
        if np.any(fallback):
            bad = self.loose_viol[fallback] > _LOOSE
            if np.any(bad):
                worst = float(np.min(self.loose_viol[fallback]))
                raise SolverFailureError(
                    f"{what}: no active set satisfied the KKT system "
                    f"(best violation {worst:.3e})", residual=worst)
            for arr, src in ((self.strict_P, self.loose_P),
                             (self.strict_MU, self.loose_MU),
                             (self.strict_LAM, self.loose_LAM)):
                arr[fallback] = src[fallback]
        np.maximum(self.strict_P, 0.0, out=self.strict_P)
        np.maximum(self.strict_MU, 0.0, out=self.strict_MU)
        np.maximum(self.strict_LAM, 0.0, out=self.strict_LAM)
        return self.strict_P, self.strict_MU, self.strict_LAM


def _screened_solve(Mat: np.ndarray, rhs: np.ndarray):
    """Batched linear solve with a determinant screen.

    Returns (x, bad): rows flagged bad were (near-)singular and their
    x is meaningless.
    """
    s = Mat.shape[-1]
    row_norms = np.sqrt((Mat * Mat).sum(axis=2))
    scale = row_norms.prod(axis=1)
    det = np.linalg.det(Mat)
    bad = ~(np.abs(det) > _DET_RTOL * scale)
    if np.any(bad):
        Mat = np.where(bad[:, None, None], np.eye(s), Mat)
    x = np.linalg.solve(Mat, rhs[..., None])[..., 0]
    bad |= ~np.all(np.isfinite(x), axis=1)
    return x, bad


def _rel_neg(x: np.ndarray) -> np.ndarray:
    """Per-row worst negativity of x, scaled by the row magnitude."""
    if x.shape[1] == 0:
        return np.zeros(x.shape[0])
    scale = 1.0 + np.max(np.abs(x), axis=1)
    return np.maximum(-x.min(axis=1), 0.0) / scale


# ---------------------------------------------------------------------------
# case 2: water-filling under per-state interference caps


def _case2_structures(K: int, M: int):
    out = []
    for a in range(M + 1):
        for A in itertools.combinations(range(M), a):
            for js in ({1} if a == 0 else {a, a + 1}):
                if js < 1 or js > K:
                    continue
                for J in itertools.combinations(range(K), js):
                    out.append((A, J))
    return out


def solve_states_case2(H: np.ndarray, G: np.ndarray, lam, gamma,
                       want_multipliers: bool = False):
    """Vectorized case-2 solver via KKT active-set enumeration.

    lam broadcasts from (K,) or (n,K); gamma from (M,) or (n,M). At
    most M+1 users are active in any returned allocation because every
    enumerated support satisfies |J| <= |A| + 1.
    """
    n, K = H.shape
    M = G.shape[2]
    LAM = np.broadcast_to(np.asarray(lam, dtype=float), (n, K))
    GAM = np.broadcast_to(np.asarray(gamma, dtype=float), (n, M))

    # Unbounded exactly when some user sees no price at all: lam_k = 0,
    # g_k = 0 across primaries, h_k > 0.
    free = (LAM <= 0.0) & (H > 0.0) & np.all(G <= 0.0, axis=2)
    if np.any(free):
        t, k = np.argwhere(free)[0]
        raise UnboundedSubproblemError(
            "user has positive gain but zero transmit and interference price",
            state_index=int(t), user_index=int(k))

    pool = _Pool(n, K, M)
    zero_MU = np.zeros((n, M))
    zero_LAM = np.zeros((n, K))

    # p = 0 candidate: needs lam_k >= h_k for every user (delta >= 0).
    viol0 = np.maximum((H - LAM).max(axis=1), 0.0) / (1.0 + np.max(LAM, axis=1))
    pool.offer(np.zeros((n, K)), zero_MU, zero_LAM, viol0, np.zeros(n))

    structures = _case2_structures(K, M)
    if len(structures) > 300_000:
        raise UsageError("case-2 active-set enumeration too large for this K, M")

    rows = np.arange(n)
    for A, J in structures:
        A = list(A)
        J = list(J)
        a, js = len(A), len(J)
        GJA = G[:, J][:, :, A]                      # (n, js, a)
        hJ = H[:, J]
        lamJ = LAM[:, J]

        if js == a + 1:
            # unknowns (mu_A, t): stationarity rows over J
            Mat = np.concatenate([GJA, -hJ[:, :, None]], axis=2)
            x, bad = _screened_solve(Mat, -lamJ)
            mu_A = x[:, :a]
            t = x[:, a]
            ok_t = (t > 1e-14) & (t <= 1.0 + 1e-9)
            # powers: interference tightness on A plus the sum-rate coupling
            Mat2 = np.concatenate([np.swapaxes(GJA, 1, 2), hJ[:, None, :]], axis=1)
            with np.errstate(divide="ignore", over="ignore"):
                rhs2 = np.concatenate(
                    [GAM[:, A], (1.0 / np.where(ok_t, t, 1.0) - 1.0)[:, None]], axis=1)
            pJ, bad2 = _screened_solve(Mat2, rhs2)
            bad |= bad2 | ~ok_t
        else:
            # |J| == |A| >= 1: powers pinned by tightness alone
            Mat2 = np.swapaxes(GJA, 1, 2)
            pJ, bad = _screened_solve(Mat2, GAM[:, A])
            t = 1.0 / (1.0 + np.einsum("nk,nk->n", hJ, pJ))
            mu_A, bad2 = _screened_solve(GJA, hJ * t[:, None] - lamJ)
            bad |= bad2

        P = np.zeros((n, K))
        P[:, J] = pJ
        MU = np.zeros((n, M))
        MU[:, A] = mu_A

        # dual feasibility for users off the support
        slack_need = LAM + np.einsum("nkm,nm->nk", G, MU) - H * t[:, None]
        slack_need[:, J] = 0.0
        dual_viol = np.maximum(-slack_need.min(axis=1), 0.0) \
            / (1.0 + np.max(LAM, axis=1) + np.abs(mu_A).sum(axis=1))
        # interference feasibility off the active primaries
        I = np.einsum("nk,nkm->nm", P, G)
        if M:
            over = np.maximum((I - GAM) / GAM, 0.0)
            if a:
                over[:, A] = 0.0
            feas_viol = over.max(axis=1)
        else:
            feas_viol = np.zeros(n)

        viol = np.max(np.stack([
            _rel_neg(pJ),
            _rel_neg(mu_A) if a else np.zeros(n),
            dual_viol,
            feas_viol,
        ]), axis=0)
        viol = np.where(bad, np.inf, viol)

        obj = np.log1p(np.einsum("nk,nk->n", hJ, np.maximum(pJ, 0.0))) \
            - np.einsum("nk,nk->n", lamJ, np.maximum(pJ, 0.0))
        obj = np.where(bad | ~np.isfinite(obj), -np.inf, obj)
        pool.offer(P, MU, zero_LAM, viol, obj)

    P, MU, _ = pool.resolve("case-2 state solver")
    if want_multipliers:
        return P, MU
    return P


def kkt_report_case2(h, g, lam, gamma, p, mu_state) -> KktReport:
    c = 1.0 + h @ p
    need = lam + g @ mu_state - h / c
    delta = np.maximum(need, 0.0)
    stat = float(np.max(np.maximum(-need, 0.0), initial=0.0))
    slack = g.T @ p - gamma
    cs = max(float(np.max(np.abs(delta * p), initial=0.0)),
             float(np.max(np.abs(mu_state * slack), initial=0.0)))
    primal = max(float(np.max(-p, initial=0.0)),
                 float(np.max(slack, initial=0.0)))
    return KktReport(stationarity_residual=stat,
                     complementary_slackness_residual=cs,
                     primal_infeasibility=max(primal, 0.0),
                     multipliers={"delta": delta, "mu": mu_state})


def solve_state_case2(state: ChannelStateMac, lam, gamma_st):
    """Case-2 subproblem: at most M+1 users transmit."""
    lam = _vec(lam, state.K, "lam")
    gamma_st = _vec(gamma_st, state.M, "gamma_st")
    if np.any(gamma_st <= 0):
        raise UsageError("gamma_st must be strictly positive")
    H, G = _as_state_arrays(state)
    P, MU = solve_states_case2(H, G, lam, gamma_st, want_multipliers=True)
    p, mu_state = P[0], MU[0]
    return (_allocation(state.h, p),
            kkt_report_case2(state.h, state.g, lam, gamma_st, p, mu_state))


def check_tdma_case2(state: ChannelStateMac, lam, gamma_st):
    """Single-user optimality test for case 2.

    Returns (user, power) when one user transmitting alone is provably
    optimal, else None. Condition set one covers the water-level-
    limited regime, set two the interference-limited regime. If several
    users satisfy set two (a boundary tie), the lowest index wins and
    the ambiguity is logged.
    """
    lam = _vec(lam, state.K, "lam")
    gamma_st = _vec(gamma_st, state.M, "gamma_st")
    h, g = state.h, state.g
    K, M = state.K, state.M

    with np.errstate(divide="ignore", invalid="ignore"):
        cap = np.where(g > 0.0, gamma_st[None, :] / g, np.inf).min(axis=1) \
            if M else np.full(K, np.inf)
        wf = np.where(h > 0.0, np.where(lam > 0.0, 1.0 / lam, np.inf)
                      - np.where(h > 0.0, 1.0 / h, np.inf), -np.inf)
        hl = np.where(lam > 0.0, h / lam, np.where(h > 0.0, np.inf, 0.0))

    # set one: water level within every cap, and best water-filling ratio
    i = int(np.argmax(hl))
    if np.isinf(wf[i]) and np.isinf(cap[i]):
        raise UnboundedSubproblemError(
            "user has positive gain but zero transmit and interference price",
            state_index=0, user_index=i)
    if wf[i] <= cap[i] and np.all(hl[i] >= hl):
        return i, float(max(wf[i], 0.0))

    # set two: the cap binds and undercuts every rival's price advantage
    winners = []
    for i in range(K):
        if M == 0 or not np.isfinite(cap[i]) or cap[i] <= 0:
            continue
        if not (wf[i] > cap[i]):
            continue
        m = int(np.argmin(np.where(g[i] > 0.0, gamma_st / g[i], np.inf)))
        gim = g[i, m]
        lhs = (h * gim - h[i] * g[:, m]) * gim / (gim + h[i] * gamma_st[m])
        rhs = lam * gim - lam[i] * g[:, m]
        mask = np.ones(K, dtype=bool)
        mask[i] = False
        if np.all(lhs[mask] <= rhs[mask] + 1e-12):
            winners.append((i, float(gamma_st[m] / gim)))
    if winners:
        if len(winners) > 1:
            logger.warning("check_tdma_case2: %d users satisfy the boundary "
                           "condition set; returning the lowest index",
                           len(winners))
        return winners[0]
    return None


# ---------------------------------------------------------------------------
# case 3: capped water-filling against interference prices


def solve_states_case3(H: np.ndarray, G: np.ndarray, mu, p_st) -> np.ndarray:
    """Vectorized case-3 closed form (sorted-ratio cap sweep)."""
    n, K = H.shape
    mu = np.asarray(mu, dtype=float)
    p_st = np.asarray(p_st, dtype=float)
    W = G @ mu
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(H > 0.0, np.where(W > 0.0, H / W, np.inf), 0.0)
    order = np.argsort(-ratio, axis=1, kind="stable")
    rs = np.take_along_axis(ratio, order, axis=1)
    hs = np.take_along_axis(H, order, axis=1)
    Ps = np.take_along_axis(np.broadcast_to(p_st, (n, K)), order, axis=1)
    filled = np.cumsum(hs * Ps, axis=1)
    prev = np.concatenate([np.zeros((n, 1)), filled[:, :-1]], axis=1)
    ok = rs > 1.0 + prev
    cnt = np.cumprod(ok, axis=1).sum(axis=1)

    rows = np.arange(n)
    last = np.clip(cnt - 1, 0, K - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        part = (rs[rows, last] - 1.0 - prev[rows, last]) / hs[rows, last]
    part = np.where(np.isnan(part), 0.0, part)
    p_sorted = np.where(np.arange(K)[None, :] < (cnt - 1)[:, None], Ps, 0.0)
    lastpos = (np.arange(K)[None, :] == (cnt - 1)[:, None]) & (cnt > 0)[:, None]
    p_sorted = p_sorted + np.where(lastpos, np.minimum(Ps, part[:, None]), 0.0)
    P = np.zeros((n, K))
    np.put_along_axis(P, order, p_sorted, axis=1)
    return P


def kkt_report_case3(h, g, mu, p_st, p) -> KktReport:
    c = 1.0 + h @ p
    w = g @ mu
    capped = p >= p_st - 1e-12 * (1.0 + p_st)
    lam_state = np.where(capped, np.maximum(h / c - w, 0.0), 0.0)
    need = w + lam_state - h / c
    delta = np.maximum(need, 0.0)
    stat = float(np.max(np.maximum(-need, 0.0), initial=0.0))
    cs = max(float(np.max(np.abs(delta * p), initial=0.0)),
             float(np.max(np.abs(lam_state * (p - p_st)), initial=0.0)))
    primal = max(float(np.max(-p, initial=0.0)),
                 float(np.max(p - p_st, initial=0.0)))
    return KktReport(stationarity_residual=stat,
                     complementary_slackness_residual=cs,
                     primal_infeasibility=max(primal, 0.0),
                     multipliers={"delta": delta, "lambda": lam_state})


def solve_state_case3(state: ChannelStateMac, mu, p_st):
    """Case-3 subproblem: caps fill in ratio order, at most one user
    sits strictly inside its cap."""
    mu = _vec(mu, state.M, "mu")
    p_st = _vec(p_st, state.K, "p_st")
    if np.any(p_st <= 0):
        raise UsageError("p_st must be strictly positive")
    H, G = _as_state_arrays(state)
    p = solve_states_case3(H, G, mu, p_st)[0]
    w = state.g @ mu
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(state.h > 0.0, np.where(w > 0.0, state.h / w, np.inf), 0.0)
    pi = np.argsort(-ratio, kind="stable")
    cardinality = int(np.sum(p > ACTIVE_TOL))
    return (_allocation(state.h, p),
            kkt_report_case3(state.h, state.g, mu, p_st, p),
            UserOrdering(pi=pi, cardinality=cardinality))


def check_tdma_case3(state: ChannelStateMac, mu, p_st):
    """Single-user optimality test for case 3 (needs K >= 2).

    Returns (user, power) when the best-ratio user alone is optimal:
    its filled cap must already price out the runner-up.
    """
    if state.K < 2:
        raise UsageError("check_tdma_case3 needs at least two users")
    mu = _vec(mu, state.M, "mu")
    p_st = _vec(p_st, state.K, "p_st")
    h, g = state.h, state.g
    w = g @ mu
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(h > 0.0, np.where(w > 0.0, h / w, np.inf), 0.0)
    pi = np.argsort(-ratio, kind="stable")
    first, second = int(pi[0]), int(pi[1])
    if 1.0 + h[first] * p_st[first] >= ratio[second]:
        with np.errstate(divide="ignore"):
            wf = (1.0 / w[first] if w[first] > 0 else np.inf) \
                - (1.0 / h[first] if h[first] > 0 else np.inf)
        return first, float(min(p_st[first], max(wf, 0.0)))
    return None


# ---------------------------------------------------------------------------
# case 4: rate maximization inside the per-state power polytope


def _case4_structures(K: int, M: int):
    out = []
    users = range(K)
    for a in range(1, min(K, M) + 1):
        for A in itertools.combinations(range(M), a):
            for B in itertools.combinations(users, a):
                rest = [k for k in users if k not in B]
                for r in range(len(rest) + 1):
                    for U in itertools.combinations(rest, r):
                        out.append((A, B, U))
    return out


def solve_states_case4(H: np.ndarray, G: np.ndarray, p_st, gamma,
                       want_multipliers: bool = False):
    """Vectorized case-4 solver via KKT active-set enumeration.

    Candidate structures pick which interference caps bind (A), which
    users sit strictly between 0 and their cap (B, |B| = |A|), and
    which sit at their cap (U).
    """
    n, K = H.shape
    M = G.shape[2]
    p_st = np.asarray(p_st, dtype=float)
    GAM = np.broadcast_to(np.asarray(gamma, dtype=float), (n, M))
    caps = np.broadcast_to(p_st, (n, K))

    pool = _Pool(n, K, M)
    zero_MU = np.zeros((n, M))

    # no interference cap binding: every user with positive gain
    # transmits at full power, priced by its own cap multiplier
    P0 = np.where(H > 0.0, caps, 0.0)
    sumh0 = np.einsum("nk,nk->n", H, P0)
    I0 = np.einsum("nk,nkm->nm", P0, G)
    over0 = np.maximum((I0 - GAM) / GAM, 0.0).max(axis=1) if M else np.zeros(n)
    LAM0 = H / (1.0 + sumh0)[:, None]
    pool.offer(P0, zero_MU, LAM0, over0, np.log1p(sumh0))

    structures = _case4_structures(K, M)
    if len(structures) > 300_000:
        raise UsageError("case-4 active-set enumeration too large for this K, M")

    for A, B, U in structures:
        A, B, U = list(A), list(B), list(U)
        a = len(A)
        Z = [k for k in range(K) if k not in B and k not in U]
        GBA = G[:, B][:, :, A]                    # (n, a, a)
        rhs = GAM[:, A] - (np.einsum("nk,nkm->nm", caps[:, U], G[:, U][:, :, A])
                           if U else 0.0)
        pB, bad = _screened_solve(np.swapaxes(GBA, 1, 2), rhs)
        sumh = np.einsum("nk,nk->n", H[:, B], pB) + \
            (np.einsum("nk,nk->n", H[:, U], caps[:, U]) if U else 0.0)
        t = 1.0 / (1.0 + sumh)
        mu_A, bad2 = _screened_solve(GBA, H[:, B] * t[:, None])
        bad |= bad2

        P = np.zeros((n, K))
        P[:, B] = pB
        if U:
            P[:, U] = caps[:, U]
        MU = np.zeros((n, M))
        MU[:, A] = mu_A
        LAM = np.zeros((n, K))
        price = np.einsum("nkm,nm->nk", G, MU)
        if U:
            LAM[:, U] = H[:, U] * t[:, None] - price[:, U]

        checks = [_rel_neg(pB),
                  _rel_neg((caps[:, B] - pB)),
                  _rel_neg(mu_A)]
        if U:
            checks.append(_rel_neg(LAM[:, U]))
        if Z:
            delta_Z = price[:, Z] - H[:, Z] * t[:, None]
            checks.append(_rel_neg(delta_Z))
        I = np.einsum("nk,nkm->nm", P, G)
        over = np.maximum((I - GAM) / GAM, 0.0)
        over[:, A] = 0.0
        checks.append(over.max(axis=1))
        viol = np.max(np.stack(checks), axis=0)
        viol = np.where(bad, np.inf, viol)
        with np.errstate(invalid="ignore"):
            obj = np.log1p(np.maximum(sumh, -0.5))
        obj = np.where(bad | ~np.isfinite(obj), -np.inf, obj)
        pool.offer(P, MU, LAM, viol, obj)

    P, MU, LAM = pool.resolve("case-4 state solver")
    np.minimum(P, caps, out=P)
    if want_multipliers:
        return P, LAM, MU
    return P


def kkt_report_case4(h, g, p_st, gamma, p, lam_state, mu_state) -> KktReport:
    c = 1.0 + h @ p
    need = lam_state + g @ mu_state - h / c
    delta = np.maximum(need, 0.0)
    stat = float(np.max(np.maximum(-need, 0.0), initial=0.0))
    slack = g.T @ p - gamma
    cs = max(float(np.max(np.abs(delta * p), initial=0.0)),
             float(np.max(np.abs(lam_state * (p - p_st)), initial=0.0)),
             float(np.max(np.abs(mu_state * slack), initial=0.0)) if gamma.size else 0.0)
    primal = max(float(np.max(-p, initial=0.0)),
                 float(np.max(p - p_st, initial=0.0)),
                 float(np.max(slack, initial=0.0)) if gamma.size else 0.0)
    return KktReport(stationarity_residual=stat,
                     complementary_slackness_residual=cs,
                     primal_infeasibility=max(primal, 0.0),
                     multipliers={"delta": delta, "lambda": lam_state,
                                  "mu": mu_state})


def solve_state_case4(state: ChannelStateMac, p_st, gamma_st):
    """Case-4 subproblem: maximize the state's sum rate inside the box
    intersected with the interference caps."""
    p_st = _vec(p_st, state.K, "p_st")
    gamma_st = _vec(gamma_st, state.M, "gamma_st")
    if np.any(p_st <= 0) or np.any(gamma_st <= 0):
        raise UsageError("p_st and gamma_st must be strictly positive")
    H, G = _as_state_arrays(state)
    P, LAM, MU = solve_states_case4(H, G, p_st, gamma_st, want_multipliers=True)
    p, lam_state, mu_state = P[0], LAM[0], MU[0]
    return (_allocation(state.h, p),
            kkt_report_case4(state.h, state.g, p_st, gamma_st, p,
                             lam_state, mu_state))


def check_tdma_case4(state: ChannelStateMac, p_st, gamma_st):
    """Single-user optimality test for case 4.

    User i transmitting alone at its tightest interference cap is
    optimal iff that cap undercuts its power cap and i carries the best
    gain ratio h_i / g_{i,m'} at its own critical primary m'.
    """
    p_st = _vec(p_st, state.K, "p_st")
    gamma_st = _vec(gamma_st, state.M, "gamma_st")
    h, g = state.h, state.g
    for i in range(state.K):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(g[i] > 0.0, gamma_st / g[i], np.inf)
        m = int(np.argmin(ratios))
        if not np.isfinite(ratios[m]):
            continue
        power = float(ratios[m])
        if power > p_st[i] * (1.0 + 1e-12):
            continue
        gim = g[i, m]
        if np.all(h[i] / gim >= h / np.maximum(g[:, m], 1e-300) - 1e-12):
            return i, power
    return None
