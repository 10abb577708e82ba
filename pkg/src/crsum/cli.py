r"""Command-line front end.

`crsum run` computes ergodic sum-rate curves (built-in presets or a
single custom sweep) and writes one CSV per curve; identical inputs
produce byte-identical files. `crsum verify` runs self-check suites
(closed forms vs. grid oracle, KKT certificates, structural sparsity,
TDMA consistency, BC path agreement, a small duality sandwich) and
exits nonzero on any failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .capacity import (ergodic_capacity_bc, ergodic_capacity_mac,
                       fra_baseline_bc, fra_baseline_mac)
from .constraints import ConstraintCase, PowerBudget, db_to_linear
from .dual import DualPoint, dual_value_and_subgradient, ellipsoid_solve
from .errors import CrsumError, UsageError
from .fading import FadingModel, sample_bc_states, sample_mac_states
from .oracle import (case1_problem, case2_problem, case3_problem,
                     case4_problem, grid_state_oracle, saa_primal_oracle)
from . import perstate_bc, perstate_mac

DEFAULT_SAMPLES = 10_000
DEFAULT_SEED = 1


# ---------------------------------------------------------------------------
# run: curve specifications


@dataclass
class CurveSpec:
    stem: str
    channel: str            # "mac" or "bc"
    case: ConstraintCase
    mode: str               # "full", "tdma", or "fra"
    K: int
    M: int
    gamma: float
    # one entry per CSV row: display dBs plus the concrete budget
    points: list = field(default_factory=list)


def _grid(expr: str) -> list[float]:
    """Parse 'start:stop:step' (inclusive) or a comma list."""
    expr = expr.strip()
    if ":" in expr:
        parts = [float(x) for x in expr.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise UsageError(f"bad grid {expr!r}, want start:stop:step")
        start, stop, step = parts
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(max(n, 1))]
    return [float(x) for x in expr.split(",") if x.strip()]


def _mac_curve(stem, case, mode, K, M, gamma, p_dbs, tpc_scale=1.0):
    c = CurveSpec(stem=stem, channel="mac", case=case, mode=mode,
                  K=K, M=M, gamma=gamma)
    for db in p_dbs:
        budget = PowerBudget.symmetric(K, M, tpc_scale * db_to_linear(db), gamma)
        c.points.append({"P_dB": db, "Q_dB": None, "budget": budget})
    return c


def _bc_curve(stem, case, mode, K, M, gamma, q_dbs):
    c = CurveSpec(stem=stem, channel="bc", case=case, mode=mode,
                  K=K, M=M, gamma=gamma)
    for db in q_dbs:
        budget = PowerBudget(tpc=np.zeros(0), ipc=np.full(M, gamma),
                             bs_tpc=db_to_linear(db))
        c.points.append({"P_dB": None, "Q_dB": db, "budget": budget})
    return c


def _preset_fig3(cfg):
    """MAC, K=2, M=1: the four constraint cases across transmit power."""
    p_dbs = _grid(cfg.get("p_db", "-5:25:5"))
    gamma = float(cfg.get("gamma", 1.0))
    return [_mac_curve(f"fig3_{case.value}_full", case, "full", 2, 1, gamma, p_dbs)
            for case in ConstraintCase]


def _preset_fig4(cfg):
    """BC, K=5, M=2: the four constraint cases across base-station power."""
    q_dbs = _grid(cfg.get("q_db", "-5:25:5"))
    gamma = float(cfg.get("gamma", 1.0))
    return [_bc_curve(f"fig4_{case.value}_full", case, "full", 5, 2, gamma, q_dbs)
            for case in ConstraintCase]


def _preset_fig5(cfg):
    """MAC, K=2, M=1: TDMA restriction vs full transmission."""
    p_dbs = _grid(cfg.get("p_db", "-5:25:5"))
    gamma = float(cfg.get("gamma", 1.0))
    out = []
    for case in (ConstraintCase.II, ConstraintCase.III, ConstraintCase.IV):
        for mode in ("full", "tdma"):
            out.append(_mac_curve(f"fig5_{case.value}_{mode}", case, mode,
                                  2, 1, gamma, p_dbs))
    return out


def _preset_fig6(cfg):
    """MAC, K=4, M=2: TDMA restriction vs full transmission."""
    p_dbs = _grid(cfg.get("p_db", "-5:25:5"))
    gamma = float(cfg.get("gamma", 1.0))
    out = []
    for case in (ConstraintCase.II, ConstraintCase.III, ConstraintCase.IV):
        for mode in ("full", "tdma"):
            out.append(_mac_curve(f"fig6_{case.value}_{mode}", case, mode,
                                  4, 2, gamma, p_dbs))
    return out


def _preset_fig7(cfg):
    """MAC DRA vs FRA at matched total power, K in {2, 4}, M=2.

    The K=4 per-user budget is halved so both systems spend the same
    sum power; the FRA transmitter gets a K-times larger cap since it
    transmits a 1/K fraction of the time.
    """
    p_dbs = _grid(cfg.get("p_db", "-5:25:5"))
    gamma = float(cfg.get("gamma", 1.0))
    out = []
    for K, scale in ((2, 1.0), (4, 0.5)):
        out.append(_mac_curve(f"fig7K{K}_I_full", ConstraintCase.I, "full",
                              K, 2, gamma, p_dbs, tpc_scale=scale))
        out.append(_mac_curve(f"fig7K{K}_IV_fra", ConstraintCase.IV, "fra",
                              K, 2, gamma, p_dbs, tpc_scale=scale * K))
    return out


def _preset_fig8(cfg):
    """BC DRA vs FRA across the user count, Q fixed at 3 dB."""
    q_db = float(cfg.get("q_db", 3.0))
    gamma = float(cfg.get("gamma", 1.0))
    ks = [int(k) for k in cfg.get("k_sweep", "4,8,12,16,20").split(",")]
    out = []
    for M in (1, 4):
        for K in ks:
            out.append(_bc_curve(f"fig8M{M}_I_full_K{K:02d}", ConstraintCase.I,
                                 "full", K, M, gamma, [q_db]))
            out.append(_bc_curve(f"fig8M{M}_IV_fra_K{K:02d}", ConstraintCase.IV,
                                 "fra", K, M, gamma, [q_db]))
    return out


PRESETS = {
    "fig3": _preset_fig3,
    "fig4": _preset_fig4,
    "fig5": _preset_fig5,
    "fig6": _preset_fig6,
    "fig7": _preset_fig7,
    "fig8": _preset_fig8,
}


def _custom_curves(args):
    if not (args.channel and args.case and args.K):
        raise UsageError("custom runs need --channel, --case, and --K "
                         "(or use --preset)")
    case = ConstraintCase.from_label(args.case)
    gamma = args.gamma if args.gamma is not None else 1.0
    mode = args.mode or "full"
    K, M = args.K, args.M
    if args.channel == "mac":
        p_dbs = _grid(args.p_db or "0:20:5")
        return [_mac_curve(f"custom_{case.value}_{mode}", case, mode,
                           K, M, gamma, p_dbs)]
    q_dbs = _grid(args.q_db or "0:20:5")
    return [_bc_curve(f"custom_{case.value}_{mode}", case, mode,
                      K, M, gamma, q_dbs)]


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _run_curves(curves, samples, seed, out_dir, dump_convergence=False):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ensembles = {}
    written = []
    for curve in curves:
        key = (curve.channel, curve.K, curve.M, samples, seed)
        if key not in ensembles:
            model = FadingModel(K=curve.K, M=curve.M, n_states=samples, seed=seed)
            ensembles[key] = (sample_mac_states(model) if curve.channel == "mac"
                              else sample_bc_states(model))
        states = ensembles[key]
        rows = []
        last_result = None
        for pt in curve.points:
            budget = pt["budget"]
            if curve.channel == "mac":
                if curve.mode == "fra":
                    res = fra_baseline_mac(states, budget)
                else:
                    res = ergodic_capacity_mac(states, curve.case, budget,
                                               mode=curve.mode)
            else:
                if curve.mode == "fra":
                    res = fra_baseline_bc(states, budget)
                else:
                    res = ergodic_capacity_bc(states, curve.case, budget)
            last_result = res
            hist = [str(int(v)) for v in res.active_count_histogram]
            rows.append([curve.case.value, _fmt(pt["P_dB"]), _fmt(pt["Q_dB"]),
                         repr(float(curve.gamma)), repr(res.ergodic_sum_rate),
                         repr(res.rate_stderr), _fmt(res.gap),
                         repr(res.max_lt_violation)] + hist)
        path = out_dir / f"{curve.stem}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "P_dB", "Q_dB", "Gamma", "rate_nats",
                        "rate_stderr", "gap", "max_lt_viol"]
                       + [f"hist_{i}" for i in range(curve.K + 1)])
            w.writerows(rows)
        written.append(path)
        if dump_convergence and last_result is not None \
                and last_result.convergence is not None:
            last_result.convergence.write_csv(out_dir / f"{curve.stem}_conv.csv")
        print(f"wrote {path} ({len(rows)} rows)")
    return written


def _cmd_run(args) -> int:
    cfg = {}
    if args.config:
        parser = configparser.ConfigParser()
        read = parser.read(args.config)
        if not read:
            raise UsageError(f"config file {args.config!r} not found")
        if args.preset and parser.has_section(args.preset):
            cfg.update({k: v for k, v in parser.items(args.preset)})
        if parser.has_section("run"):
            base = dict(parser.items("run"))
            args.samples = args.samples or int(base.get("samples", 0)) or None
            args.seed = args.seed if args.seed is not None else (
                int(base["seed"]) if "seed" in base else None)
            args.out = args.out or base.get("out")
    samples = args.samples or DEFAULT_SAMPLES
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    out = args.out or "results"
    if args.p_db:
        cfg["p_db"] = args.p_db
    if args.q_db:
        cfg["q_db"] = args.q_db
    if args.gamma is not None:
        cfg["gamma"] = args.gamma

    if args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; "
                             f"choose from {sorted(PRESETS)}")
        curves = PRESETS[args.preset](cfg)
        if args.case:
            want = ConstraintCase.from_label(args.case)
            curves = [c for c in curves if c.case is want]
        if args.mode:
            curves = [c for c in curves if c.mode == args.mode]
        if not curves:
            raise UsageError("preset has no curves matching the filters")
    else:
        curves = _custom_curves(args)
    _run_curves(curves, samples, seed, out, dump_convergence=args.convergence)
    return 0


# ---------------------------------------------------------------------------
# verify: self-check suites


def _identity_solvers():
    return {
        "case1": perstate_mac.solve_state_case1,
        "case2": perstate_mac.solve_state_case2,
        "case3": perstate_mac.solve_state_case3,
        "case4": perstate_mac.solve_state_case4,
        "bc": perstate_bc.solve_state_bc,
    }


def _perturbed_solvers(name):
    """Wrap one solver with a deliberate 5% power error (for testing
    that the verify suites actually detect a broken solver)."""
    from .perstate_mac import StateAllocation

    solvers = _identity_solvers()

    def corrupt_alloc(alloc, h):
        p = alloc.p.copy()
        p[p > 0] *= 1.05
        return StateAllocation(p=p, active_set=alloc.active_set,
                               sum_rate_term=float(np.log1p(h @ p)))

    if name == "case1_power":
        real = solvers["case1"]
        solvers["case1"] = lambda s, lam, mu: (
            corrupt_alloc(real(s, lam, mu)[0], s.h), real(s, lam, mu)[1])
    elif name == "case2_power":
        real = solvers["case2"]
        solvers["case2"] = lambda s, lam, g: (
            corrupt_alloc(real(s, lam, g)[0], s.h), real(s, lam, g)[1])
    elif name == "case3_power":
        real = solvers["case3"]
        solvers["case3"] = lambda s, mu, p: (
            corrupt_alloc(real(s, mu, p)[0], s.h),) + real(s, mu, p)[1:]
    elif name == "bc_power":
        real = solvers["bc"]

        def bad_bc(s, case, lam, mu, budget):
            out = real(s, case, lam, mu, budget)
            return perstate_bc.BcStateAllocation(
                q=out.q * 1.05, user=out.user,
                sum_rate_term=float(np.log1p(s.h[out.user] * out.q * 1.05)))
        solvers["bc"] = bad_bc
    else:
        raise UsageError(f"unknown perturbation {name!r}")
    return solvers


def _random_mac_state(rng, K, M):
    from .fading import ChannelStateMac
    return ChannelStateMac(h=rng.exponential(1.0, K),
                           g=rng.exponential(1.0, (K, M)))


def _suite_perstate(solvers, rng, n_checks):
    """Closed forms and enumerations vs the grid oracle, with KKT audits."""
    results = []
    worst_obj = 0.0
    worst_kkt = 0.0
    for _ in range(n_checks):
        K = int(rng.integers(1, 4))
        M = int(rng.integers(1, 3))
        state = _random_mac_state(rng, K, M)
        lam = rng.uniform(0.2, 2.0, K)
        mu = rng.uniform(0.2, 2.0, M)
        caps = rng.uniform(0.3, 3.0, K)
        gam = rng.uniform(0.5, 2.0, M)

        alloc, rep = solvers["case1"](state, lam, mu)
        obj, upper, hs = case1_problem(state, lam, mu)
        _, ov = grid_state_oracle(obj, upper, hs, grid_step=1e-4)
        worst_obj = max(worst_obj, abs(float(obj(alloc.p[None])[0]) - ov))
        worst_kkt = max(worst_kkt, perstate_mac.kkt_report_case1(
            state.h, state.g, lam, mu, alloc.p).max_residual)

        alloc, rep = solvers["case2"](state, lam, gam)
        obj, upper, hs = case2_problem(state, lam, gam)
        _, ov = grid_state_oracle(obj, upper, hs, grid_step=1e-4)
        worst_obj = max(worst_obj, abs(float(obj(alloc.p[None])[0]) - ov))
        worst_kkt = max(worst_kkt, perstate_mac.kkt_report_case2(
            state.h, state.g, lam, gam, alloc.p,
            rep.multipliers["mu"]).max_residual)

        out = solvers["case3"](state, mu, caps)
        alloc = out[0]
        obj, upper, hs = case3_problem(state, mu, caps)
        _, ov = grid_state_oracle(obj, upper, hs, grid_step=1e-4)
        worst_obj = max(worst_obj, abs(float(obj(alloc.p[None])[0]) - ov))
        worst_kkt = max(worst_kkt, perstate_mac.kkt_report_case3(
            state.h, state.g, mu, caps, alloc.p).max_residual)

        alloc, rep = solvers["case4"](state, caps, gam)
        obj, upper, hs = case4_problem(state, caps, gam)
        _, ov = grid_state_oracle(obj, upper, hs, grid_step=1e-4)
        worst_obj = max(worst_obj, abs(float(obj(alloc.p[None])[0]) - ov))
        worst_kkt = max(worst_kkt, perstate_mac.kkt_report_case4(
            state.h, state.g, caps, gam, alloc.p, rep.multipliers["lambda"],
            rep.multipliers["mu"]).max_residual)

    results.append(("perstate objective vs grid oracle", worst_obj <= 2e-4,
                    f"worst |diff| = {worst_obj:.2e}"))
    results.append(("perstate KKT residuals", worst_kkt <= 1e-8,
                    f"worst residual = {worst_kkt:.2e}"))
    return results


def _suite_sparsity(solvers, rng, n_checks):
    """Structural sparsity of the per-state optima."""
    n = max(n_checks * 10, 500)
    K, M = 4, 2
    model = FadingModel(K=K, M=M, n_states=n, seed=int(rng.integers(1 << 31)))
    states = sample_mac_states(model)
    from .fading import mac_arrays
    H, G = mac_arrays(states)
    lam = rng.uniform(0.2, 1.0, K)
    mu = rng.uniform(0.2, 1.0, M)
    caps = rng.uniform(0.5, 2.0, K)
    gam = rng.uniform(0.5, 2.0, M)
    tol = perstate_mac.ACTIVE_TOL

    P1 = perstate_mac.solve_states_case1(H, G, lam, mu)
    ok1 = int(np.max((P1 > tol).sum(axis=1))) <= 1
    P2 = perstate_mac.solve_states_case2(H, G, lam, gam)
    ok2 = int(np.max((P2 > tol).sum(axis=1))) <= M + 1
    P3 = perstate_mac.solve_states_case3(H, G, mu, caps)
    interior = (P3 > tol) & (P3 < caps[None, :] - 1e-9)
    ok3 = int(np.max(interior.sum(axis=1))) <= 1
    return [
        ("case 1 single active user", ok1, f"checked {n} states"),
        ("case 2 at most M+1 active", ok2, f"checked {n} states"),
        ("case 3 at most one interior", ok3, f"checked {n} states"),
    ]


def _suite_tdma(solvers, rng, n_checks):
    """Single-user tests agree with the unrestricted solvers."""
    bad = 0
    checked = 0
    for _ in range(n_checks):
        K = int(rng.integers(2, 4))
        M = int(rng.integers(1, 3))
        state = _random_mac_state(rng, K, M)
        lam = rng.uniform(0.2, 2.0, K)
        mu = rng.uniform(0.2, 2.0, M)
        caps = rng.uniform(0.3, 3.0, K)
        gam = rng.uniform(0.5, 2.0, M)

        hit = perstate_mac.check_tdma_case2(state, lam, gam)
        if hit is not None:
            alloc, _ = solvers["case2"](state, lam, gam)
            want = np.zeros(K)
            want[hit[0]] = hit[1]
            checked += 1
            if not np.allclose(alloc.p, want, atol=1e-8):
                bad += 1
        hit = perstate_mac.check_tdma_case3(state, mu, caps)
        if hit is not None:
            out = solvers["case3"](state, mu, caps)
            want = np.zeros(K)
            want[hit[0]] = hit[1]
            checked += 1
            if not np.allclose(out[0].p, want, atol=1e-8):
                bad += 1
        hit = perstate_mac.check_tdma_case4(state, caps, gam)
        if hit is not None:
            alloc, _ = solvers["case4"](state, caps, gam)
            want = np.zeros(K)
            want[hit[0]] = hit[1]
            checked += 1
            if not np.allclose(alloc.p, want, atol=1e-8):
                bad += 1
    return [("tdma checks consistent with solvers", bad == 0,
             f"{checked} positives checked, {bad} mismatches")]


def _suite_bc(solvers, rng, n_checks):
    """Closed-form BC powers match the auxiliary-MAC route."""
    from .fading import ChannelStateBc
    worst = 0.0
    for _ in range(n_checks):
        K = int(rng.integers(1, 6))
        M = int(rng.integers(1, 3))
        state = ChannelStateBc(h=rng.exponential(1.0, K),
                               f=rng.exponential(1.0, M))
        budget = PowerBudget(tpc=np.zeros(0), ipc=rng.uniform(0.5, 2.0, M),
                             bs_tpc=float(rng.uniform(0.5, 3.0)))
        lam = float(rng.uniform(0.1, 2.0))
        mu = rng.uniform(0.1, 2.0, M)
        for case in ConstraintCase:
            a = solvers["bc"](state, case, lam, mu, budget)
            b = perstate_bc.bc_via_dual_mac(state, case, lam, mu, budget)
            worst = max(worst, abs(a.q - b.q))
    return [("bc closed form matches auxiliary MAC", worst <= 1e-8,
             f"worst |dq| = {worst:.2e}")]


def _suite_dual(solvers, rng, n_checks):
    """Small-instance duality sandwich."""
    model = FadingModel(K=2, M=1, n_states=8, seed=int(rng.integers(1 << 31)))
    states = sample_mac_states(model)
    budget = PowerBudget.symmetric(2, 1, 1.0, 0.8)
    results = []
    for case in (ConstraintCase.I, ConstraintCase.II, ConstraintCase.III):
        point, report, policy, _ = ellipsoid_solve(states, case, budget)
        _, lower = saa_primal_oracle(states, case, budget)
        gap = report.best_dual - lower
        rel = gap / max(report.best_dual, 1e-9)
        results.append((f"case {case.value} duality sandwich", rel <= 2e-3,
                        f"relative gap {rel:.2e}"))
    return results


SUITES = {
    "perstate": _suite_perstate,
    "sparsity": _suite_sparsity,
    "tdma": _suite_tdma,
    "bc": _suite_bc,
    "dual": _suite_dual,
}


def _cmd_verify(args) -> int:
    rng = np.random.Generator(np.random.Philox(key=args.seed))
    solvers = _perturbed_solvers(args.perturb) if args.perturb \
        else _identity_solvers()
    names = list(SUITES) if args.suite == "all" else [args.suite]
    for name in names:
        if name not in SUITES:
            raise UsageError(f"unknown suite {name!r}; choose from "
                             f"{sorted(SUITES)} or 'all'")
    failures = 0
    for name in names:
        for label, ok, detail in SUITES[name](solvers, rng, args.checks):
            print(f"{'PASS' if ok else 'FAIL'} [{name}] {label}: {detail}")
            failures += 0 if ok else 1
    print(f"verify: {failures} failure(s)")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="crsum",
        description="Ergodic sum-rate power control for spectrum-sharing "
                    "fading MAC/BC channels")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="compute rate curves and write CSVs")
    run.add_argument("--preset", help=f"one of {sorted(PRESETS)}")
    run.add_argument("--config", help="INI file with [run] and per-preset sections")
    run.add_argument("--channel", choices=["mac", "bc"])
    run.add_argument("--case", help="constraint case I, II, III, or IV")
    run.add_argument("--mode", choices=["full", "tdma", "fra"], default=None)
    run.add_argument("--K", type=int, help="number of secondary users")
    run.add_argument("--M", type=int, default=1, help="number of primary receivers")
    run.add_argument("--P-dB", dest="p_db", help="TPC grid, e.g. -5:25:5 or 0,10")
    run.add_argument("--Q-dB", dest="q_db", help="BC TPC grid in dB")
    run.add_argument("--gamma", type=float, default=None,
                     help="interference threshold (linear)")
    run.add_argument("--samples", type=int, default=None,
                     help=f"fading states (default {DEFAULT_SAMPLES})")
    run.add_argument("--seed", type=int, default=None,
                     help=f"ensemble seed (default {DEFAULT_SEED})")
    run.add_argument("--out", help="output directory (default results/)")
    run.add_argument("--convergence", action="store_true",
                     help="also dump the dual-loop trace per curve")
    run.set_defaults(func=_cmd_run)

    ver = sub.add_parser("verify", help="run self-check suites")
    ver.add_argument("--suite", default="all",
                     help=f"one of {sorted(SUITES)} or 'all'")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--checks", type=int, default=25,
                     help="random instances per suite")
    ver.add_argument("--perturb", help="deliberately corrupt one solver "
                     "(e.g. case1_power) to prove the suites catch it")
    ver.set_defaults(func=_cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CrsumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
