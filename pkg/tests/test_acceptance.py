"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed together in the
terminal summary (see conftest.py). Run on its own with

    pytest tests/test_acceptance.py -v
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from wdnpse import data_path, grid_network, read_inp
from wdnpse.hydraulics import HydraulicState, resistance_gpm, solve_operating_point
from wdnpse.lab import (
    compare, histogram_sup_error, ks_normality_test, pipe_headloss_pdf, run_mcs,
    sample_linearized, source_impact_sweep,
)
from wdnpse.linearization import assemble_system, rank_check
from wdnpse.network import Valve, ValveKind, ValveStatus, validate_topology
from wdnpse.pse import run_algorithm1
from wdnpse.scenario import SourceSpec, scenario_from_dict

RESULTS = {}

ME_20_20_1 = {"demand": {"default": {"me_percent": 20}},
              "roughness": {"default": {"me_percent": 20}},
              "noise": {"default": {"me_percent": 1}}}


def check(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


@pytest.fixture(scope="module")
def grid():
    net = grid_network()
    return net, scenario_from_dict(ME_20_20_1, net)


def test_c01_three_node_variances(three_node, three_scenario):
    t = time.perf_counter()
    (res,) = run_algorithm1(three_node, three_scenario)
    dt = time.perf_counter() - t
    target = {"q:PU12": 0.16, "q:P23": 55.44, "h:J2": 0.60}
    rel = {k: abs(res.var(k) - v) / v for k, v in target.items()}
    got = ", ".join(f"Var({k})={res.var(k):.4g}" for k in target)
    check(1, max(rel.values()) <= 0.15 and dt < 1.0,
          f"{got}; worst rel dev {max(rel.values()):.1%}; {dt * 1e3:.1f} ms")


def test_c02_three_node_vs_mcs(three_node, three_scenario):
    t = time.perf_counter()
    (res,) = run_algorithm1(three_node, three_scenario)
    rep = compare(res, run_mcs(three_node, three_scenario, 1000, seed=1))
    dt = time.perf_counter() - t
    check(2, rep.max_re <= 5.0 and dt < 30.0,
          f"max RE {rep.max_re:.2f}% mean RE {rep.mean_re:.2f}% over {np.isfinite(rep.re).sum()} states; {dt:.1f} s")


def test_c03_eight_node_vs_mcs(eight_node, eight_scenario):
    t = time.perf_counter()
    (res,) = run_algorithm1(eight_node, eight_scenario, 1)
    rep = compare(res, run_mcs(eight_node, eight_scenario, 1000, seed=0))
    dt = time.perf_counter() - t
    n = int(np.isfinite(rep.re).sum())
    check(3, rep.mean_re <= 5.0 and n == 16 and dt < 60.0,
          f"mean RE {rep.mean_re:.2f}% max RE {rep.max_re:.2f}% over {n} states; {dt:.1f} s")


def test_c04_weight_transition(three_node, overdetermined):
    weights = (10.0, 1.0, 0.3, 0.1, 0.03, 0.01, 0.001)
    sig = [run_algorithm1(three_node, overdetermined.replace(row_weights={"mass:J2": w}))[0].std("q:P23")
           for w in weights]
    monotone = all(a > b for a, b in zip(sig, sig[1:]))
    final = abs(sig[-1] - np.sqrt(11.50)) / np.sqrt(11.50)
    check(4, monotone and final <= 0.15,
          f"sigma(q23) {sig[0]:.3f} -> {sig[-1]:.3f} (target {np.sqrt(11.5):.3f}, dev {final:.1%}); monotone={monotone}")


def test_c05_reconstruction(three_node, three_scenario, eight_node, eight_scenario, valve_net, valve_scenario, grid):
    worst = 0.0
    cases = [(three_node, three_scenario, 1), (eight_node, eight_scenario, 24), (valve_net, valve_scenario, 24),
             (grid[0], grid[1], 1)]
    for net, sc, T in cases:
        for res in run_algorithm1(net, sc, T):
            A = res.system.A.toarray()
            Kbb = res.K_bb if np.ndim(res.K_bb) == 2 else np.diag(res.K_bb)
            worst = max(worst, np.linalg.norm(A @ res.K @ A.T - Kbb) / np.linalg.norm(Kbb))
    check(5, worst < 1e-10, f"worst relative residual {worst:.2e} over {sum(c[2] for c in cases)} systems")


def test_c06_rank(three_node, eight_node, valve_net, grid):
    ranks = []
    for net in (three_node, eight_node, valve_net, grid[0]):
        rep = rank_check(assemble_system(net, solve_operating_point(net)))
        ranks.append(rep.full_rank and rep.numeric_rank == net.n_x)
    extra = Valve("FCV34b", "J3", "J4", ValveKind.FCV, 500.0, 8 / 12, ValveStatus.OPEN)
    broken = valve_net.replace(valves=valve_net.valves + (extra,))
    topo = validate_topology(broken, {"FCV34": ValveStatus.OPEN})
    detected = "open-valve-loop" in topo.codes()
    check(6, all(ranks) and detected,
          f"full rank {ranks} (grid n_x={grid[0].n_x}); parallel open valves detected={detected}")


def test_c07_valve_semantics(valve_net, valve_scenario):
    counts = {"fcv": 0, "prv": 0, "open": 0}
    bad = []
    for res in run_algorithm1(valve_net, valve_scenario):
        vs = res.state.valve_states
        k = res.steps[0]
        if vs["FCV34"][0] is ValveStatus.ACTIVE:
            counts["fcv"] += 1
            if not (res.var("q:FCV34") < 1e-20 and abs(res.value("q:FCV34") - 500.0) < 1e-9):
                bad.append(f"FCV@{k}")
        else:
            counts["open"] += 1
            if abs(res.var("h:J3") + res.var("h:J4") - 2 * res.cov("h:J3", "h:J4")) > 1e-9:
                bad.append(f"FCV-open@{k}")
        if vs["PRV59"][0] is ValveStatus.ACTIVE:
            counts["prv"] += 1
            if not (res.var("h:J9") < 1e-20 and abs(res.value("h:J9") - 815.0) < 1e-4):
                bad.append(f"PRV@{k}")
        else:
            counts["open"] += 1
            if abs(res.var("h:J5") + res.var("h:J9") - 2 * res.cov("h:J5", "h:J9")) > 1e-9:
                bad.append(f"PRV-open@{k}")
    check(7, not bad and all(counts.values()), f"valve-steps checked {counts}; violations {bad or 'none'}")


def test_c08_distributions(three_node, three_scenario, eight_node, eight_scenario):
    failed = []
    for name, net, sc in (("3-node", three_node, three_scenario), ("8-node", eight_node, eight_scenario)):
        X = sample_linearized(net, sc, 1000, seed=7).X
        for j, lab in enumerate(net.state_labels()):
            if X[:, j].std() > 1e-9 and not ks_normality_test(X[:, j], 0.01).passed:
                failed.append(f"{name}:{lab}")
    # nonlinear head loss of the most uncertain 8-node pipe, flow drawn from its PSE marginal
    (res,) = run_algorithm1(eight_node, eight_scenario, 1)
    pipe = next(p for p in eight_node.pipes if p.id == "P78")
    R, mu, sd = resistance_gpm(pipe), res.value("q:P78"), res.std("q:P78")
    q = np.random.default_rng(8).normal(mu, sd, 10**5)
    dh = R * q * np.abs(q) ** 0.852
    edges = np.linspace(np.percentile(dh, 0.1), np.percentile(dh, 99.9), 41)
    sup = histogram_sup_error(dh, lambda d: pipe_headloss_pdf(R, 1.852, (mu, sd), d), edges)
    ks = ks_normality_test(dh, 0.01)
    check(8, not failed and sup < 0.02 and not ks.passed,
          f"linearized KS failures {failed or 'none'}; P78 head-loss sup-norm {sup:.4f}, "
          f"KS D={ks.statistic:.4f} vs crit {ks.critical:.4f} (normality rejected={not ks.passed})")


def test_c09_source_ordering(eight_node, eight_scenario):
    grid = {"roughness": {"values": [30.0]}, "demand": {"values": [30.0]}, "noise": {"values": [5.0]}}
    table = source_impact_sweep(eight_node, eight_scenario, grid, isolated=True)
    c, d, v = (table.mean_sigma(s, me) for s, me in (("roughness", 30.0), ("demand", 30.0), ("noise", 5.0)))
    check(9, c > d > v, f"mean sigma c30={c:.3f} d30={d:.3f} v5={v:.4f}")


def test_c10_scalability(grid):
    net, sc = grid
    t = time.perf_counter()
    (res,) = run_algorithm1(net, sc, 1)
    t_pse = time.perf_counter() - t
    t = time.perf_counter()
    run_mcs(net, sc, 1000, seed=0)
    t_mcs = time.perf_counter() - t
    n_comp = net.n_x  # one state per node and per link
    check(10, t_pse < 1.0 and t_mcs >= 10 * t_pse,
          f"{n_comp} components: PSE {t_pse:.3f} s, MCS(1000) {t_mcs:.2f} s, ratio {t_mcs / t_pse:.0f}x")


def test_c11_distribution_mix(eight_node, eight_scenario):
    (res,) = run_algorithm1(eight_node, eight_scenario, 1)
    parts, ok = [], True
    for family in ("uniform", "laplace"):
        sc = eight_scenario.replace(demand_default=replace(eight_scenario.demand_default, distribution=family))
        rep = compare(res, run_mcs(eight_node, sc, 1000, seed=0))
        ok &= rep.mean_re <= 5.0
        parts.append(f"{family}: mean RE {rep.mean_re:.2f}% max {rep.max_re:.2f}%")
    check(11, ok, "; ".join(parts))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
