"""Command-line interface: ``wdnpse <command> ...``.

Exit codes: 0 success, 2 input error, 3 model or rank error, 4 numeric
failure. Every command writes its outputs plus ``manifest.json`` into the
run directory given by ``--out``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import (
    ConvergenceError, DomainError, InpError, NumericError, RankDeficiencyError,
    ScenarioError, TopologyError,
)

EXIT_OK, EXIT_INPUT, EXIT_MODEL, EXIT_NUMERIC = 0, 2, 3, 4


@dataclass
class RunManifest:
    command: str
    argv: list
    inputs: dict = field(default_factory=dict)  # path -> sha256
    scenario_hash: Optional[str] = None
    seed: Optional[int] = None
    version: str = __version__
    outputs: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def add_input(self, path: Path) -> bytes:
        data = Path(path).read_bytes()
        self.inputs[str(path)] = hashlib.sha256(data).hexdigest()
        return data

    def write(self, out: Path) -> None:
        (out / "manifest.json").write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")


class _Run:
    """Run directory plus manifest bookkeeping."""

    def __init__(self, args, command: str):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(command, list(args.argv))
        self.t0 = time.perf_counter()

    def emit(self, name: str, data) -> Path:
        path = self.out / name
        path.write_bytes(data if isinstance(data, bytes) else data.encode())
        self.manifest.outputs.append(name)
        return path

    def finish(self) -> None:
        self.manifest.timing["total_s"] = round(time.perf_counter() - self.t0, 6)
        self.manifest.write(self.out)


def _load_network(run: _Run, path: str):
    from .inp import parse_inp

    try:
        data = run.manifest.add_input(Path(path))
    except OSError as exc:
        raise InpError(f"cannot read {path}: {exc.strerror}") from None
    return parse_inp(data)


def _load_scenario(run: _Run, path: Optional[str], net, weights: Optional[str] = None):
    from .scenario import load_scenario, scenario_from_dict

    obj = {}
    if path:
        try:
            obj = json.loads(run.manifest.add_input(Path(path)))
        except OSError as exc:
            raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if weights:
        try:
            w = json.loads(run.manifest.add_input(Path(weights)))
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot load weights {weights}: {exc}") from None
        obj = dict(obj, weights=w)
    sc = scenario_from_dict(obj, net)
    run.manifest.scenario_hash = sc.digest()
    return sc


def _summary(results) -> str:
    sig = np.concatenate([r.sigma for r in results])
    labels = [lab for r in results for lab in r.labels]
    heads = np.array([s for s, l in zip(sig, labels) if l.startswith("h:")])
    flows = np.array([s for s, l in zip(sig, labels) if l.startswith("q:")])
    part = lambda name, v: f"{name} sigma mean {v.mean():.6g} max {v.max():.6g}" if v.size else f"{name}: none"
    return f"{len(results)} step(s); " + part("head", heads) + "; " + part("flow", flows)


# --- commands --------------------------------------------------------------

def cmd_validate(args) -> int:
    from .hydraulics import solve_operating_point
    from .linearization import assemble_system, rank_check
    from .network import validate_topology

    run = _Run(args, "validate")
    net = _load_network(run, args.inp)
    sc = _load_scenario(run, args.scenario, net)
    lines = [repr(net)]
    topo = validate_topology(net, {v: s for v, (s, _) in _valve_states(net, sc, 1).items()})
    lines.append(str(topo))
    code = EXIT_OK
    if not topo.ok:
        code = EXIT_MODEL
    else:
        st = solve_operating_point(net, valve_states=sc.valve_schedule.at(1))
        rep = rank_check(assemble_system(net, st, sc.measurements(net, st)))
        lines.append(
            f"rank {rep.numeric_rank} (structural {rep.structural_rank}) of {rep.n_cols} columns, "
            f"{rep.n_rows} rows: {'full column rank' if rep.full_rank else 'RANK DEFICIENT'}"
        )
        if not rep.full_rank:
            lines.append(f"unmatched columns: {', '.join(rep.unmatched_columns)}")
            code = EXIT_MODEL
    text = "\n".join(lines) + "\n"
    run.emit("validate.txt", text)
    run.finish()
    print(text, end="")
    return code


def _valve_states(net, sc, step):
    from .hydraulics import resolve_valves

    return resolve_valves(net, sc.valve_schedule.at(step))


def cmd_pse(args) -> int:
    from .pse import run_algorithm1
    from .report import write_report
    from .svg import state_band_chart

    run = _Run(args, "pse")
    net = _load_network(run, args.inp)
    sc = _load_scenario(run, args.scenario, net, args.weights)
    T = args.horizon or sc.horizon
    t = time.perf_counter()
    results = run_algorithm1(net, sc, T, coupled=args.coupled)
    run.manifest.timing["pse_s"] = round(time.perf_counter() - t, 6)
    run.emit("pse.csv", write_report(results, "csv"))
    run.emit("pse.json", write_report(results, "json"))
    if args.covariance:
        run.emit("covariance.csv", write_report(results, "csv", covariance=True))
    for label in args.svg or []:
        label = label if ":" in label else f"{'q' if net.has_link(label) else 'h'}:{label}"
        try:
            net.state_index(label)
        except KeyError:
            raise ScenarioError(f"--svg: unknown state {label!r}") from None
        run.emit(f"band_{label.replace(':', '_')}.svg", state_band_chart(results, label))
    run.finish()
    print(_summary(results))
    return EXIT_OK


def cmd_mcs(args) -> int:
    from .lab.mcs import run_mcs
    from .lab.stats import compare
    from .report import read_sigma_csv, write_metrics, write_samples_sigma

    run = _Run(args, "mcs")
    net = _load_network(run, args.inp)
    sc = _load_scenario(run, args.scenario, net)
    run.manifest.seed = args.seed
    if args.samples < 2:
        raise ScenarioError("need at least 2 samples to estimate a covariance")
    t = time.perf_counter()
    batch = run_mcs(net, sc, args.samples, args.seed, step=args.step)
    run.manifest.timing["mcs_s"] = round(time.perf_counter() - t, 6)
    run.emit("mcs.csv", write_samples_sigma(batch))
    run.emit("batch.json", json.dumps(batch.manifest(), indent=1, sort_keys=True) + "\n")
    msg = f"{batch.N} samples, {len(batch.excluded)} excluded"
    if args.compare:
        ref = read_sigma_csv(run.manifest.add_input(Path(args.compare)), step=args.step)
        missing = [l for l in batch.labels if l not in ref]
        if missing:
            raise ScenarioError(f"--compare file lacks states {missing}")
        Kp = np.diag([ref[l] ** 2 for l in batch.labels])
        rep = compare(Kp, batch)
        rep.labels = list(batch.labels)
        run.emit("metrics.csv", write_metrics(rep, "csv"))
        msg += f"; mean RE {rep.mean_re:.3f}% max RE {rep.max_re:.3f}% mean AE {rep.mean_ae:.4g}"
    run.finish()
    print(msg)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .lab.sweep import source_impact_sweep

    run = _Run(args, "sweep")
    net = _load_network(run, args.inp)
    sc = _load_scenario(run, args.scenario, net)
    grid = None
    if args.grid:
        try:
            grid = json.loads(run.manifest.add_input(Path(args.grid)))
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot load grid {args.grid}: {exc}") from None
    table = source_impact_sweep(net, sc, grid, step=args.step, isolated=args.isolated)
    run.emit("sweep.csv", table.to_csv())
    run.finish()
    seen = []
    for r in table.rows:
        if (r.source, r.me_percent) not in seen:
            seen.append((r.source, r.me_percent))
    for source, me in seen:
        print(f"{source} {me:g}%: mean sigma {table.mean_sigma(source, me):.6g}")
    return EXIT_OK


def cmd_eps(args) -> int:
    from .hydraulics import run_eps

    run = _Run(args, "eps")
    net = _load_network(run, args.inp)
    sc = _load_scenario(run, args.scenario, net)
    T = args.horizon or sc.horizon
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        states = run_eps(net, sc.valve_schedule, T, demands=sc.demand_schedule(net, T), dt=sc.dt)
    lines = ["step,state_id,kind,value"]
    for st in states:
        for lab, v in zip(net.state_labels(), st.x):
            kind = "head" if lab.startswith("h:") else "flow"
            lines.append(f"{st.step},{lab.split(':', 1)[1]},{kind},{float(v)!r}")
    run.emit("eps.csv", "\n".join(lines) + "\n")
    notes = [f"step {st.step}: {v}" for st in states for v in st.violations]
    notes += [str(w.message) for w in caught]
    if notes:
        run.emit("limits.txt", "\n".join(notes) + "\n")
    run.finish()
    print(f"{len(states)} step(s) solved; {len(notes)} limit note(s)")
    return EXIT_OK


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wdnpse", description="Probabilistic state estimation for water networks")
    p.add_argument("--version", action="version", version=f"wdnpse {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        sp.add_argument("inp", help="EPANET INP file")
        if scenario:
            sp.add_argument("scenario", nargs="?", help="scenario JSON (default: no uncertainty)")
        sp.add_argument("--out", default="run", help="run directory (default: ./run)")

    v = sub.add_parser("validate", help="parse, check topology and rank")
    common(v)
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("pse", help="covariance of all states")
    common(s)
    s.add_argument("--horizon", type=int, help="number of steps (default: scenario horizon)")
    s.add_argument("--coupled", action="store_true", help="couple steps through tank dynamics")
    s.add_argument("--weights", help="JSON file with row weights (overrides the scenario)")
    s.add_argument("--covariance", action="store_true", help="also dump K_xx as triplets")
    s.add_argument("--svg", nargs="*", metavar="STATE", help="emit CI band charts for these states")
    s.set_defaults(func=cmd_pse)

    m = sub.add_parser("mcs", help="Monte-Carlo oracle over the nonlinear model")
    common(m)
    m.add_argument("--samples", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--step", type=int, default=1)
    m.add_argument("--compare", help="pse.csv to compare against (AE/RE table)")
    m.set_defaults(func=cmd_mcs)

    w = sub.add_parser("sweep", help="per-source impact on state deviations")
    common(w)
    w.add_argument("--grid", help="JSON grid {source: {values: [...], fixed: {...}}}")
    w.add_argument("--step", type=int, default=1)
    w.add_argument("--isolated", action="store_true", help="switch off the other sources")
    w.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eps", help="deterministic extended-period simulation")
    common(e)
    e.add_argument("--horizon", type=int)
    e.set_defaults(func=cmd_eps)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except InpError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ScenarioError, DomainError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TopologyError, RankDeficiencyError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (ConvergenceError, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
