"""Command-line interface: ``mvm-depart <command> --network NET.json [--scenario SC.json]``.

Tables go to standard output (or ``--out``) as CSV with a header row. Exit
status: 0 success, 1 infeasible (``INFEASIBLE`` is printed), 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import sys
import time
from pathlib import Path as FsPath

import numpy as np

from . import io
from .departure import (ReplayStateSource, StateSourceExhausted, optimal_departure_offline,
                        optimal_departure_online)
from .distribution import TravelTimeDistribution
from .extensions import RecurrentArc, recurrent_optimal_departure, tagged_path_distribution
from .link import arc_link_lists
from .model import ModelError, NetworkState
from .path import path_distribution
from .routing import optimal_departure_od_bisection, optimal_departure_od_ksp, mape, yen_k_shortest
from .simulation import EmpiricalCdf, ks_distance, online_offline_experiment, simulate_traversal

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT = 0, 1, 2


class Infeasible(Exception):
    pass


def _num(x: float) -> str:
    if x == float("-inf"):
        return "-inf"
    return format(float(x), ".12g")


class Table:
    def __init__(self, header):
        self.buf = _io.StringIO()
        self.writer = csv.writer(self.buf, lineterminator="\n")
        self.writer.writerow(header)

    def row(self, *values):
        self.writer.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in values])

    def text(self) -> str:
        return self.buf.getvalue()


def _read(path: str) -> str:
    try:
        return FsPath(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise io.DocumentError(f"cannot read {path}: {exc.strerror}") from exc


def _inputs(args, need_scenario=True):
    net = io.parse_network(_read(args.network), strict=args.strict)
    scenario = None
    if need_scenario or getattr(args, "scenario", None):
        if not args.scenario:
            raise io.DocumentError("--scenario is required for this command")
        scenario = io.parse_scenario(_read(args.scenario), strict=args.strict)
    return net, scenario


def _no_day_model(net, command: str) -> None:
    if net.day is not None:
        raise io.DocumentError(f"{command} does not support day-period networks", "$.day_model")


def _path_dist(net, path, offset, settings):
    if net.day is None:
        return path_distribution(net.network, path, net.state, offset, settings=settings)
    return tagged_path_distribution(net.network, path, net.state, net.day, net.day_belief, offset, settings).marginal()


def _offline(net, path, query, settings):
    if net.day is None:
        return optimal_departure_offline(net.network, path, net.state, query, settings)
    return recurrent_optimal_departure(net.network, path, net.state, net.day, net.day_belief, query, settings)


def _cdf_table(dist) -> Table:
    table = Table(["time_h", "probability", "cdf"])
    for t, p, c in zip(dist.times, dist.probs, np.cumsum(dist.probs)):
        table.row(float(t), float(p), float(c))
    return table


def cmd_link_dist(args) -> Table:
    net, scenario = _inputs(args, need_scenario=False)
    settings = scenario.settings if scenario else io.Scenario({}).settings
    try:
        arc = net.network.arc(args.arc)
    except ModelError as exc:
        raise io.DocumentError(str(exc), "--arc") from exc
    if isinstance(arc, RecurrentArc):
        raise io.DocumentError("link-dist does not support day-period arcs; use path-dist", "--arc")
    phase = args.phase if args.phase is not None else net.state.phase(arc.id)
    if not 1 <= phase <= arc.n_phases:
        raise io.DocumentError(f"phase must lie in 1..{arc.n_phases}", "--phase")
    times, probs = arc_link_lists(arc, settings.budget)[phase - 1]
    return _cdf_table(TravelTimeDistribution(np.array(times), np.array(probs)))


def cmd_path_dist(args) -> Table:
    net, scenario = _inputs(args)
    return _cdf_table(_path_dist(net, scenario.path(net.network), args.offset, scenario.settings))


def _advice_table(advice, path=None) -> Table:
    if not advice.feasible:
        raise Infeasible()
    header = ["departure_h", "probability"] + (["path"] if path is not None else [])
    table = Table(header)
    extra = [" ".join(path.arcs)] if path is not None else []
    table.row(advice.departure, advice.achieved_probability, *extra)
    return table


def cmd_depart(args) -> Table:
    net, scenario = _inputs(args)
    return _advice_table(_offline(net, scenario.path(net.network), scenario.query, scenario.settings))


def cmd_depart_od(args) -> Table:
    net, scenario = _inputs(args)
    _no_day_model(net, "depart-od")
    o, d = scenario.od(net.network)
    if args.method == "bisect":
        advice, path = optimal_departure_od_bisection(net.network, o, d, net.state, scenario.query, scenario.settings)
    else:
        k = args.k or scenario.get("k", 1)
        advice, path = optimal_departure_od_ksp(net.network, o, d, net.state, scenario.query, k, scenario.settings,
                                                metric=scenario.get("metric", "km"))
    return _advice_table(advice, path)


def _replay_states(text: str, net_doc: dict, strict: bool) -> tuple[list[NetworkState], float]:
    doc = io._load(text)
    if not isinstance(doc, dict) or "states" not in doc or "interval" not in doc:
        raise io.DocumentError("replay needs 'interval' and 'states'")
    states = []
    for i, block in enumerate(doc["states"]):
        d = dict(net_doc)
        d["state"] = block
        try:
            states.append(io.parse_network(d, strict=strict).state)
        except io.DocumentError as exc:
            raise io.DocumentError(str(exc), f"$.states[{i}]") from exc
    return states, float(doc["interval"])


def cmd_online(args) -> Table:
    net, scenario = _inputs(args)
    _no_day_model(net, "online")
    path = scenario.path(net.network)
    query = scenario.query
    if query.update_interval is None:
        raise io.DocumentError("online runs need update_interval", "$.update_interval")
    if args.replications:
        summary = online_offline_experiment(net.network, path, net.state, query, args.replications,
                                            seed=scenario.get("seed", 0), settings=scenario.settings)
        table = Table(list(summary.as_row()))
        table.row(*summary.as_row().values())
        return table
    if args.replay:
        states, interval = _replay_states(_read(args.replay), json.loads(_read(args.network)), args.strict)
        source = ReplayStateSource(states, interval)
    else:
        from .simulation import SimulatedStateSource

        rng = np.random.default_rng(scenario.get("seed", 0))
        source = SimulatedStateSource(net.network, net.state, query.deadline + query.update_interval, rng)
    advice = optimal_departure_online(net.network, path, source, query, scenario.settings)
    if not advice.feasible:
        raise Infeasible()
    table = Table(["request_time_h", "advised_departure_h", "final"])
    for i, (u, t) in enumerate(advice.trace):
        table.row(float(u), float(t), int(i == len(advice.trace) - 1))
    return table


def cmd_validate(args) -> Table:
    net, scenario = _inputs(args)
    _no_day_model(net, "validate")
    path = scenario.path(net.network)
    dist = path_distribution(net.network, path, net.state, args.offset, settings=scenario.settings)
    rng = np.random.default_rng(scenario.get("seed", 0))
    samples = scenario.get("samples", 100_000)
    emp = EmpiricalCdf(simulate_traversal(net.network, path, net.state, args.offset, rng, samples))
    table = Table(["ks_distance", "samples", "atoms", "engine_mean_h", "sample_mean_h"])
    table.row(ks_distance(dist, emp), samples, len(dist), dist.mean, emp.mean)
    return table


def cmd_bench(args) -> Table:
    net, scenario = _inputs(args)
    _no_day_model(net, "bench")
    o, d = scenario.od(net.network)
    base = scenario.query
    deadlines = [float(x) for x in args.deadlines.split(",")] if args.deadlines else [base.deadline]
    k_max = args.k_max or scenario.get("k", 3)
    exact, exact_time = [], 0.0
    for M in deadlines:
        start = time.perf_counter()
        advice, _ = optimal_departure_od_bisection(net.network, o, d, net.state, base.with_deadline(M),
                                                   scenario.settings)
        exact_time += time.perf_counter() - start
        exact.append(advice.departure)
    header = ["k", "paths", "mape", "scenarios"] + (["runtime_s", "exact_runtime_s"] if args.timing else [])
    table = Table(header)
    usable = [i for i, t in enumerate(exact) if t > 0]
    for k in range(1, k_max + 1):
        approx, elapsed = [], 0.0
        for M in deadlines:
            start = time.perf_counter()
            advice, _ = optimal_departure_od_ksp(net.network, o, d, net.state, base.with_deadline(M), k,
                                                 scenario.settings)
            elapsed += time.perf_counter() - start
            approx.append(advice.departure)
        n_paths = len(yen_k_shortest(net.network, o, d, k))
        err = mape([exact[i] for i in usable], [max(approx[i], 0.0) for i in usable]) if usable else float("nan")
        timing = [elapsed / len(deadlines), exact_time / len(deadlines)] if args.timing else []
        table.row(k, n_paths, err, len(usable), *timing)
    return table


def cmd_curve(args) -> Table:
    net, scenario = _inputs(args)
    path = scenario.path(net.network)
    etas = [float(x) for x in args.etas.split(",")] if args.etas else [round(0.05 * i, 2) for i in range(1, 20)]
    table = Table(["reliability", "departure_h", "probability"])
    for eta in etas:
        q = io.DepartureQuery(scenario.query.deadline, eta, None, scenario.query.bisection_tol)
        advice = _offline(net, path, q, scenario.settings)
        table.row(eta, advice.departure, advice.achieved_probability)
    return table


COMMANDS = {
    "link-dist": cmd_link_dist,
    "path-dist": cmd_path_dist,
    "depart": cmd_depart,
    "depart-od": cmd_depart_od,
    "online": cmd_online,
    "validate": cmd_validate,
    "bench": cmd_bench,
    "curve": cmd_curve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvm-depart", description="Latest reliable departure times.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, scenario=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--network", required=True, help="network document (JSON)")
        p.add_argument("--scenario", required=scenario, help="scenario document (JSON)")
        p.add_argument("--strict", action="store_true", help="reject unknown fields")
        p.add_argument("--out", help="write the table to this file instead of stdout")
        return p

    p = add("link-dist", "travel-time distribution of one arc", scenario=False)
    p.add_argument("--arc", required=True)
    p.add_argument("--phase", type=int, help="entry phase (default: from the network state)")
    p = add("path-dist", "arrival-time distribution along the scenario path")
    p.add_argument("--offset", type=float, default=0.0, help="departure time (h after request)")
    add("depart", "latest departure on the scenario path")
    p = add("depart-od", "latest departure between origin and destination")
    p.add_argument("--method", choices=["bisect", "ksp"], default="bisect")
    p.add_argument("--k", type=int)
    p = add("online", "re-planned departure using periodic state updates")
    p.add_argument("--replay", help="state log: {'interval': h, 'states': [state blocks]}")
    p.add_argument("--replications", type=int, help="run the online-versus-offline experiment")
    p = add("validate", "compare the engine with continuous simulation")
    p.add_argument("--offset", type=float, default=0.0)
    p = add("bench", "k-shortest-path error against the exact method")
    p.add_argument("--k-max", type=int)
    p.add_argument("--deadlines", help="comma-separated deadlines (h) forming the scenario set")
    p.add_argument("--timing", action="store_true", help="add run-time columns")
    p = add("curve", "latest departure for a range of reliability targets")
    p.add_argument("--etas", help="comma-separated reliability targets")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        table = COMMANDS[args.command](args)
    except Infeasible:
        print("INFEASIBLE")
        return EXIT_INFEASIBLE
    except (io.DocumentError, ModelError, ValueError, StateSourceExhausted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = table.text()
    if args.out:
        FsPath(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
