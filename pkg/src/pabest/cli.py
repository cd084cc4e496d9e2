"""Command-line entry point: ``pabest <command> [options]``.

Commands: ``estimate``, ``validate``, ``sweep {strategies,te}``,
``fit-likelihood`` and ``recv``.

Every option can also come from ``--config FILE``. An INI file is read with
:mod:`configparser`; keys in ``[defaults]`` apply to every command and keys
in a section named after the command (``[estimate]``, ``[sweep]``, ...)
override them. Keys are option names with ``_`` or ``-``
(``gt_uniform = 1,100``). A JSON file is taken to be a manifest written by a
previous run and its ``options`` are reused, so a run can be repeated from
its manifest. Precedence: command-line flag, then config file, then the
built-in default.

Exit codes: 0 success, 2 configuration error, 3 prober failure,
4 not converged under ``--strict``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Any, Callable

import numpy as np
import scipy

from . import __version__
from .belief import RateGrid
from .estimator import EstimationResult, EstimatorConfig, estimate, validate
from .experiments import (
    SweepSpec, run_strategy_sweep, run_te_sweep, stream_seeds, write_records, write_table,
)
from .graph import BpSchedule
from .likelihood import LikelihoodModel, fit, load_training_csv
from .probing import GroundTruth, ProbeConfig, ProbeError, SimulatedProber
from .sampling import Strategy, StrategyConfig
from .topology import TopologyError, load_topology

log = logging.getLogger("pabest")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROBER = 3
EXIT_NOT_CONVERGED = 4


class ConfigError(Exception):
    pass


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _strs(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _range(text) -> list[float]:
    v = _floats(text)
    if len(v) != 2 or v[0] > v[1]:
        raise ValueError(f"expected lo,hi with lo <= hi, got {text!r}")
    return v


@dataclass(frozen=True)
class Opt:
    type: Callable
    default: Any
    help: str
    flag: bool = False


_D = EstimatorConfig()

OPTIONS: dict[str, Opt] = {
    # estimator
    "strategy": Opt(str, "wci", "path selection: rr, rr-strict, seq, we, wci"),
    "seed": Opt(int, 0, "master seed; selection and simulated outcomes get independent streams"),
    "gamma": Opt(float, _D.likelihood.gamma, "success probability defining the PAB"),
    "eta": Opt(float, _D.strategy.eta, "credible level of the reported intervals"),
    "beta": Opt(float, _D.strategy.beta, "target interval width in Mbps"),
    "epsilon": Opt(float, _D.probe.epsilon, "success tolerance in Mbps"),
    "nt": Opt(int, _D.probe.n_trains, "trains per measurement"),
    "ls": Opt(int, _D.probe.train_length, "packets per train"),
    "psize": Opt(int, _D.probe.packet_size, "probe packet size in bytes"),
    "slack": Opt(float, _D.probe.slack, "allowed relative lateness of a departure"),
    "alpha": Opt(float, _D.likelihood.alpha, "likelihood slope"),
    "kappa": Opt(float, _D.likelihood.kappa, "likelihood floor"),
    "bmin": Opt(float, _D.grid.b_min, "lowest rate on the grid (Mbps)"),
    "bmax": Opt(float, _D.grid.b_max, "highest rate on the grid (Mbps)"),
    "step": Opt(float, _D.grid.step, "grid spacing (Mbps)"),
    "max_iter": Opt(int, _D.max_iterations, "global cap on measurements"),
    "bp_rounds": Opt(int, _D.bp.max_messages_per_edge, "BP messages per edge per update"),
    # inputs / outputs
    "topology": Opt(str, None, "topology file"),
    "results": Opt(str, None, "results.json from an estimate run"),
    "out": Opt(str, "pab-out", "output directory"),
    "simulated": Opt(_bool, False, "use the simulated prober", flag=True),
    "ground_truth": Opt(str, None, "JSON map link -> PAB for simulated runs"),
    "gt_uniform": Opt(_range, None, "draw link PABs uniformly from lo,hi (simulated runs)"),
    "endpoints": Opt(str, None, "JSON map path id or destination -> host:port of its receiver"),
    "report_timeout": Opt(float, 2.0, "seconds to wait for a receiver's train report"),
    "strict": Opt(_bool, False, "exit 4 if some interval is still wider than beta", flag=True),
    # validation
    "paths": Opt(int, 4, "link-disjoint paths to validate"),
    "repeats": Opt(int, 1, "test trains per rate"),
    "validation_ls": Opt(int, 2400, "packets in a validation train"),
    # sweeps
    "sizes": Opt(_ints, [20], "path counts M, comma-separated"),
    "replicates": Opt(int, 20, "topologies per size"),
    "strategies": Opt(_strs, ["wci", "rr-strict"], "strategies to compare"),
    "te": Opt(_floats, [0.0, 0.9], "row corruption probabilities"),
    "q_flip": Opt(float, 0.02, "entry flip probability in corrupted rows"),
    "base_topology": Opt(str, None, "topology to sample paths from (default: generated tree)"),
    # fitting / receiver
    "data": Opt(str, None, "CSV with path_id,rate_mbps,success_count,total_count"),
    "listen": Opt(str, "0.0.0.0:9000", "UDP and TCP control address of the receiver"),
}

ESTIMATOR = ["strategy", "seed", "gamma", "eta", "beta", "epsilon", "nt", "ls", "psize", "slack",
             "alpha", "kappa", "bmin", "bmax", "step", "max_iter", "bp_rounds"]
PROBER = ["simulated", "ground_truth", "gt_uniform", "endpoints", "report_timeout"]

COMMANDS: dict[str, tuple[str, list[str]]] = {
    "estimate": ("estimate every path's PAB",
                 ["topology", "out", "strict", *PROBER, *ESTIMATOR]),
    "validate": ("probe at the edges of reported intervals",
                 ["topology", "results", "out", "paths", "repeats", "validation_ls", *PROBER, *ESTIMATOR]),
    "sweep": ("simulation sweeps over synthetic topologies",
              ["out", "sizes", "replicates", "strategies", "te", "q_flip", "base_topology", *ESTIMATOR]),
    "fit-likelihood": ("fit the likelihood slope and per-path PABs", ["data", "kappa", "out"]),
    "recv": ("run the receiver agent", ["listen"]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pabest", description="Probabilistic available bandwidth estimation.")
    parser.add_argument("--version", action="version", version=f"pabest {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, argument_default=argparse.SUPPRESS)
        if name == "sweep":
            p.add_argument("kind", choices=["strategies", "te"])
        p.add_argument("--config", help="INI config or a previous manifest.json")
        p.add_argument("-v", "--verbose", action="count", default=0)
        for key in opts:
            o = OPTIONS[key]
            flag = "--" + key.replace("_", "-")
            default = "" if o.default is None else f" (default: {o.default})"
            if o.flag:
                p.add_argument(flag, dest=key, action="store_const", const=True, help=o.help)
            else:
                p.add_argument(flag, dest=key, type=o.type, help=o.help + default)
    return parser


def _read_config(path: str, command: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    if path.endswith(".json"):
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if doc.get("command") not in (None, command):
            raise ConfigError(f"{path} is a manifest for {doc['command']!r}, not {command!r}")
        return dict(doc.get("options", doc))
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    values = {}
    for section in ("defaults", command):
        if cp.has_section(section):
            values.update({k.replace("-", "_"): v for k, v in cp.items(section)})
    return values


def resolve_options(ns: argparse.Namespace) -> dict:
    """Merge built-in defaults, the config file and explicit flags, in that order."""
    command = ns.command
    allowed = COMMANDS[command][1]
    opts = {k: OPTIONS[k].default for k in allowed}
    if getattr(ns, "config", None):
        for key, value in _read_config(ns.config, command).items():
            if key in ("kind", "command"):
                continue
            if key not in OPTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            if key not in allowed:
                continue
            if value is None:
                opts[key] = None
                continue
            try:
                opts[key] = OPTIONS[key].type(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from exc
    opts.update({k: v for k, v in vars(ns).items() if k in allowed})
    return opts


def estimator_config(o: dict, selection_seed: int) -> EstimatorConfig:
    try:
        return EstimatorConfig(
            grid=RateGrid(o["bmin"], o["bmax"], o["step"]),
            strategy=StrategyConfig(Strategy(o["strategy"]), selection_seed, o["beta"], o["eta"]),
            probe=ProbeConfig(o["nt"], o["ls"], o["psize"], o["epsilon"], o["slack"]),
            likelihood=LikelihoodModel(o["alpha"], o["kappa"], o["gamma"]),
            bp=replace(BpSchedule(), max_messages_per_edge=o["bp_rounds"]),
            max_iterations=o["max_iter"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_topology(path: str | None, what: str = "--topology"):
    if not path:
        raise ConfigError(f"{what} is required")
    try:
        return load_topology(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"topology file not found: {path}") from exc
    except TopologyError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _ground_truth(o: dict, t, cfg: EstimatorConfig, seed: int) -> GroundTruth:
    if o["ground_truth"]:
        try:
            return GroundTruth.load(o["ground_truth"], t)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"ground truth {o['ground_truth']}: {exc}") from exc
    if o["gt_uniform"]:
        lo, hi = o["gt_uniform"]
        return GroundTruth.uniform(t, lo, hi, np.random.default_rng(seed), step=cfg.grid.step)
    raise ConfigError("--simulated needs --ground-truth or --gt-uniform")


def _make_prober(o: dict, t, cfg: EstimatorConfig, seeds: tuple[int, ...]):
    """Returns (prober, ground truth or None)."""
    if o["simulated"]:
        gt = _ground_truth(o, t, cfg, seeds[2])
        return SimulatedProber(gt, cfg.likelihood, cfg.probe, seed=seeds[1]), gt
    if not o["endpoints"]:
        raise ConfigError("give --simulated or an --endpoints file for the UDP prober")
    from .udp import UdpProber, parse_endpoint
    try:
        with open(o["endpoints"], encoding="utf-8") as fh:
            table = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"endpoints {o['endpoints']}: {exc}") from exc
    endpoints = {}
    for path in t.paths:
        addr = table.get(path.id) or table.get(path.dst)
        if addr is None:
            raise ConfigError(f"no endpoint for path {path.id} (destination {path.dst or '-'})")
        endpoints[path.id] = parse_endpoint(addr)
    return UdpProber(endpoints, cfg.probe, report_timeout=o["report_timeout"]), None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write(out: str, name: str, text: str) -> str:
    path = os.path.join(out, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _manifest(command: str, o: dict, started: str, outputs: list[str], **extra) -> str:
    doc = {
        "command": command,
        "options": o,
        **extra,
        "versions": {
            "pabest": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
        },
        "started": started,
        "finished": _now(),
        "outputs": [os.path.basename(p) for p in outputs] + ["manifest.json"],
    }
    return _write(o["out"], "manifest.json", json.dumps(doc, indent=1) + "\n")


def _seeds(o: dict) -> tuple[int, ...]:
    # selection, simulated outcomes, generated ground truth
    return stream_seeds(o["seed"], 3)


def cmd_estimate(o: dict) -> int:
    started = _now()
    t = _load_topology(o["topology"])
    seeds = _seeds(o)
    cfg = estimator_config(o, seeds[0])
    prober, gt = _make_prober(o, t, cfg, seeds)
    os.makedirs(o["out"], exist_ok=True)
    try:
        res = estimate(t, cfg, prober)
    finally:
        if hasattr(prober, "close"):
            prober.close()
    outputs = [
        _write(o["out"], "results.json", res.to_json() + "\n"),
        _write(o["out"], "summary.csv", res.summary_csv()),
        _write(o["out"], "measurements.csv", res.measurements_csv()),
    ]
    extra = {}
    if gt is not None:
        outputs.append(_write(o["out"], "ground_truth.json", json.dumps(gt.links, indent=1) + "\n"))
        extra["accuracy"] = res.accuracy(gt.paths)
    _manifest("estimate", o, started, outputs, config=cfg.to_dict(),
              seeds={"seed": o["seed"], "selection": seeds[0], "outcomes": seeds[1], "truth": seeds[2]},
              iterations=res.iterations, converged=res.converged, wall_time=res.wall_time, **extra)

    print(f"{t.n_paths} paths, {res.iterations} measurements, converged={res.converged}")
    for r in res.paths.values():
        print(f"  {r.path}: [{r.interval.lower:g}, {r.interval.upper:g}] Mbps after {r.measurements} measurements")
    if "accuracy" in extra:
        print(f"accuracy against ground truth: {extra['accuracy']:.3f}")
    print(f"outputs in {o['out']}")
    if res.aborted:
        print(f"prober failure: {res.error}", file=sys.stderr)
        return EXIT_PROBER
    if o["strict"] and not res.converged:
        print("not every interval reached the target width", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_validate(o: dict) -> int:
    started = _now()
    t = _load_topology(o["topology"])
    if not o["results"]:
        raise ConfigError("--results is required")
    try:
        res = EstimationResult.load(o["results"])
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"results {o['results']}: {exc}") from exc
    missing = set(t.path_ids) - set(res.paths)
    if missing:
        raise ConfigError(f"results lack paths: {', '.join(sorted(missing))}")
    seeds = _seeds(o)
    cfg = estimator_config(o, seeds[0])
    prober, _ = _make_prober(o, t, cfg, seeds)
    probe = ProbeConfig(1, o["validation_ls"], o["psize"], o["epsilon"], o["slack"])
    try:
        report = validate(t, res, prober, o["paths"], o["repeats"], probe)
    finally:
        if hasattr(prober, "close"):
            prober.close()
    os.makedirs(o["out"], exist_ok=True)
    labels = ["beta_min", "beta_min+eps", "beta_max", "beta_max+eps"]
    summary = {lab: report.frequency(lab) for lab in labels}
    doc = {**report.to_dict(), "frequency": summary}
    out = _write(o["out"], "validation.json", json.dumps(doc, indent=1) + "\n")
    _manifest("validate", o, started, [out], seeds={"seed": o["seed"], "outcomes": seeds[1]})
    for lab in labels:
        print(f"{lab:>13}: success frequency {summary[lab]:.3f}")
    if any(test.failures for test in report.tests):
        print("some validation probes failed", file=sys.stderr)
        return EXIT_PROBER
    return EXIT_OK


def cmd_sweep(o: dict, kind: str) -> int:
    started = _now()
    base = _load_topology(o["base_topology"], "--base-topology") if o["base_topology"] else None
    try:
        spec = SweepSpec(
            sizes=tuple(o["sizes"]), replicates=o["replicates"], strategies=tuple(o["strategies"]),
            te=tuple(o["te"]), q_flip=o["q_flip"], seed=o["seed"],
            config=estimator_config(o, 0), base=base,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    os.makedirs(o["out"], exist_ok=True)
    if kind == "strategies":
        table, records = run_strategy_sweep(spec)
    else:
        table, records = run_te_sweep(spec, strategy=Strategy(o["strategy"]).value)
    table_path = os.path.join(o["out"], f"{kind}.csv")
    runs_path = os.path.join(o["out"], "runs.csv")
    write_table(table, table_path)
    write_records(records, runs_path)
    _manifest("sweep", o, started, [table_path, runs_path], kind=kind, spec=spec.manifest())
    for row in table:
        print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def cmd_fit(o: dict) -> int:
    started = _now()
    if not o["data"]:
        raise ConfigError("--data is required")
    try:
        samples = load_training_csv(o["data"])
        res = fit(samples, kappa=o["kappa"])
    except FileNotFoundError as exc:
        raise ConfigError(f"data file not found: {o['data']}") from exc
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{o['data']}: {exc}") from exc
    os.makedirs(o["out"], exist_ok=True)
    doc = {"alpha": res.alpha, "kappa": o["kappa"], "pab": res.pab, "mse": res.mse}
    out = _write(o["out"], "fit.json", json.dumps(doc, indent=1) + "\n")
    _manifest("fit-likelihood", o, started, [out])
    print(f"alpha = {res.alpha:.4f}, mse = {res.mse:.3g}")
    for p, y in res.pab.items():
        print(f"  {p}: {y:.2f} Mbps")
    return EXIT_OK


def cmd_recv(o: dict) -> int:
    from .udp import ProbeReceiver, parse_endpoint
    host, port = parse_endpoint(o["listen"])
    try:
        receiver = ProbeReceiver(host, port)
    except OSError as exc:
        raise ConfigError(f"cannot listen on {o['listen']}: {exc}") from exc
    print(f"receiver listening on {receiver.address[0]}:{receiver.address[1]} (udp + tcp control)", flush=True)
    try:
        receiver.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        o = resolve_options(ns)
        if ns.command == "estimate":
            return cmd_estimate(o)
        if ns.command == "validate":
            return cmd_validate(o)
        if ns.command == "sweep":
            return cmd_sweep(o, ns.kind)
        if ns.command == "fit-likelihood":
            return cmd_fit(o)
        return cmd_recv(o)
    except ConfigError as exc:
        print(f"pabest: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProbeError as exc:
        print(f"pabest: prober failure: {exc}", file=sys.stderr)
        return EXIT_PROBER


def recv_main(argv: list[str] | None = None) -> int:
    """``pab-recv --listen ADDR``: shorthand for ``pabest recv``."""
    return main(["recv", *(sys.argv[1:] if argv is None else argv)])


if __name__ == "__main__":
    sys.exit(main())
