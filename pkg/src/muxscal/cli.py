"""Command-line front end.

Exit codes: 0 success, 1 infeasible (or empty synthesis), 2 configuration
error, 3 simulation blow-up.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from . import __version__
from .certifier import certify
from .config import ConfigError, config_digest, load_config
from .simulator import SimulationBlowUp, formation_sweep, iss_bound_trace, run
from .synthesis import grid_sweep

EXIT_OK, EXIT_INFEASIBLE, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3


def _write_manifest(out, command, raw, seed, t_start, outputs, warnings):
    manifest = {
        "command": command,
        "config_sha256": config_digest(raw),
        "version": __version__,
        "seed": seed,
        "wall_time_s": time.perf_counter() - t_start,
        "outputs": sorted(Path(p).name for p in outputs),
        "warnings": list(warnings),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _prepare_out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _certificate_for(cfg):
    gains = cfg.require_gains()
    return certify(gains, cfg.topology["n_bar"], cfg.delay.tau_max)


def _margins_report(cert):
    return {"feasible": False, "sigma_bar": cert.sigma_bar, "sigma_under": cert.sigma_under,
            "gap": cert.gap, "margins_epsilon": cert.margins_epsilon}


def cmd_certify(args, cfg, raw, t0):
    cert = _certificate_for(cfg)
    payload = cert.to_dict() if cert.feasible else _margins_report(cert)
    print(json.dumps(payload, indent=2))
    if args.out:
        out = _prepare_out(args)
        path = out / "certificate.json"
        path.write_text(cert.to_json(indent=2) + "\n")
        _write_manifest(out, "certify", raw, args.seed if args.seed is not None else cfg.seed,
                        t0, [path], [])
    return EXIT_OK if cert.feasible else EXIT_INFEASIBLE


def cmd_synthesize(args, cfg, raw, t0):
    problem = cfg.synthesis_problem(seed=args.seed)
    result = grid_sweep(problem)
    out = _prepare_out(args)
    res_path = out / "synthesis.json"
    res_path.write_text(json.dumps({"problem": problem.to_dict(), **result.to_dict()},
                                   indent=2) + "\n")
    csv_path = out / "per_alpha.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha1", "alpha2", "feasible", "cost", "sigma_bar", "sigma_under"])
        for r in result.per_alpha:
            w.writerow([f"{r.alpha[0]:.17g}", f"{r.alpha[1]:.17g}", int(r.feasible),
                        f"{r.cost:.17g}", f"{r.sigma_bar:.17g}", f"{r.sigma_under:.17g}"])
    _write_manifest(out, "synthesize", raw, problem.seed, t0, [res_path, csv_path], [])
    print(json.dumps({"status": result.status, "best_cost": result.best_cost,
                      "best_gains": None if result.best_gains is None
                      else result.best_gains.to_dict()}, indent=2))
    return EXIT_OK if result.status == "ok" else EXIT_INFEASIBLE


def _gate(args, cfg):
    """Certificate plus warnings; ``None`` means refuse to run."""
    cert = _certificate_for(cfg)
    warnings = []
    if not cert.feasible:
        if not args.allow_uncertified:
            print(json.dumps(_margins_report(cert), indent=2))
            print("gains are not certified; pass --allow-uncertified to run anyway",
                  file=sys.stderr)
            return cert, None
        warnings.append(
            f"uncertified gains: sigma_bar - sigma_under = {cert.gap:.6g}; no deviation bound")
    return cert, warnings


def _sim_config(args, cfg):
    return cfg.sim_config(seed=args.seed, step=args.step, duration=args.duration)


def cmd_simulate(args, cfg, raw, t0):
    cert, warnings = _gate(args, cfg)
    if warnings is None:
        return EXIT_INFEASIBLE
    sim_cfg = _sim_config(args, cfg)
    metrics = run(sim_cfg, cfg.gains, cfg.build_topology())
    out = _prepare_out(args)
    dev_path, sum_path = out / "deviation.csv", out / "summary.csv"
    metrics.write_csv(dev_path)
    metrics.write_summary_csv(sum_path)
    outputs = [dev_path, sum_path]
    if cert.feasible:
        bound = iss_bound_trace(cert, sim_cfg, metrics)
        b_path = out / "bound.csv"
        with open(b_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "max_dev_m", "bound_m"])
            for t, d, b in zip(metrics.times, metrics.deviation.max(axis=1), bound):
                w.writerow([f"{t:.17g}", f"{d:.17g}", f"{b:.17g}"])
        outputs.append(b_path)
    _write_manifest(out, "simulate", raw, sim_cfg.seed, t0, outputs, warnings)
    return EXIT_OK


def cmd_sweep(args, cfg, raw, t0):
    cert, warnings = _gate(args, cfg)
    if warnings is None:
        return EXIT_INFEASIBLE
    if not 1 <= args.circles_min <= args.circles_max:
        raise ConfigError("need 1 <= --circles-min <= --circles-max")
    sim_cfg = _sim_config(args, cfg)
    res = formation_sweep(sim_cfg, cfg.gains, range(args.circles_min, args.circles_max + 1),
                          cfg.topology["radius_step"], cfg.topology["n_bar"])
    out = _prepare_out(args)
    sweep_path, sum_path = out / "sweep.csv", out / "summary.csv"
    res.write_csv(sweep_path)
    res.write_summary_csv(sum_path)
    _write_manifest(out, "sweep", raw, sim_cfg.seed, t0, [sweep_path, sum_path], warnings)
    return EXIT_OK


COMMANDS = {"certify": cmd_certify, "synthesize": cmd_synthesize,
            "simulate": cmd_simulate, "sweep": cmd_sweep}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON configuration file")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--allow-uncertified", action="store_true",
                        help="simulate gains without a feasible certificate")
    common.add_argument("--step", type=float, default=None, help="integration step (s)")
    common.add_argument("--duration", type=float, default=None, help="simulated time (s)")
    parser = argparse.ArgumentParser(prog="muxscal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("certify", "synthesize", "simulate"):
        sub.add_parser(name, parents=[common])
    sw = sub.add_parser("sweep", parents=[common])
    sw.add_argument("--circles-min", type=int, default=1)
    sw.add_argument("--circles-max", type=int, default=10)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command != "certify" and args.out is None:
        args.out = "."
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        cfg, raw = load_config(args.config)
        return COMMANDS[args.command](args, cfg, raw, t0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationBlowUp as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
