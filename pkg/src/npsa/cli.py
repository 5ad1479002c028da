"""Command-line interface: ``npsa fit | dcheck | simulate | report``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from .config import MODES, ConfigError, RunConfig, default_workers, read_config_file
from .dfunction import DEFAULT_INNER, d_phi
from .io import load_dataset
from .models import MODELS
from .osat import fit_osat
from .report import load_record, result_from_record, write_report
from .simulate import EXAMPLES, generate_synthetic, write_synthetic
from .solver import fit
from .types import DatasetError

log = logging.getLogger("npsa")


def _fit_parser(sub):
    p = sub.add_parser("fit", help="fit a mixing distribution")
    p.add_argument("--config", help="flat TOML file; flags override its keys")
    p.add_argument("--model", choices=sorted(MODELS))
    p.add_argument("--data")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--K", type=int, help="support points for npsa2 (>= n)")
    p.add_argument("--mu-lower", type=float, nargs="+")
    p.add_argument("--mu-upper", type=float, nargs="+")
    p.add_argument("--beta", type=float, nargs="+", help="fix beta at these values")
    p.add_argument("--beta-lower", type=float, nargs="+")
    p.add_argument("--beta-upper", type=float, nargs="+")
    p.add_argument("--sigma", type=float, help="fixed residual sd")
    p.add_argument("--sigma-lower", type=float)
    p.add_argument("--sigma-upper", type=float)
    p.add_argument("--t0", type=float)
    p.add_argument("--rt", type=float)
    p.add_argument("--ns", type=int)
    p.add_argument("--nt", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--n-eps", type=int)
    p.add_argument("--max-cycles", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--compute-d", action="store_const", const=True)
    p.add_argument("--prune-floor", type=float)
    p.add_argument("--merge-radius", type=float, nargs="+")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npsa", description="Nonparametric maximum likelihood by simulated annealing.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    _fit_parser(sub)

    p = sub.add_parser("dcheck", help="compute the D function for a saved result")
    p.add_argument("--result", required=True, help="result directory or result.json")
    p.add_argument("--data", help="dataset (defaults to the one recorded in the result)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--example", choices=EXAMPLES, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset CSV path")

    p = sub.add_parser("report", help="re-render a result bundle")
    p.add_argument("--result", required=True, help="result directory or result.json")
    p.add_argument("--data", help="dataset (defaults to the one recorded in the result)")
    p.add_argument("--out", required=True)
    return parser


def _flag_values(args) -> dict:
    skip = {"command", "config", "verbose"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _progress(cycle, temperature, best_energy):
    log.info("cycle %d  T=%.4g  best energy=%.8f", cycle, temperature, best_energy)


def cmd_fit(args) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    cfg = RunConfig.from_sources(file_values, _flag_values(args))
    if not cfg.data:
        raise ConfigError("no dataset given (data)")
    model = cfg.build_model()
    subjects = load_dataset(cfg.data, model)
    bounds = cfg.bounds()
    sa = cfg.sa_config()
    if cfg.mode == "osat":
        result = fit_osat(model, subjects, cfg.beta, cfg.sigma, bounds, sa, cfg.workers)
    else:
        choice = 2 if cfg.mode == "npsa2" else 3
        result = fit(model, subjects, bounds, sa, choice=choice, K=cfg.K, workers=cfg.workers, sigma=cfg.sigma, callback=_progress)
    if cfg.compute_d:
        inner = dataclasses.replace(DEFAULT_INNER, seed=cfg.seed)
        d = d_phi(model, subjects, result.candidate, bounds, inner, workers=cfg.workers)
        result.d_value, result.d_max = d.value, d.max_d_theta
    summary = write_report(
        result, model, subjects, cfg.out, cfg.to_dict(), cfg.prune_floor, cfg.merge_radius_array(bounds), cfg.workers
    )
    line = f"lnL={result.loglik:.6f} K_merged={summary['K_merged']} cycles={result.cycles} evals={result.n_evals}"
    if result.d_value is not None:
        line += f" D={result.d_value:.6g} ({summary['d_percent']:.3g}% of |lnL|)"
    print(f"{line} -> {cfg.out}")
    return 0


def _load_saved(result_path, data_path):
    path = os.path.join(result_path, "result.json") if os.path.isdir(result_path) else result_path
    try:
        record = load_record(path)
    except OSError as exc:
        raise ConfigError(f"cannot read result {path!r}: {exc.strerror}") from None
    cfg_values = record["config"]
    cfg = RunConfig.from_sources(cfg_values, {"data": data_path} if data_path else None)
    model = cfg.build_model()
    subjects = load_dataset(cfg.data, model)
    return record, cfg, model, subjects


def cmd_dcheck(args) -> int:
    record, cfg, model, subjects = _load_saved(args.result, args.data)
    result = result_from_record(record)
    seed = cfg.seed if args.seed is None else args.seed
    workers = args.workers or default_workers()
    d = d_phi(model, subjects, result.candidate, cfg.bounds(), dataclasses.replace(DEFAULT_INNER, seed=seed), workers=workers)
    print(f"loglik = {d.loglik!r}")
    print(f"max_d_theta = {d.max_d_theta!r}")
    print(f"d_value = {d.value!r}")
    print(f"d_percent = {d.percent!r}")
    print(f"theta_max = {' '.join(repr(float(v)) for v in d.theta_max)}")
    return 0


def cmd_simulate(args) -> int:
    data = generate_synthetic(args.example, args.n, args.seed)
    truth = write_synthetic(data, args.out)
    print(f"wrote {args.out} and {truth}")
    return 0


def cmd_report(args) -> int:
    record, cfg, model, subjects = _load_saved(args.result, args.data)
    result = result_from_record(record)
    bounds = cfg.bounds()
    write_report(result, model, subjects, args.out, cfg.to_dict(), cfg.prune_floor, cfg.merge_radius_array(bounds), runinfo=False)
    print(f"report -> {args.out}")
    return 0


COMMANDS = {"fit": cmd_fit, "dcheck": cmd_dcheck, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetError) as exc:
        print(f"npsa: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"npsa: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
