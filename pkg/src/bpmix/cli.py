"""Command-line front end: ``bpmix fit | simulate | chao | diagnose | rerun``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.  ``BPMIX_OUTPUT_DIR`` sets the default output root.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import chao_lower_bound, format_report_table, summarize
from .freq_data import DataError, load_dataset, right_truncate
from .mcmc import Chain, SamplerConfig, SamplerError, acf, ess, run_chains
from .model import PriorConfig
from .moments import MomentSpaceError
from .simulate import GAMMA_CONVENTIONS, SETTINGS, run_study, write_study_json

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ENV_OUT = "BPMIX_OUTPUT_DIR"
MODE_NAMES = {"bayes": "full_bayes", "penalized": "penalized"}

# Defaults of the options that may also come from a config file.
FIT_DEFAULTS = {
    "mstar": None, "prior": "uniform", "n_upper": None, "u_lower": 0.5, "u_upper": 1000.0,
    "mode": "bayes", "iters": 110_000, "burnin": 10_000, "thin": 1, "seed": 0, "chains": 1,
    "step_c": 0.1, "step_log_u": 0.3, "store_c": False, "max_lag": 50, "diag_thin": 50,
}
SIM_DEFAULTS = {
    "setting": None, "reps": 20, "true_n": 1000, "mstar": 10, "prior": "uniform",
    "n_upper": None, "u_lower": 0.5, "u_upper": 1000.0, "mode": "bayes", "iters": 20_000,
    "burnin": 2_000, "thin": 1, "seed": 0, "gamma_convention": "rate", "workers": 1,
    "step_c": 0.1, "step_log_u": 0.3,
}
DIAG_DEFAULTS = {"thin": 1, "max_lag": 50}


class UsageError(Exception):
    pass


# --- helpers ------------------------------------------------------------------------

def _add_prior_args(p):
    p.add_argument("--prior", choices=["uniform", "reciprocal", "rissanen"], help="prior on N")
    p.add_argument("--n-upper", type=int, help="upper bound on N")
    p.add_argument("--u-lower", type=float, help="lower bound on u (default 0.5)")
    p.add_argument("--u-upper", type=float, help="upper bound on u (default 1000)")
    p.add_argument("--mode", choices=sorted(MODE_NAMES), help="full Bayes or penalized likelihood")
    p.add_argument("--iters", type=int, help="total iterations")
    p.add_argument("--burnin", type=int, help="discarded iterations")
    p.add_argument("--thin", type=int, help="keep every k-th draw")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--step-c", type=float, help="random-walk scale for canonical moments")
    p.add_argument("--step-log-u", type=float, help="random-walk scale for log u")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bpmix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="sample the posterior of N for a dataset")
    fit.add_argument("dataset", help="fixture name or path to a k,f file")
    fit.add_argument("--mstar", type=int, help="number of moments (default: M, or M-1 for a tail cell)")
    _add_prior_args(fit)
    fit.add_argument("--chains", type=int, help="independent chains (seeds seed, seed+1, ...)")
    fit.add_argument("--store-c", action="store_true", default=None, help="also store canonical moments")
    fit.add_argument("--max-lag", type=int, help="largest acf lag written")
    fit.add_argument("--diag-thin", type=int, help="second thinning factor for acf.csv (default 50)")
    fit.add_argument("--config", help="JSON file of option values")
    fit.add_argument("--out", help="output directory")

    sim = sub.add_parser("simulate", help="replication study over mixing settings")
    sim.add_argument("--setting", type=int, action="append", help=f"setting 1..{len(SETTINGS)} (repeatable)")
    sim.add_argument("--reps", type=int, help="replications per setting")
    sim.add_argument("--true-n", type=int, help="population size")
    sim.add_argument("--mstar", type=int, help="number of moments (default 10)")
    _add_prior_args(sim)
    sim.add_argument("--gamma-convention", choices=GAMMA_CONVENTIONS,
                     help="second gamma parameter is a rate or a scale")
    sim.add_argument("--workers", type=int, help="parallel replications")
    sim.add_argument("--config", help="JSON file of option values")
    sim.add_argument("--out", help="output directory")

    chao = sub.add_parser("chao", help="Chao's lower bound n + f1^2 / (2 f2)")
    chao.add_argument("dataset")

    diag = sub.add_parser("diagnose", help="trace, acf and ESS of a stored chain")
    diag.add_argument("chain", help="chain CSV written by fit")
    diag.add_argument("--thin", type=int, help="re-thinning factor")
    diag.add_argument("--max-lag", type=int, help="largest acf lag written")
    diag.add_argument("--out", help="output directory")

    rerun = sub.add_parser("rerun", help="repeat a run from its manifest.json")
    rerun.add_argument("manifest")
    rerun.add_argument("--out", help="write to this directory instead of the recorded one")
    return parser


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path}: {exc}") from None
    if not isinstance(cfg, dict) or any(isinstance(v, (dict, list)) for v in cfg.values()):
        raise UsageError(f"config file {path} must be a flat JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _resolve(args, defaults: dict) -> dict:
    """CLI flags over config file over defaults."""
    cfg = _load_config(getattr(args, "config", None))
    unknown = set(cfg) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else cfg.get(key, default)
    return out


def _out_dir(args, default_name: str) -> Path:
    root = args.out or os.path.join(os.environ.get(ENV_OUT, "bpmix_out"), default_name)
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _configs(o: dict):
    prior = PriorConfig(n_prior=o["prior"], u_lower=o["u_lower"], u_upper=o["u_upper"],
                        n_upper=o["n_upper"])
    sampler = SamplerConfig(iterations=o["iters"], burn_in=o["burnin"], thin=o["thin"],
                            seed=o["seed"], step_c=o["step_c"], step_log_u=o["step_log_u"],
                            n_chains=o.get("chains", 1), store_c=bool(o.get("store_c", False)))
    return prior, sampler


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(out: Path, command: str, reference, options: dict, outputs: list, started: str,
              argv: list):
    _write_json(out / "manifest.json", {
        "command": command,
        "reference": reference,
        "options": options,
        "argv": argv,
        "seed": options.get("seed"),
        "version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "started": started,
        "finished": _now(),
        "outputs": {p.name: _sha256(p) for p in outputs},
    })


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _acf_or_nan(x, max_lag):
    try:
        return acf(x, max_lag)
    except ValueError:
        return np.full(min(max_lag, max(len(x) - 1, 0)) + 1, np.nan)


def _histogram(samples):
    x = np.asarray(samples, dtype=np.int64)
    lo = int(x.min())
    q25, q75 = np.percentile(x, [25, 75])
    width = max(1, int(math.ceil(2 * (q75 - q25) / len(x) ** (1 / 3))))
    counts = np.bincount((x - lo) // width)
    return [(lo + i * width, lo + (i + 1) * width - 1, int(c), c / (len(x) * width))
            for i, c in enumerate(counts)]


# --- commands -------------------------------------------------------------------------

def cmd_fit(args, argv) -> int:
    started = _now()
    o = _resolve(args, FIT_DEFAULTS)
    table = load_dataset(args.dataset)
    mstar = o["mstar"]
    if mstar is None:
        mstar = table.M - 1 if table.tail else table.M
    if mstar < 1:
        raise UsageError(f"--mstar must be positive, got {mstar}")
    if table.tail and mstar >= table.M:
        raise DataError(f"{table.label}: the last cell is open-ended ({table.M}+); "
                        f"use --mstar {table.M - 1} or less")
    trunc = right_truncate(table, mstar)
    prior, sampler = _configs(o)
    mode = MODE_NAMES[o["mode"]]
    chains = run_chains(trunc.table, prior, sampler, mode, m_star=mstar)

    out = _out_dir(args, f"fit-{table.label}")
    outputs = []
    for i, chain in enumerate(chains, start=1):
        path = out / ("chain.csv" if len(chains) == 1 else f"chain_{i}.csv")
        chain.to_csv(path)
        outputs.append(path)
    pooled_N = np.concatenate([ch.samples_N for ch in chains])
    report = summarize(pooled_N, trunc.tail_units)

    try:
        chao = chao_lower_bound(table)
    except DataError:
        chao = None
    label = {"uniform": "BPM", "reciprocal": "BPM_1/N", "rissanen": "BPM_Rissanen"}[prior.n_prior]
    if mode == "penalized":
        label += "_penalized"
    rows = [(label, report.point, report.interval_lower, report.interval_upper)]
    if chao is not None:
        rows.append(("Chao", round(chao, 1), None, None))
    text = format_report_table(rows)
    notes = [f"dataset {table.label}: n = {table.n}, M* = {mstar}, mode of N = {report.posterior_mode}"]
    if trunc.tail_units:
        notes.append(f"tail adjustment: +{trunc.tail_units} units with count > {mstar} "
                     f"added to every estimate")
    text += "".join(n + "\n" for n in notes)

    summary = {
        "dataset": table.label, "n": table.n, "M": table.M, "m_star": mstar,
        "tail_units": trunc.tail_units, "mode": mode, "prior": asdict(prior),
        "sampler": asdict(sampler), "estimate": report.to_dict(),
        "mean_N": float(np.mean(pooled_N)) + trunc.tail_units,
        "chao_lower_bound": chao,
        "chains": [{"seed": ch.seed, "acceptance_rates": ch.acceptance_rates,
                    "ess": {k: ess(getattr(ch, f"samples_{k}")) for k in ("N", "u", "m1")}}
                   for ch in chains],
    }
    _write_json(out / "summary.json", summary)
    (out / "summary.txt").write_text(text)

    first = chains[0]
    max_lag, dthin = o["max_lag"], o["diag_thin"]
    a1 = _acf_or_nan(first.samples_N, max_lag)
    a2 = _acf_or_nan(first.thinned(dthin).samples_N, max_lag) if len(first) >= 2 * dthin else []
    _write_csv(out / "acf.csv", ["lag", "acf_thin_1", f"acf_thin_{dthin}"],
               [(k, a1[k] if k < len(a1) else None, a2[k] if k < len(a2) else None)
                for k in range(max_lag + 1)])
    _write_csv(out / "hist.csv", ["N_lower", "N_upper", "count", "density"],
               [(lo + trunc.tail_units, hi + trunc.tail_units, c, d)
                for lo, hi, c, d in _histogram(pooled_N)])
    outputs += [out / "summary.json", out / "summary.txt", out / "acf.csv", out / "hist.csv"]
    _manifest(out, "fit", args.dataset, dict(o, mstar=mstar), outputs, started, argv)
    print(text, end="")
    return EXIT_OK


def cmd_simulate(args, argv) -> int:
    started = _now()
    o = _resolve(args, SIM_DEFAULTS)
    settings = o["setting"] or [1]
    if isinstance(settings, int):
        settings = [settings]
    bad = [s for s in settings if s not in SETTINGS]
    if bad:
        raise UsageError(f"unknown setting(s) {bad}; choose 1..{len(SETTINGS)}")
    if o["gamma_convention"] not in GAMMA_CONVENTIONS:
        raise UsageError(f"gamma_convention must be one of {GAMMA_CONVENTIONS}")
    prior, sampler = _configs(o)
    out = _out_dir(args, "simulate")
    csv_path = out / "study.csv"
    results = run_study(settings, true_N=o["true_n"], reps=o["reps"], m_star=o["mstar"],
                        prior=prior, sampler=sampler, mode=MODE_NAMES[o["mode"]], seed=o["seed"],
                        gamma_convention=o["gamma_convention"], results_path=csv_path,
                        workers=o["workers"])
    write_study_json(results, out / "study.json")
    lines = ["setting  reps  fail   median      rmse  coverage     width"]
    for r in results:
        lines.append(f"{r.setting:>7}  {r.replications:>4}  {r.failures:>4}  {r.median_point:>7.1f}  "
                     f"{r.rmse:>8.2f}  {r.coverage:>8.2f}  {r.mean_width:>8.1f}")
    print("\n".join(lines))
    _manifest(out, "simulate", settings, dict(o, setting=settings), [csv_path, out / "study.json"],
              started, argv)
    return EXIT_OK


def cmd_chao(args, argv) -> int:
    table = load_dataset(args.dataset)
    value = chao_lower_bound(table)
    print(f"{round(value)}  (n = {table.n}, f1 = {table[1]}, f2 = {table[2]}, exact {value:.2f})")
    return EXIT_OK


def cmd_diagnose(args, argv) -> int:
    started = _now()
    o = _resolve(args, DIAG_DEFAULTS)
    path = Path(args.chain)
    if not path.is_file():
        raise DataError(f"chain file {path} not found")
    chain = Chain.from_csv(path)
    if o["thin"] < 1:
        raise UsageError("--thin must be at least 1")
    chain = chain.thinned(o["thin"])
    if len(chain) == 0:
        raise DataError(f"no draws left after thinning by {o['thin']}")
    out = _out_dir(args, f"diagnose-{path.stem}")
    cols = {"N": chain.samples_N, "u": chain.samples_u, "m1": chain.samples_m1}
    _write_csv(out / "trace.csv", ["iter", "N", "u", "m1"],
               zip(chain.iters.tolist(), chain.samples_N.tolist(), chain.samples_u, chain.samples_m1))
    acfs = {k: _acf_or_nan(v, o["max_lag"]) if len(v) > 1 else [] for k, v in cols.items()}
    _write_csv(out / "acf.csv", ["lag", "N", "u", "m1"],
               [(k,) + tuple(acfs[c][k] if k < len(acfs[c]) else None for c in cols)
                for k in range(o["max_lag"] + 1)])
    _write_csv(out / "scatter.csv", ["N", "u", "m1"],
               zip(chain.samples_N.tolist(), chain.samples_u, chain.samples_m1))
    report = {"draws": len(chain), "thin": o["thin"],
              "ess": {k: ess(v) for k, v in cols.items()},
              "mean": {k: float(np.mean(v)) for k, v in cols.items()}}
    _write_json(out / "ess.json", report)
    print(f"{len(chain)} draws after thinning by {o['thin']}")
    for k in cols:
        print(f"  ESS {k:>2}: {report['ess'][k]:.1f}")
    outputs = [out / n for n in ("trace.csv", "acf.csv", "scatter.csv", "ess.json")]
    _manifest(out, "diagnose", str(path), o, outputs, started, argv)
    return EXIT_OK


def cmd_rerun(args, argv) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        old_argv = list(manifest["argv"])
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read manifest {args.manifest}: {exc}") from None
    if "--out" in old_argv:
        i = old_argv.index("--out")
        del old_argv[i:i + 2]
    out = args.out or str(Path(args.manifest).resolve().parent)
    return main(old_argv + ["--out", out])


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "chao": cmd_chao,
            "diagnose": cmd_diagnose, "rerun": cmd_rerun}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"bpmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"bpmix: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SamplerError, MomentSpaceError, ArithmeticError) as exc:
        print(f"bpmix: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"bpmix: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
