"""Command-line front end.

Exit codes: 0 success, 2 configuration error (the message names the key),
3 runtime failure (non-convergence, no matching prior, I/O). Reports are
canonical JSON embedding the effective configuration, the seed and the
package version, so re-running from a report reproduces it byte for byte.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bias_lab import EabReport, eab_bayes, eab_hybrid, eab_mle, limit_oracle
from .config import COMMAND_KEYS, COMMANDS, KEYS, CliConfig, ConfigError, read_config_file
from .estimators import (
    LossSpec,
    McmcConfig,
    OptimizerConfig,
    PriorSpec,
    bayes_estimate,
    ferguson_mle,
    ferguson_posterior_mean,
    hybrid_estimate,
    mixture_bayes,
    mixture_hybrid_em,
    mixture_mle_em,
    mle_estimate,
    schwartz_bayes,
    schwartz_bayes_quadrature,
    schwartz_mle,
)
from .estimators.counterexamples import DerivativeFree, FergusonModel, SchwartzModel
from .estimators.priors import Normal
from .expansion import bayes_terms, hybrid_terms, map_terms, mle_terms
from .model_kit.base import empirical_stats
from .model_kit.bundled import MODEL_NAMES, GaussianMixture, get_model
from .model_kit.io import ingest_csv
from .prior_forge import box_grid, curl_check, drift_field, example1_premise_check, jeffreys_log_prior, solve_prior
from .sim_bench import replication_seeds, report_csv, run_simulation, scenario_config

OUTPUT_ENV = "BFHYBRID_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
_SIZED = {"mvn": "p", "exprates": "d", "mixture": "k"}
_NEGATIVE_LIST = re.compile(r"^-\.?\d[\d.,eE+-]*$")

log = logging.getLogger("bfhybrid")


class RuntimeFailure(RuntimeError):
    """Failure after a valid configuration; a partial report may still be written."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report


# -- argument parsing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bfhybrid", description="Hybrid Bayes/MLE estimation and diagnostics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    for command, actions in COMMANDS.items():
        p = sub.add_parser(command, help=_COMMAND_HELP[command], argument_default=argparse.SUPPRESS)
        # let comma lists such as "-1,0.5" through as values
        p._negative_number_matcher = _NEGATIVE_LIST
        if actions:
            p.add_argument("action", choices=actions)
        p.add_argument("--config", help="flat key = value configuration file (flags win)")
        for key in COMMAND_KEYS[command]:
            flags = ["--" + key.replace("_", "-")] + (["--" + key] if "_" in key else [])
            if key == "verbose":
                p.add_argument("-v", *flags, action="count", help=KEYS[key].help)
            elif key == "prior":
                p.add_argument(*flags, action="append", metavar="SPEC", help=KEYS[key].help)
            else:
                p.add_argument(*flags, dest=key, metavar=key.upper(), help=KEYS[key].help)
    return parser


_COMMAND_HELP = {
    "estimate": "point estimates from a data file",
    "expand": "asymptotic expansion terms at a parameter point",
    "eab": "expected asymptotic biases and the preferred estimator",
    "prior": "matching prior, Jeffreys prior or premise check on a box grid",
    "simulate": "seeded Monte Carlo studies",
    "demo": "inconsistency demonstrations",
}


# -- shared helpers -----------------------------------------------------------------


def resolve_model(name: str):
    m = re.fullmatch(r"(mvn|exprates|mixture)(\d+)", name)
    try:
        if m:
            return get_model(m[1], **{_SIZED[m[1]]: int(m[2])})
        if name in MODEL_NAMES or name in _SIZED:
            return get_model(name)
    except (KeyError, ValueError) as exc:
        raise ConfigError("model", str(exc)) from None
    raise ConfigError("model", f"unknown {name!r}; choose from {MODEL_NAMES} (mvn<p>, exprates<d>, mixture<k> also accepted)")


def _resolve_alpha(model, alpha) -> tuple:
    names = model.space.names
    out = []
    for a in alpha:
        if a in names:
            out.append(names.index(a))
        elif re.fullmatch(r"\d+", a) and int(a) < len(names):
            out.append(int(a))
        else:
            raise ConfigError("alpha", f"unknown parameter {a!r}; choose from {names}")
    return tuple(sorted(set(out)))


def _parse_prior(model, specs) -> PriorSpec:
    try:
        return PriorSpec.parse(specs, model.space.names)
    except ValueError as exc:
        raise ConfigError("prior", str(exc)) from None


def _parse_loss(text) -> LossSpec:
    try:
        return LossSpec.parse(text)
    except ValueError as exc:
        raise ConfigError("loss", str(exc)) from None


def _exponents(loss: LossSpec, d: int, what: str):
    if loss.kind == "zero_one":
        raise ConfigError("loss", f"{what} needs a squared or power loss")
    try:
        return tuple(int(a) for a in loss.exponents_for(d))
    except ValueError as exc:
        raise ConfigError("loss", str(exc)) from None


def _check_point(model, theta, key):
    try:
        return model.space.check(np.asarray(theta, dtype=float))
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def _hybrid_alpha(model, cfg, prior: PriorSpec) -> tuple:
    if cfg["alpha"]:
        alpha = _resolve_alpha(model, cfg["alpha"])
    elif not prior.is_flat:
        alpha = tuple(sorted(prior.coords))
    else:
        alpha = model.space.alpha
    if not alpha or len(alpha) == model.space.d:
        raise ConfigError("alpha", f"the hybrid needs a proper, non-empty Bayes block, got {alpha}")
    return alpha


def _load_data(path, model):
    try:
        return model.as_obs(ingest_csv(path).values)
    except OSError as exc:
        raise RuntimeFailure(f"data: cannot read {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise ConfigError("data", str(exc)) from None


def _optimizer(cfg) -> OptimizerConfig:
    return OptimizerConfig(
        tol=cfg["tol"], max_iter=cfg["max_iter"], restarts=cfg["restarts"], seed=cfg["seed"],
        mcmc=McmcConfig(cfg["mcmc_length"], cfg["mcmc_burn_in"]),
    )


def jsonable(obj):
    """Plain JSON types from numpy scalars/arrays, tuples and dataclass-free containers."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def named(names, values) -> dict:
    return {n: float(v) for n, v in zip(names, np.asarray(values, dtype=float).reshape(-1))}


# -- estimate --------------------------------------------------------------------------


def cmd_estimate(cfg: CliConfig) -> tuple:
    model = resolve_model(cfg["model"])
    loss = _parse_loss(cfg["loss"])
    action = cfg.action
    if isinstance(model, DerivativeFree):
        return _estimate_counterexample(model, cfg, loss)
    x = _load_data(cfg["data"], model)
    opt = _optimizer(cfg)
    if isinstance(model, GaussianMixture):
        res = _estimate_mixture(model, x, cfg, loss, opt)
    else:
        prior = _parse_prior(model, cfg["prior"])
        try:
            if action == "mle":
                if cfg["prior"]:
                    raise ConfigError("prior", "the MLE takes no prior")
                res = mle_estimate(model, x, config=opt)
            elif action == "bayes":
                res = bayes_estimate(model, x, prior, loss, opt)
            else:
                res = hybrid_estimate(model, x, prior, loss, alpha=_hybrid_alpha(model, cfg, prior), config=opt)
        except ConfigError:
            raise
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise RuntimeFailure(f"{action}: {exc}") from None
    result = {
        "names": list(model.space.names),
        "estimate": named(model.space.names, res.theta),
        "objective": float(res.objective),
        "iterations": int(res.iterations),
        "converged": bool(res.converged),
        "diagnostics": jsonable(res.diagnostics),
        "n": int(len(x)),
    }
    if hasattr(res, "alpha"):
        result["alpha"] = [model.space.names[k] for k in res.alpha]
    status = "ok" if res.converged else "not_converged"
    return result, status


def _estimate_counterexample(model, cfg, loss):
    if cfg.action == "hybrid":
        raise ConfigError("model", f"{model.name} has one parameter; the hybrid needs two blocks")
    if cfg["prior"]:
        raise ConfigError("prior", f"{model.name} uses a fixed uniform prior")
    if cfg.action == "bayes" and loss.kind != "squared":
        raise ConfigError("loss", f"the {model.name} Bayes rule is the posterior mean (loss squared)")
    x = _load_data(cfg["data"], model)
    try:
        if isinstance(model, FergusonModel):
            value = ferguson_mle(x, model.c) if cfg.action == "mle" else ferguson_posterior_mean(x, model.c)
        else:
            value = schwartz_mle(x) if cfg.action == "mle" else schwartz_bayes(x)
    except ValueError as exc:
        raise ConfigError("data", str(exc)) from None
    result = {"names": list(model.space.names), "estimate": named(model.space.names, [value]), "converged": True, "n": int(len(x))}
    if isinstance(model, SchwartzModel) and cfg.action == "bayes":
        result["quadrature_check"] = schwartz_bayes_quadrature(x)
    return result, "ok"


def _mixture_mean_priors(model, prior: PriorSpec):
    k = model.k
    means = {}
    for term in prior.terms:
        if len(term.coords) != 1 or not isinstance(term.dist, Normal) or term.coords[0] not in model.space.alpha:
            raise ConfigError("prior", "mixture priors must be normal priors on the component means alpha1..alpha%d" % k)
        means[term.coords[0]] = (term.dist.mean, term.dist.var)
    if sorted(means) != list(model.space.alpha):
        raise ConfigError("prior", f"give a normal prior for each of alpha1..alpha{k}")
    return [means[c] for c in model.space.alpha]


def _estimate_mixture(model, x, cfg, loss, opt):
    k = model.k
    if cfg.action == "mle":
        if cfg["prior"]:
            raise ConfigError("prior", "the MLE takes no prior")
        return mixture_mle_em(x, k, config=opt)
    priors = _mixture_mean_priors(model, _parse_prior(model, cfg["prior"]))
    if cfg.action == "hybrid":
        if loss.kind != "zero_one":
            raise ConfigError("loss", "the mixture hybrid is the penalized EM fit, i.e. loss zero_one on the means")
        return mixture_hybrid_em(x, k, priors, config=opt)
    if loss.kind != "squared":
        raise ConfigError("loss", "the mixture Bayes rule is the posterior mean (loss squared)")
    return mixture_bayes(x, k, priors, opt)


# -- expand ---------------------------------------------------------------------------


def _require_derivatives(model):
    if isinstance(model, DerivativeFree):
        raise ConfigError("model", f"{model.name} has no likelihood derivatives")


def cmd_expand(cfg: CliConfig) -> tuple:
    model = resolve_model(cfg["model"])
    _require_derivatives(model)
    theta0 = _check_point(model, cfg["theta"], "theta")
    x = _load_data(cfg["data"], model)
    prior = _parse_prior(model, cfg["prior"])
    loss = _parse_loss(cfg["loss"])
    d = model.space.d
    stats = empirical_stats(model, x, theta0)
    action = cfg.action
    if action == "mle":
        if cfg["prior"]:
            raise ConfigError("prior", "the MLE takes no prior")
        t = mle_terms(stats)
    elif action == "map":
        t = map_terms(stats, prior.derivatives(theta0))
    elif action == "bayes":
        t = bayes_terms(stats, prior.derivatives(theta0), _exponents(loss, d, "the Bayes expansion"), cfg["normalization"], cfg["q2_form"])
    else:
        alpha = _hybrid_alpha(model, cfg, prior)
        t = hybrid_terms(
            stats, prior.derivatives(theta0, alpha), _exponents(loss, len(alpha), "the hybrid expansion"),
            alpha, cfg["normalization"], cfg["q2_form"],
        )
    n = int(stats.n)
    result = {
        "names": list(model.space.names),
        "kind": t.kind,
        "n": n,
        "terms": [jsonable(v) for v in t.terms],
        "corrections": jsonable(t.corrections),
        "approximation": named(model.space.names, t.estimate(theta0, n)),
    }
    return result, "ok"


# -- eab -----------------------------------------------------------------------------------


def cmd_eab(cfg: CliConfig) -> tuple:
    model = resolve_model(cfg["model"])
    _require_derivatives(model)
    theta = _check_point(model, cfg["theta"], "theta")
    prior = _parse_prior(model, cfg["prior"])
    loss = _parse_loss(cfg["loss"])
    d = model.space.d
    conv, normz = cfg["convention"], cfg["normalization"]
    mle = eab_mle(model, theta, conv)
    bayes = eab_bayes(model, theta, prior.derivatives(theta), _exponents(loss, d, "the Bayes bias"), conv, normz)
    hybrid = None
    alpha = None
    if cfg["alpha"] or not prior.is_flat or 0 < len(model.space.alpha) < d:
        alpha = _hybrid_alpha(model, cfg, prior)
        hybrid = eab_hybrid(
            model, theta, prior.derivatives(theta, alpha), _exponents(loss, len(alpha), "the hybrid bias"), alpha, conv, normz
        )
    oracle = limit_oracle(model, theta, cfg["oracle_draws"], cfg["seed"]) if cfg["oracle_draws"] else None
    report = EabReport(mle, bayes, hybrid, cfg["norm"], oracle)
    result = {"names": list(model.space.names), **jsonable(report.to_dict())}
    if alpha is not None:
        result["alpha"] = [model.space.names[k] for k in alpha]
    return result, "ok"


# -- prior ----------------------------------------------------------------------------------


def _box(model, coords, cfg):
    lo = np.asarray(model.space.lower, dtype=float)[list(coords)]
    hi = np.asarray(model.space.upper, dtype=float)[list(coords)]
    for key, given, default in (("lower", cfg["lower"], lo), ("upper", cfg["upper"], hi)):
        if given is not None and len(given) != len(coords):
            raise ConfigError(key, f"needs {len(coords)} values, got {len(given)}")
    lo = lo if cfg["lower"] is None else np.asarray(cfg["lower"], dtype=float)
    hi = hi if cfg["upper"] is None else np.asarray(cfg["upper"], dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ConfigError("lower", "the parameter box is unbounded; give finite lower and upper")
    if np.any(lo >= hi):
        raise ConfigError("upper", "must exceed lower in every coordinate")
    return lo, hi


def _prior_setup(cfg):
    model = resolve_model(cfg["model"])
    _require_derivatives(model)
    d = model.space.d
    coords = _resolve_alpha(model, cfg["alpha"]) if cfg["alpha"] else tuple(range(d))
    rest = tuple(k for k in range(d) if k not in coords)
    beta1 = np.asarray(cfg["beta1"], dtype=float)
    if len(beta1) != len(rest):
        raise ConfigError("beta1", f"needs {len(rest)} values for {[model.space.names[k] for k in rest]}, got {len(beta1)}")
    lo, hi = _box(model, coords, cfg)
    grid = box_grid(lo, hi, cfg["grid"])
    ref = None
    if cfg["reference"] is not None:
        ref = np.asarray(cfg["reference"], dtype=float)
        if ref.shape != (len(coords),) or np.any(ref <= lo) or np.any(ref >= hi):
            raise ConfigError("reference", "must be a point inside the box")
    return model, coords, rest, beta1, lo, hi, grid, ref


def _full_point(d, coords, rest, point, beta1):
    th = np.empty(d)
    th[list(coords)] = point
    th[list(rest)] = beta1
    return th


def cmd_prior(cfg: CliConfig) -> tuple:
    model, coords, rest, beta1, lo, hi, grid, ref = _prior_setup(cfg)
    names = [model.space.names[k] for k in coords]
    loss = _parse_loss(cfg["loss"])
    base = {"names": names, "lower": lo.tolist(), "upper": hi.tolist()}
    if rest:
        base["fixed"] = named([model.space.names[k] for k in rest], beta1)
    if cfg.action == "jeffreys":
        ref = (lo + hi) / 2 if ref is None else ref
        j0 = jeffreys_log_prior(model, _full_point(model.space.d, coords, rest, ref, beta1), coords)
        rows = [[*p.tolist(), jeffreys_log_prior(model, _full_point(model.space.d, coords, rest, p, beta1), coords) - j0] for p in grid]
        return {**base, "reference": ref.tolist(), "columns": names + ["logpi"], "rows": rows}, "ok"
    exps = _exponents(loss, len(coords), "the matching prior")
    field = drift_field(model, exps, cfg["normalization"], coords if rest else None, beta1 if rest else None, lo, hi)
    if cfg.action == "check":
        if rest:
            raise ConfigError("alpha", "the premise check applies to the full parameter")
        premise = example1_premise_check(model, grid)
        curl = curl_check(field, grid)
        result = {**base, "premise": jsonable(vars(premise)), "curl": _curl_dict(curl)}
        return result, "ok"
    sol = solve_prior(field, ref, grid)
    result = {**base, "reference": sol.reference_point.tolist(), "curl": _curl_dict(sol.curl_report)}
    if not sol.curl_report.symmetric:
        raise RuntimeFailure("no matching prior: the drift field is not curl free on the grid", result)
    result["columns"] = names + ["logpi"]
    result["rows"] = [list(r) for r in sol.grid_rows(grid)]
    return result, "ok"


def _curl_dict(c) -> dict:
    return {
        "curl_free": bool(c.symmetric),
        "max_violation": float(c.max_violation),
        "worst_point": None if c.worst_point is None else np.asarray(c.worst_point).tolist(),
        "tol": float(c.tol),
        "points": int(c.points),
    }


# -- simulate ---------------------------------------------------------------------------------


def _sim_config(cfg: CliConfig):
    kw = {
        "n": tuple(cfg["n"]), "reps": cfg["reps"], "seed": cfg["seed"], "estimators": tuple(cfg["estimators"]),
        "mcmc_length": cfg["mcmc_length"], "mcmc_burn_in": cfg["mcmc_burn_in"],
        "mean_prior_means": tuple(cfg["mean_prior_means"]), "mean_prior_vars": tuple(cfg["mean_prior_vars"]),
        "c": cfg["c"], "alpha0": cfg["alpha0"], "beta0": cfg["beta0"],
    }
    if cfg["theta0"] is not None:
        kw["theta0"] = tuple(cfg["theta0"])
    try:
        return scenario_config(cfg.action, **kw)
    except ValueError as exc:
        key = str(exc).split(":", 1)[0]
        raise ConfigError(key if key in KEYS else "simulate", str(exc).split(": ", 1)[-1]) from None


def cmd_simulate(cfg: CliConfig) -> tuple:
    sim = _sim_config(cfg)
    report = run_simulation(sim, workers=cfg["workers"])
    status = "flagged" if report.flagged else "ok"
    if report.flagged:
        log.warning("simulation flagged: failures %s", report.failures)
    return report, status


# -- demo -----------------------------------------------------------------------------------------


def _reps(cfg):
    return cfg["reps"] or 50


def cmd_demo(cfg: CliConfig) -> tuple:
    seed, c = cfg["seed"], cfg["c"]
    rows = []
    if cfg.action == "ferguson":
        try:
            model = FergusonModel(c)
            model.space.check([cfg["alpha0"]])
        except ValueError as exc:
            raise ConfigError("c" if "c must" in str(exc) else "alpha0", str(exc)) from None
        for n in cfg["n"]:
            mle, bayes = [], []
            for rep in range(_reps(cfg)):
                x = model.sample([cfg["alpha0"]], n, np.random.default_rng(replication_seeds(seed, n, rep)[0]))
                mle.append(ferguson_mle(x, c))
                bayes.append(ferguson_posterior_mean(x, c))
            mle, bayes = np.array(mle), np.array(bayes)
            rows.append({
                "n": n, "median_mle": float(np.median(mle)), "median_bayes": float(np.median(bayes)),
                "median_abs_error_mle": float(np.median(np.abs(mle - cfg["alpha0"]))),
                "median_abs_error_bayes": float(np.median(np.abs(bayes - cfg["alpha0"]))),
                "share_mle_above_0.9": float(np.mean(mle > 0.9)),
            })
        return {"alpha0": cfg["alpha0"], "c": c, "reps": _reps(cfg), "rows": rows}, "ok"
    model = SchwartzModel()
    try:
        model.support([cfg["beta0"]])
    except ValueError as exc:
        raise ConfigError("beta0", str(exc)) from None
    for n in cfg["n"]:
        mle, bayes, quad = [], [], []
        for rep in range(_reps(cfg)):
            y = model.sample([cfg["beta0"]], n, np.random.default_rng(replication_seeds(seed, n, rep)[0]))
            mle.append(schwartz_mle(y))
            bayes.append(schwartz_bayes(y))
            quad.append(schwartz_bayes_quadrature(y))
        mle, bayes, quad = map(np.array, (mle, bayes, quad))
        rows.append({
            "n": n, "median_mle": float(np.median(mle)), "median_bayes": float(np.median(bayes)),
            "median_abs_error_mle": float(np.median(np.abs(mle - cfg["beta0"]))),
            "median_abs_error_bayes": float(np.median(np.abs(bayes - cfg["beta0"]))),
            "max_quadrature_gap": float(np.max(np.abs(bayes - quad))),
            "max_gap_to_2": float(np.max(2.0 - bayes)),
        })
    return {"beta0": cfg["beta0"], "reps": _reps(cfg), "rows": rows}, "ok"


COMMAND_FUNCS = {
    "estimate": cmd_estimate,
    "expand": cmd_expand,
    "eab": cmd_eab,
    "prior": cmd_prior,
    "simulate": cmd_simulate,
    "demo": cmd_demo,
}
CSV_COMMANDS = {("simulate", "table1"), ("simulate", "consistency"), ("prior", "match"), ("prior", "jeffreys")}


# -- reports -----------------------------------------------------------------------------------------


def make_report(cfg: CliConfig, result, status: str) -> dict:
    body = result.to_dict() if hasattr(result, "to_dict") else result
    return jsonable({
        "command": cfg.command,
        "action": cfg.action,
        "config": cfg.echo(),
        "seed": cfg["seed"],
        "version": __version__,
        "status": status,
        "result": body,
    })


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1) + "\n"


def _rows_csv(result: dict) -> str:
    lines = [",".join(result["columns"])]
    lines += [",".join(repr(float(v)) for v in row) for row in result["rows"]]
    return "\n".join(lines) + "\n"


def _destination(cfg: CliConfig, environ) -> Path | None:
    if cfg["out"]:
        return Path(cfg["out"])
    base = environ.get(OUTPUT_ENV)
    if base:
        stem = f"{cfg.command}_{cfg.action}" if cfg.action else cfg.command
        return Path(base) / f"{stem}.{cfg['format']}"
    return None


def emit(cfg: CliConfig, result, report: dict, environ, stdout, failed: bool = False) -> list:
    """Write the report (and a JSON sidecar for CSV output); returns the paths written.

    A failed run is written as JSON only, next to where the CSV would go.
    """
    fmt = "json" if failed else cfg["format"]
    if fmt == "csv":
        text = report_csv(result) if cfg.command == "simulate" else _rows_csv(report["result"])
    else:
        text = report_json(report)
    dest = _destination(cfg, environ)
    if failed and dest is not None:
        dest = dest.with_suffix(".json")
    if dest is None:
        stdout.write(text)
        return []
    written = []
    try:
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_text(text)
        written.append(dest)
        if fmt == "csv":
            side = dest.with_suffix(".json")
            side.write_text(report_json(report))
            written.append(side)
    except OSError as exc:
        raise RuntimeFailure(f"out: cannot write {dest}: {exc.strerror}") from None
    return written


@contextlib.contextmanager
def _logging_to(stream, verbose: int):
    """Route the package logger to ``stream`` for one command, then restore it."""
    h = logging.StreamHandler(stream)
    h.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    level, propagate = log.level, log.propagate
    log.addHandler(h)
    log.setLevel([logging.WARNING, logging.INFO, logging.DEBUG][min(max(verbose, 0), 2)])
    log.propagate = False
    try:
        yield
    finally:
        log.removeHandler(h)
        log.setLevel(level)
        log.propagate = propagate


def parse_and_dispatch(argv=None, environ=None, stdout=None, stderr=None) -> int:
    """Run one command; returns the exit code."""
    environ = os.environ if environ is None else environ
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    flags = vars(ns).copy()
    command = flags.pop("command")
    action = flags.pop("action", "")
    path = flags.pop("config", None)
    try:
        file_values = read_config_file(path) if path is not None else {}
        cfg = CliConfig.build(command, action, file_values, flags)
        if cfg["format"] == "csv" and (command, action) not in CSV_COMMANDS:
            raise ConfigError("format", f"csv output is only available for {sorted(CSV_COMMANDS)}")
        with _logging_to(stderr, cfg["verbose"]):
            log.info("effective config: %s", json.dumps(cfg.echo(), sort_keys=True))
            result, status = COMMAND_FUNCS[command](cfg)
            report = make_report(cfg, result, status)
            written = emit(cfg, result, report, environ, stdout)
            for p in written:
                log.info("wrote %s", p)
    except ConfigError as exc:
        print(f"bfhybrid: config error: {exc}", file=stderr)
        return EXIT_CONFIG
    except RuntimeFailure as exc:
        if exc.report is not None:
            try:
                emit(cfg, exc.report, make_report(cfg, exc.report, "failed"), environ, stdout, failed=True)
            except RuntimeFailure:
                pass
        print(f"bfhybrid: error: {exc}", file=stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"bfhybrid: error: {exc}", file=stderr)
        return EXIT_RUNTIME
    if status == "not_converged":
        print("bfhybrid: error: the estimator did not converge (report written)", file=stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    return parse_and_dispatch(argv)
