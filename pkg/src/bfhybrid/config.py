"""Command-line configuration: typed keys, flat key-value files and flag merging.

A configuration file holds one ``key = value`` pair per line, where the
value is a JSON literal or a bare string, with ``#`` comments and blank
lines ignored. A JSON object is accepted too, and so is a report written by
the command line, whose embedded ``config`` object is used.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .sim_bench import TABLE1_THETA0

COMMANDS = {
    "estimate": ("mle", "bayes", "hybrid"),
    "expand": ("mle", "map", "bayes", "hybrid"),
    "eab": (),
    "prior": ("match", "jeffreys", "check"),
    "simulate": ("table1", "consistency"),
    "demo": ("ferguson", "schwartz"),
}
OUTPUT_KEYS = ("out", "format", "verbose", "workers")
FORMATS = ("json", "csv")
_KEY_RE = re.compile(r"^[a-z][a-z0-9_]*$")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key."""

    def __init__(self, key: str, message: str, line: int | None = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{key}: {message}")


# -- value coercion ----------------------------------------------------------------


def _split(value):
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _as_int(key, v):
    if isinstance(v, bool):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if isinstance(v, int):
        return v
    try:
        return int(str(v).strip())
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {v!r}") from None


def _as_float(key, v):
    if isinstance(v, bool):
        raise ConfigError(key, f"expected a number, got {v!r}")
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {v!r}") from None


def _as_str(key, v):
    if not isinstance(v, (str, int, float)) or isinstance(v, bool):
        raise ConfigError(key, f"expected a string, got {v!r}")
    return str(v)


def _ints(key, v):
    return [_as_int(key, t) for t in _split(v)]


def _floats(key, v):
    return [_as_float(key, t) for t in _split(v)]


def _strs(key, v):
    return [_as_str(key, t) for t in _split(v)]


def _prior_list(key, v):
    # prior specs may contain commas, so a single string is one spec
    items = [v] if isinstance(v, str) else list(v) if isinstance(v, (list, tuple)) else None
    if items is None:
        raise ConfigError(key, f"expected a spec string or a list of them, got {v!r}")
    return [_as_str(key, t) for t in items]


@dataclass(frozen=True)
class Key:
    coerce: object
    default: object = None
    help: str = ""


KEYS = {
    "seed": Key(_as_int, None, "master random seed (required for stochastic commands)"),
    "out": Key(_as_str, None, "output file; defaults to $BFHYBRID_OUTPUT_DIR/<command>_<action>.<format>, else stdout"),
    "format": Key(_as_str, "json", "report format: json or csv"),
    "verbose": Key(_as_int, 0, "log level: 0 warnings, 1 info, 2 debug"),
    "model": Key(_as_str, None, "bundled model name, e.g. gauss2, mvn2, exprates3, mixture3"),
    "data": Key(_as_str, None, "CSV file with one observation per row"),
    "prior": Key(_prior_list, [], "prior term name[,name]:dist:params (repeatable)"),
    "loss": Key(_as_str, "squared", "squared, zero_one[:delta] or power:a1[,a2...]"),
    "alpha": Key(_strs, [], "Bayes-block parameter names or indices"),
    "theta": Key(_floats, None, "parameter point"),
    "tol": Key(_as_float, 1e-8, "optimizer tolerance"),
    "max_iter": Key(_as_int, 200, "optimizer iteration limit"),
    "restarts": Key(_as_int, 5, "optimizer restarts"),
    "mcmc_length": Key(_as_int, 20_000, "retained MCMC draws"),
    "mcmc_burn_in": Key(_as_int, 5_000, "MCMC burn-in draws"),
    "normalization": Key(_as_str, "moment", "Bayes correction normalization: moment or stein"),
    "q2_form": Key(_as_str, "complete", "second Bayes correction: complete or printed"),
    "convention": Key(_as_str, "score", "covariance convention of the leading term: score or inverse"),
    "norm": Key(_as_str, "euclidean", "norm for the bias comparison: euclidean or max"),
    "oracle_draws": Key(_as_int, 0, "draws for the limit-simulation oracle (0 disables)"),
    "beta1": Key(_floats, [], "values held fixed for the non-prior coordinates"),
    "lower": Key(_floats, None, "lower corner of the prior box"),
    "upper": Key(_floats, None, "upper corner of the prior box"),
    "grid": Key(_as_int, 5, "grid points per axis"),
    "reference": Key(_floats, None, "point where the log prior is zero (default: box centre)"),
    "n": Key(_ints, None, "sample size(s)"),
    "reps": Key(_as_int, 0, "replications per sample size (0: scenario default)"),
    "workers": Key(_as_int, 1, "worker processes"),
    "estimators": Key(_strs, None, "estimators to run"),
    "theta0": Key(_floats, None, "true parameter of the simulation"),
    "mean_prior_means": Key(_floats, [], "normal prior means of the mixture component means"),
    "mean_prior_vars": Key(_floats, [], "normal prior variances of the mixture component means"),
    "c": Key(_as_float, 3.0, "Ferguson shape constant (> 2)"),
    "alpha0": Key(_as_float, 0.5, "true Ferguson parameter"),
    "beta0": Key(_as_float, 1.0, "true Schwartz parameter"),
}

_COMMON = ("seed", "out", "format", "verbose")
_OPT = ("tol", "max_iter", "restarts", "mcmc_length", "mcmc_burn_in")
COMMAND_KEYS = {
    "estimate": _COMMON + ("model", "data", "prior", "loss", "alpha") + _OPT,
    "expand": _COMMON + ("model", "data", "theta", "prior", "loss", "alpha", "normalization", "q2_form"),
    "eab": _COMMON + ("model", "theta", "prior", "loss", "alpha", "convention", "norm", "normalization", "oracle_draws"),
    "prior": _COMMON + ("model", "loss", "alpha", "beta1", "lower", "upper", "grid", "reference", "normalization"),
    "simulate": _COMMON
    + ("n", "reps", "workers", "estimators", "theta0", "mean_prior_means", "mean_prior_vars", "mcmc_length", "mcmc_burn_in", "c", "alpha0", "beta0"),
    "demo": _COMMON + ("n", "reps", "c", "alpha0", "beta0"),
}
REQUIRED = {
    "estimate": ("model", "data"),
    "expand": ("model", "data", "theta"),
    "eab": ("model", "theta"),
    "prior": ("model",),
    "simulate": (),
    "demo": (),
}
CHOICES = {
    "format": FORMATS,
    "normalization": ("moment", "stein"),
    "q2_form": ("complete", "printed"),
    "convention": ("score", "inverse"),
    "norm": ("euclidean", "max"),
}
ACTION_DEFAULTS = {
    ("simulate", "table1"): {
        "n": [100, 300, 1000],
        "estimators": ["mle", "bayes", "hybrid"],
        "theta0": list(TABLE1_THETA0),
    },
    ("simulate", "consistency"): {"n": [200, 1000, 5000], "estimators": ["mle", "bayes", "hybrid", "reverse_hybrid"]},
    ("demo", "ferguson"): {"n": [200, 1000, 5000], "reps": 50},
    ("demo", "schwartz"): {"n": [5, 10, 50, 200, 1000, 5000], "reps": 50},
}


def is_stochastic(command: str, values: dict) -> bool:
    if command in ("estimate", "simulate", "demo"):
        return True
    return command == "eab" and values.get("oracle_draws", 0) > 0


# -- files --------------------------------------------------------------------------


def _line_of(text: str, key: str, occurrence: int) -> int | None:
    hits = [m.start() for m in re.finditer(r'"' + re.escape(key) + r'"\s*:', text)]
    return text.count("\n", 0, hits[occurrence]) + 1 if len(hits) > occurrence else None


def parse_config_text(text: str) -> dict:
    """Parse configuration text into a dict of raw (uncoerced) values."""
    stripped = text.strip()
    if not stripped:
        return {}
    if stripped.startswith("{"):
        return _parse_json_object(text)
    out, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(key or "?", "expected 'key = value'", lineno)
        if not _KEY_RE.match(key):
            raise ConfigError(key or "?", "malformed key", lineno)
        if key in out:
            raise ConfigError(key, f"duplicate key (first set on line {lines[key]})", lineno)
        if not value:
            raise ConfigError(key, "missing value", lineno)
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            if value[0] in "[{\"":
                raise ConfigError(key, f"malformed JSON value {value!r}", lineno) from None
            out[key] = value
        lines[key] = lineno
    return out


def _parse_json_object(text: str) -> dict:
    def pairs(items):
        seen = {}
        for k, v in items:
            if k in seen:
                raise ConfigError(k, "duplicate key", _line_of(text, k, 1))
            seen[k] = v
        return seen

    try:
        obj = json.loads(text, object_pairs_hook=pairs)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", exc.msg, exc.lineno) from None
    if not isinstance(obj, dict):
        raise ConfigError("config", "top level must be an object")
    if isinstance(obj.get("config"), dict) and "version" in obj:
        obj = obj["config"]
    return dict(obj)


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text)


# -- effective configuration ----------------------------------------------------------


@dataclass
class CliConfig:
    """Effective configuration of one command: defaults, then the file, then flags."""

    command: str
    action: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def echo(self) -> dict:
        """Everything that determines the result; output-only keys are left out."""
        out = {k: v for k, v in self.values.items() if k not in OUTPUT_KEYS}
        return {"command": self.command, "action": self.action, **out}

    @classmethod
    def build(cls, command: str, action: str, file_values: dict | None = None, flags: dict | None = None) -> "CliConfig":
        if command not in COMMANDS:
            raise ConfigError("command", f"unknown {command!r}; choose from {sorted(COMMANDS)}")
        actions = COMMANDS[command]
        action = action or ""
        if actions and action not in actions:
            raise ConfigError("action", f"{command} needs one of {actions}, got {action!r}")
        if not actions and action:
            raise ConfigError("action", f"{command} takes no action, got {action!r}")
        allowed = COMMAND_KEYS[command]
        merged = {}
        for source in (file_values or {}, flags or {}):
            for key, raw in source.items():
                if key in ("command", "action"):
                    want = command if key == "command" else action
                    if raw != want:
                        raise ConfigError(key, f"config is for {raw!r} but the command line asks for {want!r}")
                    continue
                if key not in KEYS:
                    raise ConfigError(key, "unknown key")
                if key not in allowed:
                    raise ConfigError(key, f"does not apply to {command}")
                merged[key] = raw
        values = {}
        defaults = ACTION_DEFAULTS.get((command, action), {})
        for key in allowed:
            # an explicit null selects the default
            if merged.get(key) is not None:
                values[key] = KEYS[key].coerce(key, merged[key])
            elif key in defaults:
                values[key] = defaults[key]
            else:
                values[key] = KEYS[key].default
        for key, choices in CHOICES.items():
            if key in values and values[key] not in choices:
                raise ConfigError(key, f"must be one of {choices}, got {values[key]!r}")
        for key in REQUIRED[command]:
            if values.get(key) is None:
                raise ConfigError(key, f"required for {command}")
        if is_stochastic(command, values) and values.get("seed") is None:
            raise ConfigError("seed", f"--seed is required for {command} (all randomness is seeded explicitly)")
        if values.get("seed") is not None and not 0 <= values["seed"] < 2**63:
            raise ConfigError("seed", f"must be a non-negative 63-bit integer, got {values['seed']}")
        for key in ("reps", "oracle_draws", "mcmc_burn_in"):
            if key in values and values[key] < 0:
                raise ConfigError(key, f"must be non-negative, got {values[key]}")
        for key in ("workers", "grid", "mcmc_length", "max_iter"):
            if key in values and values[key] < 1:
                raise ConfigError(key, f"must be positive, got {values[key]}")
        return cls(command, action, values)


def load_config(path=None, command: str = "", action: str = "", flags: dict | None = None) -> CliConfig:
    """Read ``path`` (if any) and merge ``flags`` over it."""
    file_values = read_config_file(path) if path is not None else {}
    return CliConfig.build(command, action, file_values, flags)


def dump_config(config: CliConfig) -> str:
    """The echoed configuration as flat ``key = json`` text that :func:`load_config` reads back."""
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in config.echo().items())
