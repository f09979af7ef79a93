"""Run configuration: strict JSON in, fully resolved :class:`RunConfig` out.

Duplicate keys and unknown keys are errors. Anything not given in the file
takes the default for the selected fidelity.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .combiner import Rule
from .errors import ConfigError

EXPERIMENTS = ("gaussian-curve", "gaussian-grid", "sprint", "bound-check", "consistency",
               "cutoff-table")
FIDELITIES = ("desk", "full")
MIN_REPS = 100

# Per-fidelity defaults. Keys here are also the full set of accepted keys.
_DESK = {
    "experiment": None,
    "seed": 0,
    "reps": None,
    "workers": None,
    "out": "out",
    "fidelity": "desk",
    "plots": True,
    "rules": ["core", "shrinkage_clipped", "hypothesis_test", "anchored_threshold"],
    "gaussian": {
        "n": 1000, "var_psi_u": 1.0, "var_psi_b": 1.0, "corr": 0.0, "theta_0": 1.0,
        "mu_max": 1.5, "mu_step": 0.01, "known_moments": False,
    },
    "grid": {
        "n": [500, 1000, 2000, 4000],
        "var_psi_u": [1.0, 2.0, 4.0, 8.0, 16.0],
        "var_psi_b": [0.0, 1.0, 2.0, 4.0, 8.0, 16.0],
        "corr": [-0.5, -0.25, 0.0, 0.25, 0.5],
        "subsample": 60,
    },
    "baselines": {
        "anchored_lambda1": 0.5, "cheng_beta": 0.5, "test_gamma_step": 0.05,
        "test_pool_weights": [1, 1], "cutoff_reps": None,
    },
    "sprint": {
        "p_u": 0.28, "p_y1_u1": 0.081, "p_y1_u0": 0.040, "p_y0_u1": 0.096, "p_y0_u0": 0.057,
        "e_exp": 0.5, "n_exp": 9361, "n_obs": [10_000, 100_000], "gammas": "table",
        "bootstrap": 1000,
    },
    "bound": {
        "rho": [-0.5, 0.0, 0.5], "c": [0.5, 1.0, 2.0, 4.0], "n": 1000, "var_psi_u": 1.0,
        "mu_max_sd": 4.0, "mu_points": 41, "unknown_var": True,
    },
    "consistency": {
        "mu": 0.5, "n": [500, 2000, 8000], "tail_mu_sd": 50.0, "tail_points": 6,
    },
}

_FULL_OVERRIDES = {
    "gaussian": {"mu_step": 0.002},
    "grid": {"subsample": None},
    "sprint": {"n_obs": [10_000, 20_000, 50_000, 100_000]},
}

_DESK_REPS = {"gaussian-curve": 2000, "gaussian-grid": 2000, "sprint": 2000,
              "bound-check": 5000, "consistency": 2000, "cutoff-table": 2000}
_FULL_REPS = 10_000

# Fields that never change results; left out of the config hash.
_NON_RESULT_KEYS = ("workers", "out", "plots")


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}", key=k)
        out[k] = v
    return out


def parse_json(text: str) -> dict:
    if not text.strip():
        return {}
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON parse error: {e.msg}", line=e.lineno, column=e.colno) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object")
    return data


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(f"unknown key {key!r}", key=key)
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{key!r} must be an object", key=key)
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    seed: int
    reps: int
    workers: int
    out: Path
    fidelity: str
    plots: bool
    rules: tuple[Rule, ...]
    gaussian: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    baselines: dict = field(default_factory=dict)
    sprint: dict = field(default_factory=dict)
    bound: dict = field(default_factory=dict)
    consistency: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        d = asdict(self)
        d["out"] = str(self.out)
        d["rules"] = [r.value for r in self.rules]
        return d

    def config_hash(self) -> str:
        d = {k: v for k, v in self.resolved().items() if k not in _NON_RESULT_KEYS}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def mu_grid(self) -> tuple[float, ...]:
        from .simgauss import make_mu_grid

        g = self.gaussian
        return make_mu_grid(g["mu_max"], g["mu_step"])


def _int(value, key: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key!r} must be an integer, got {value!r}", key=key)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key!r} must be >= {minimum}, got {value}", key=key)
    return value


def _num(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key!r} must be a number, got {value!r}", key=key)
    return float(value)


def _num_list(value, key: str) -> list[float]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{key!r} must be a nonempty list", key=key)
    return [_num(v, key) for v in value]


def _int_list(value, key: str, minimum: int = 1) -> list[int]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{key!r} must be a nonempty list", key=key)
    return [_int(v, key, minimum) for v in value]


def _validate(d: dict) -> None:
    g = d["gaussian"]
    g["n"] = _int(g["n"], "gaussian.n", 2)
    for k in ("var_psi_u", "var_psi_b", "corr", "theta_0", "mu_max", "mu_step"):
        g[k] = _num(g[k], f"gaussian.{k}")
    if g["mu_step"] <= 0 or g["mu_max"] < 0:
        raise ConfigError("gaussian.mu_step must be > 0 and mu_max >= 0", key="gaussian.mu_step")
    if not isinstance(g["known_moments"], bool):
        raise ConfigError("'gaussian.known_moments' must be a boolean", key="gaussian.known_moments")

    gr = d["grid"]
    gr["n"] = _int_list(gr["n"], "grid.n", 2)
    for k in ("var_psi_u", "var_psi_b", "corr"):
        gr[k] = _num_list(gr[k], f"grid.{k}")
    if gr["subsample"] is not None:
        gr["subsample"] = _int(gr["subsample"], "grid.subsample", 1)

    b = d["baselines"]
    for k in ("anchored_lambda1", "cheng_beta", "test_gamma_step"):
        b[k] = _num(b[k], f"baselines.{k}")
    if not 0 < b["test_gamma_step"] <= 1:
        raise ConfigError("baselines.test_gamma_step must be in (0, 1]", key="baselines.test_gamma_step")
    pw = _int_list(b["test_pool_weights"], "baselines.test_pool_weights")
    if len(pw) != 2:
        raise ConfigError("baselines.test_pool_weights needs two sizes", key="baselines.test_pool_weights")
    b["test_pool_weights"] = pw
    if b["cutoff_reps"] is not None:
        b["cutoff_reps"] = _int(b["cutoff_reps"], "baselines.cutoff_reps", 1000)

    s = d["sprint"]
    for k in ("p_u", "p_y1_u1", "p_y1_u0", "p_y0_u1", "p_y0_u0", "e_exp"):
        s[k] = _num(s[k], f"sprint.{k}")
    s["n_exp"] = _int(s["n_exp"], "sprint.n_exp", 2)
    s["n_obs"] = _int_list(s["n_obs"], "sprint.n_obs", 2)
    s["bootstrap"] = _int(s["bootstrap"], "sprint.bootstrap", 1)
    if isinstance(s["gammas"], str):
        if s["gammas"] not in ("table", "figure", "both"):
            raise ConfigError("sprint.gammas must be 'table', 'figure', 'both' or a list",
                              key="sprint.gammas")
    else:
        s["gammas"] = _num_list(s["gammas"], "sprint.gammas")

    bd = d["bound"]
    bd["rho"] = _num_list(bd["rho"], "bound.rho")
    bd["c"] = _num_list(bd["c"], "bound.c")
    bd["n"] = _int(bd["n"], "bound.n", 2)
    bd["var_psi_u"] = _num(bd["var_psi_u"], "bound.var_psi_u")
    bd["mu_max_sd"] = _num(bd["mu_max_sd"], "bound.mu_max_sd")
    bd["mu_points"] = _int(bd["mu_points"], "bound.mu_points", 2)
    if not isinstance(bd["unknown_var"], bool):
        raise ConfigError("'bound.unknown_var' must be a boolean", key="bound.unknown_var")

    c = d["consistency"]
    c["mu"] = _num(c["mu"], "consistency.mu")
    c["n"] = _int_list(c["n"], "consistency.n", 2)
    c["tail_mu_sd"] = _num(c["tail_mu_sd"], "consistency.tail_mu_sd")
    c["tail_points"] = _int(c["tail_points"], "consistency.tail_points", 2)
    if c["tail_mu_sd"] < 20:
        raise ConfigError("consistency.tail_mu_sd must be >= 20", key="consistency.tail_mu_sd")


def resolve(data: dict, overrides: dict | None = None, env=None) -> RunConfig:
    """Apply defaults and flag overrides (flags win) to a parsed config dict."""
    env = os.environ if env is None else env
    data = dict(data)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v

    fidelity = data.get("fidelity", "desk")
    if fidelity not in FIDELITIES:
        raise ConfigError(f"fidelity must be one of {FIDELITIES}, got {fidelity!r}", key="fidelity")
    base = _DESK
    if fidelity == "full":
        base = _merge(_DESK, _FULL_OVERRIDES)
    d = _merge(base, data)

    exp = d["experiment"]
    if exp is None:
        raise ConfigError("missing required key 'experiment'", key="experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; expected one of {EXPERIMENTS}",
                          key="experiment")

    seed = _int(d["seed"], "seed", 0)
    if seed >= 2 ** 64:
        raise ConfigError("seed must fit in 64 bits", key="seed")
    reps = d["reps"]
    if reps is None:
        reps = _DESK_REPS[exp] if fidelity == "desk" else _FULL_REPS
    reps = _int(reps, "reps", MIN_REPS)

    workers = d["workers"]
    if workers is None:
        raw = env.get("ESTFUSE_WORKERS")
        if raw:
            try:
                workers = int(raw)
            except ValueError:
                raise ConfigError(f"ESTFUSE_WORKERS must be an integer, got {raw!r}",
                                  key="ESTFUSE_WORKERS") from None
        else:
            workers = 1
    workers = _int(workers, "workers", 1)

    if not isinstance(d["plots"], bool):
        raise ConfigError("'plots' must be a boolean", key="plots")
    if not isinstance(d["rules"], list) or not d["rules"]:
        raise ConfigError("'rules' must be a nonempty list", key="rules")
    rules = []
    for r in d["rules"]:
        try:
            rules.append(Rule(r))
        except ValueError:
            raise ConfigError(f"unknown rule id {r!r}", key="rules") from None

    out = Path(d["out"])
    _check_writable(out)
    _validate(d)
    return RunConfig(experiment=exp, seed=seed, reps=reps, workers=workers, out=out,
                     fidelity=fidelity, plots=d["plots"], rules=tuple(rules),
                     gaussian=d["gaussian"], grid=d["grid"], baselines=d["baselines"],
                     sprint=d["sprint"], bound=d["bound"], consistency=d["consistency"])


def _check_writable(out: Path) -> None:
    probe = out
    while not probe.exists():
        if probe.parent == probe:
            break
        probe = probe.parent
    if not probe.is_dir() or not os.access(probe, os.W_OK):
        raise ConfigError(f"output directory {str(out)!r} is not writable", key="out")


def load_config(path, overrides: dict | None = None, env=None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found", key="config")
    return resolve(parse_json(path.read_text(encoding="utf-8")), overrides, env)
