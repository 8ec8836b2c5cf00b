"""Sweep experiments: presets for the published figures plus JSON-configured
custom sweeps. Each experiment writes one CSV with one row per sweep point
per protocol (per case), in sweep order.

Config keys carry their units: T_us, B_MHz, gamma_dB, a_Mbps. theta is in
1/bits, n in bits, M in attempts.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import InfeasibleError, optimize_delay_bound
from .capacity import effective_capacity
from .model import PROTOCOLS, Protocol, ProtocolParams, analyze, best_packet_size, db_to_linear

METRICS = ("throughput", "pi0", "plost", "ec", "delay")
SWEEP_VARS = ("n", "M", "theta", "eps_prime", "gamma_dB", "a_Mbps")
_ALIASES = {"a": "a_Mbps", "gamma": "gamma_dB"}
FIXED_KEYS = {"n", "T_us", "B_MHz", "M", "gamma_dB", "sigma_h_sq", "a_Mbps", "eps_prime", "theta"}
DEFAULTS = {"T_us": 100.0, "B_MHz": 1.0, "M": 4, "gamma_dB": 0.0, "sigma_h_sq": 1.0}

DIAG_COLUMNS = {
    "ec": ("y_star", "sp"),
    "delay": ("theta_star", "delta_star"),
}


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    metric: str
    sweep_var: str
    values: tuple
    fixed: dict = field(default_factory=dict)
    cases: tuple = ({},)  # per-case overrides of `fixed`, e.g. several SNRs
    protocols: tuple = PROTOCOLS
    out: str | None = None

    def __post_init__(self):
        sweep = _ALIASES.get(self.sweep_var, self.sweep_var)
        object.__setattr__(self, "sweep_var", sweep)
        if self.metric not in METRICS:
            raise ConfigError(f"field 'metric': {self.metric!r} is not one of {METRICS}")
        if sweep not in SWEEP_VARS:
            raise ConfigError(f"field 'sweep.var': {self.sweep_var!r} is not one of {SWEEP_VARS}")
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ConfigError("field 'sweep.values': range is empty")
        diffs = np.diff(values)
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ConfigError("field 'sweep.values': range must be strictly monotone")
        object.__setattr__(self, "values", values)
        for where, block in [("fixed", self.fixed)] + [(f"cases[{i}]", c) for i, c in enumerate(self.cases)]:
            for k in block:
                if _ALIASES.get(k, k) not in FIXED_KEYS:
                    raise ConfigError(f"field '{where}.{k}': unknown parameter")
        object.__setattr__(self, "protocols", tuple(Protocol.parse(p) for p in self.protocols))


def _case_label(case: dict) -> str:
    return ";".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in case.items())


def _resolve(fixed: dict, case: dict, sweep_var: str, x: float) -> dict:
    cfg = dict(DEFAULTS)
    for src in (fixed, case):
        cfg.update({_ALIASES.get(k, k): v for k, v in src.items()})
    cfg[sweep_var] = x
    return cfg


def params_from_config(cfg: dict, protocol) -> ProtocolParams:
    gamma = db_to_linear(float(cfg["gamma_dB"]))
    T = float(cfg["T_us"]) * 1e-6
    B = float(cfg["B_MHz"]) * 1e6
    n = cfg.get("n")
    if n is None:
        n = best_packet_size(gamma, T, B, float(cfg["sigma_h_sq"]))
    return ProtocolParams(n=float(n), T=T, B=B, M=int(round(float(cfg["M"]))), gamma=gamma,
                          sigma_h_sq=float(cfg["sigma_h_sq"]), protocol=protocol)


def evaluate_point(metric: str, cfg: dict, protocol) -> tuple:
    """(value, diagnostics) for one sweep point; delay is inf when infeasible."""
    params = params_from_config(cfg, protocol)
    p, ss = analyze(params)
    if metric == "throughput":
        return ss.throughput, ()
    if metric == "pi0":
        return ss.pi0, ()
    if metric == "plost":
        return ss.p_lost, ()
    if metric == "ec":
        if "theta" not in cfg:
            raise ConfigError("field 'fixed.theta': required for metric 'ec'")
        r = effective_capacity(p, params, float(cfg["theta"]))
        return r.rho_s, (r.y_star, r.sp)
    for key in ("a_Mbps", "eps_prime"):
        if key not in cfg:
            raise ConfigError(f"field 'fixed.{key}': required for metric 'delay'")
    try:
        r = optimize_delay_bound(p, params, float(cfg["a_Mbps"]) * 1e6, float(cfg["eps_prime"]))
    except InfeasibleError:
        return math.inf, (math.nan, math.nan)
    return r.d, (r.theta, r.delta)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".12g")


def _point_job(args):
    metric, cfg, protocol = args
    return evaluate_point(metric, cfg, protocol)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> str:
    """Evaluate every sweep point; return the CSV text (also written to spec.out)."""
    jobs, keys = [], []
    for case in spec.cases:
        for x in spec.values:
            cfg = _resolve(spec.fixed, case, spec.sweep_var, x)
            for proto in spec.protocols:
                jobs.append((spec.metric, cfg, proto))
                keys.append((_case_label(case), x, proto))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_point_job, jobs, chunksize=1))
    else:
        results = [_point_job(j) for j in jobs]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    diag = DIAG_COLUMNS.get(spec.metric, ())
    w.writerow(("experiment", "case", spec.sweep_var, "protocol", "value") + diag)
    for (case, x, proto), (value, extra) in zip(keys, results):
        w.writerow([spec.id, case, _fmt(x), proto.value, _fmt(value)] + [_fmt(e) for e in extra])
    text = buf.getvalue()
    if spec.out:
        with open(spec.out, "w", newline="") as fh:
            fh.write(text)
    return text


def _eps_grid():
    return tuple(10.0**k for k in range(-9, 0))


PRESETS = {
    "throughput-vs-n": dict(metric="throughput", sweep_var="n",
                            values=tuple(range(10, 410, 10)),
                            fixed={"gamma_dB": 5.0, "M": 4}),
    "pi0-vs-M": dict(metric="pi0", sweep_var="M", values=tuple(range(1, 11)),
                     cases=({"gamma_dB": 0.0}, {"gamma_dB": 10.0})),
    "plost-vs-M": dict(metric="plost", sweep_var="M", values=tuple(range(1, 11)),
                       cases=({"gamma_dB": 0.0}, {"gamma_dB": 10.0})),
    "ec-vs-theta": dict(metric="ec", sweep_var="theta",
                        values=tuple(np.logspace(-6, 0, 25).tolist()),
                        fixed={"M": 4}, cases=({"gamma_dB": 0.0}, {"gamma_dB": 5.0})),
    "delay-vs-eps": dict(metric="delay", sweep_var="eps_prime", values=_eps_grid(),
                         fixed={"M": 4},
                         cases=({"gamma_dB": 0.0, "a_Mbps": 0.41, "n": 82},
                                {"gamma_dB": 5.0, "a_Mbps": 0.81, "n": 155})),
    "delay-vs-gamma": dict(metric="delay", sweep_var="gamma_dB",
                           values=tuple(float(g) for g in range(0, 21, 2)),
                           fixed={"n": 36, "eps_prime": 1e-6},
                           cases=({"M": 4, "a_Mbps": 0.16}, {"M": 3, "a_Mbps": 0.18})),
    "delay-vs-a": dict(metric="delay", sweep_var="a_Mbps",
                       values=tuple(round(0.1 * k, 1) for k in range(1, 21)),
                       fixed={"eps_prime": 1e-6, "M": 4},
                       cases=({"gamma_dB": 5.0, "n": 155}, {"gamma_dB": 10.0, "n": 252})),
}


def preset(name: str, out: str | None = None, protocols=PROTOCOLS) -> ExperimentSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown experiment {name!r}; presets: {', '.join(PRESETS)}")
    return ExperimentSpec(id=name, out=out, protocols=protocols, **PRESETS[name])


def load_spec(path: str) -> ExperimentSpec:
    """Parse a JSON sweep config (custom experiment, or a preset with overrides)."""
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return spec_from_dict(raw, source=path)


def spec_from_dict(raw: dict, source: str = "<config>") -> ExperimentSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    try:
        exp_id = raw.get("id", "custom")
        if exp_id in PRESETS and "sweep" not in raw:
            base = preset(exp_id, raw.get("out"), raw.get("protocols", PROTOCOLS))
            return base
        sweep = raw.get("sweep")
        if not isinstance(sweep, dict) or "var" not in sweep:
            raise ConfigError("field 'sweep': expected an object with 'var' and 'values' or 'start/stop/step'")
        if "values" in sweep:
            values = sweep["values"]
            if not isinstance(values, list):
                raise ConfigError("field 'sweep.values': expected a list")
        else:
            try:
                start, stop, step = (float(sweep[k]) for k in ("start", "stop", "step"))
            except KeyError as exc:
                raise ConfigError(f"field 'sweep.{exc.args[0]}': missing") from None
            if step == 0:
                raise ConfigError("field 'sweep.step': must be nonzero")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = [start + i * step for i in range(max(count, 0))]
        for k in ("metric",):
            if k not in raw:
                raise ConfigError(f"field '{k}': missing")
        fixed = raw.get("fixed", {})
        if not isinstance(fixed, dict):
            raise ConfigError("field 'fixed': expected an object")
        for k, v in fixed.items():
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"field 'fixed.{k}': expected a number, got {v!r}")
        return ExperimentSpec(id=exp_id, metric=raw["metric"], sweep_var=sweep["var"],
                              values=tuple(values), fixed=fixed,
                              cases=tuple(raw.get("cases", [{}])) or ({},),
                              protocols=tuple(raw.get("protocols", PROTOCOLS)),
                              out=raw.get("out"))
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
