"""Scenario files, seeded scenario generation and run outputs.

A scenario file is JSON::

    {
      "label": "demo", "seed": 0, "T": 200,
      "params": {"beta": [...], "gamma": [...], "theta": [...], "delta": [...],
                 "alpha": [...], "lambda": [...], "xi": [...], "x0": [...],
                 "W": [[...]] | "w.csv", "Wt": [[...]] | "wt.csv"},
      "initial_state": {"a": [...], "d": [...], "x": [...]},
      "control": {"channel": "delta", "budget": 1.0, "Qa": 1.0, "Qd": 0.1,
                  "L": 0.1, "adoption_cap": 1.0, "u_upper": [...]},
      "mpc": {"horizon": 20, "terminal_tolerance": 0.05,
              "terminal_penalty_weight": 1000.0,
              "solver": {"max_iters": 200, "step_tol": 1e-8,
                         "finite_differences": false, "qp_iters": 200}}
    }

Per-community entries may be given as scalars.  Matrix entries are nested
lists or paths (relative to the scenario file) of headerless CSV files.
Instead of ``params``/``initial_state`` a file may carry
``"generate": {"n": 10, "seed": 3, "ranges": {...}}``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .control.spec import ControlSpec, MpcConfig, SolverConfig
from .analysis import r0_extremes
from .dynamics import ModelParams, State
from .errors import ParseError, ValidationError
from .network import build_network, random_strongly_connected, read_matrix_csv

VECTOR_FIELDS = ("beta", "gamma", "theta", "delta", "alpha", "lambda", "xi", "x0")
TOP_KEYS = {"label", "seed", "T", "params", "initial_state", "control", "mpc", "generate"}
PARAM_KEYS = set(VECTOR_FIELDS) | {"W", "Wt"}
STATE_KEYS = {"a", "d", "x"}
CONTROL_KEYS = {"channel", "budget", "Qa", "Qd", "L", "adoption_cap", "u_upper"}
MPC_KEYS = {"horizon", "terminal_tolerance", "terminal_penalty_weight", "solver"}
SOLVER_KEYS = {"max_iters", "step_tol", "finite_differences", "qp_iters"}
GENERATE_KEYS = {"n", "seed", "ranges"}


@dataclass(frozen=True)
class ScenarioRanges:
    """Sampling ranges for :func:`random_scenario`."""

    beta: tuple = (0.2, 0.9)
    delta: tuple = (0.05, 0.4)
    gamma_theta_sum: tuple = (0.1, 0.9)
    gamma_share: tuple = (0.05, 0.95)
    alpha_min: float = 0.05
    opinion_concentration: tuple = (1.0, 1.0, 1.0)
    x0: tuple = (0.3, 0.8)
    edge_density: float = 0.2
    social_edge_density: float = 0.2
    seeded_fraction: float = 0.2
    seed_adoption: float = 0.01
    r0_max_target: tuple = None
    self_weight: tuple = None

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown range keys {sorted(unknown)}", field="ranges")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _calibrate_delta(params, target):
    """Scale ``delta`` so the uncontrolled ``r0_max`` equals ``target``.

    ``r0_max`` is nonincreasing in a common scale factor on ``delta`` (the
    opinion bounds and the dissatisfied share do not depend on it), so the
    factor is found by bisection.
    """
    def r_max(c):
        return r0_extremes(params.with_(delta=np.minimum(params.delta * c, 1.0)))[1]

    lo, hi = 0.0, 1.0 / max(params.delta.min(), 1e-12)
    if r_max(hi) > target:
        raise ValidationError("r0_max target unreachable by scaling delta", field="r0_max_target")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if r_max(mid) > target:
            lo = mid
        else:
            hi = mid
    return params.with_(delta=np.minimum(params.delta * hi, 1.0))


# Ranges for the ten-community comparison runs: uncontrolled adoption dies
# out (r0_max just below 1), strong within-community contact and mostly
# recovering dissatisfaction let opinion and churn control sustain it within
# the shared budget; adoption-rate control cannot.
FIGURE_RANGES = ScenarioRanges(
    beta=(0.6, 0.9),
    delta=(0.15, 0.3),
    gamma_theta_sum=(0.4, 0.8),
    gamma_share=(0.6, 0.95),
    opinion_concentration=(2.0, 2.0, 0.2),
    x0=(0.3, 0.5),
    edge_density=0.3,
    r0_max_target=(0.93, 0.97),
    self_weight=(0.5, 0.8),
)
FIGURE_BUDGET = 2.0
FIGURE_L = 0.01
FIGURE_HORIZON = 150


@dataclass(eq=False)
class Scenario:
    params: ModelParams
    s0: State
    spec: ControlSpec
    mpc: MpcConfig = field(default_factory=MpcConfig)
    T: int = 200
    seed: int = 0
    label: str = ""

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.params == other.params
            and self.s0 == other.s0
            and self.spec.to_dict() == other.spec.to_dict()
            and self.mpc.to_dict() == other.mpc.to_dict()
            and (self.T, self.seed, self.label) == (other.T, other.seed, other.label)
        )

    @property
    def n(self):
        return self.params.n

    def with_channel(self, channel, budget=None, adoption_cap=1.0):
        spec = ControlSpec.for_params(
            self.params, channel, self.spec.budget if budget is None else budget,
            self.spec.Qa, self.spec.Qd, self.spec.L, adoption_cap,
        )
        return replace(self, spec=spec)

    def to_dict(self):
        p = self.params
        return {
            "label": self.label,
            "seed": self.seed,
            "T": self.T,
            "params": {
                "beta": p.beta.tolist(),
                "gamma": p.gamma.tolist(),
                "theta": p.theta.tolist(),
                "delta": p.delta.tolist(),
                "alpha": p.alpha.tolist(),
                "lambda": p.lam.tolist(),
                "xi": p.xi.tolist(),
                "x0": p.x0.tolist(),
                "W": p.W.weights.tolist(),
                "Wt": p.Wt.weights.tolist(),
            },
            "initial_state": {"a": self.s0.a.tolist(), "d": self.s0.d.tolist(), "x": self.s0.x.tolist()},
            "control": self.spec.to_dict(),
            "mpc": self.mpc.to_dict(),
        }


def _dirichlet_weights(rng, n, alpha_min, concentration):
    w = rng.dirichlet(concentration, size=n)
    alpha = alpha_min + (1.0 - alpha_min) * w[:, 0]
    lam = (1.0 - alpha_min) * w[:, 1]
    xi = 1.0 - alpha - lam
    return alpha, lam, np.maximum(xi, 0.0)


def random_scenario(n, seed, ranges=None, channel="delta", budget=FIGURE_BUDGET, T=200, label=None):
    """Seeded random scenario at an early stage of diffusion.

    Every random draw comes from child streams of one ``SeedSequence(seed)``,
    so ``(n, seed, ranges)`` fixes the scenario completely.  Initially a
    random ``seeded_fraction`` of communities (at least one) hold
    ``seed_adoption`` adopters, nobody is dissatisfied, and opinions sit at
    their predisposition ``x0``.
    """
    if n < 1:
        raise ValidationError("n must be at least 1", field="n")
    r = ranges or ScenarioRanges()
    net_seq, soc_seq, rate_seq, state_seq = np.random.SeedSequence(seed).spawn(4)
    W = random_strongly_connected(n, r.edge_density, seed=net_seq)
    Wt = random_strongly_connected(n, r.social_edge_density, seed=soc_seq)
    rng = np.random.default_rng(rate_seq)
    if r.self_weight is not None:
        # within-community contact on top of the random physical layer
        w = rng.uniform(*r.self_weight, size=n)
        W = build_network(np.diag(w) + (1.0 - w)[:, None] * W.weights)
    beta = rng.uniform(*r.beta, size=n)
    delta = rng.uniform(*r.delta, size=n)
    total = rng.uniform(*r.gamma_theta_sum, size=n)
    share = rng.uniform(*r.gamma_share, size=n)
    gamma, theta = total * share, total * (1.0 - share)
    alpha, lam, xi = _dirichlet_weights(rng, n, r.alpha_min, r.opinion_concentration)
    x0 = rng.uniform(*r.x0, size=n)
    params = ModelParams(beta, gamma, theta, delta, alpha, lam, xi, W, Wt, x0)
    if r.r0_max_target is not None:
        params = _calibrate_delta(params, rng.uniform(*r.r0_max_target))

    srng = np.random.default_rng(state_seq)
    k = max(1, int(round(r.seeded_fraction * n)))
    a = np.zeros(n)
    a[srng.choice(n, size=k, replace=False)] = r.seed_adoption
    s0 = State(a, np.zeros(n), x0.copy())
    spec = ControlSpec.for_params(params, channel, budget)
    return Scenario(params, s0, spec, MpcConfig(), T, seed, label or f"random-n{n}-seed{seed}")


def figure_scenario(seed, channel="delta", n=10):
    """Ten-community comparison scenario (see ``FIGURE_RANGES``)."""
    sc = random_scenario(n, seed, FIGURE_RANGES, channel, FIGURE_BUDGET, label=f"figure-seed{seed}")
    spec = ControlSpec.for_params(sc.params, channel, FIGURE_BUDGET, L=FIGURE_L)
    return replace(sc, spec=spec, mpc=MpcConfig(horizon=FIGURE_HORIZON))


# -- loading ------------------------------------------------------------------


def _line_of(text, key):
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _check_keys(obj, allowed, where, text):
    if not isinstance(obj, dict):
        raise ParseError(f"{where} must be an object", line=_line_of(text, where), field=where)
    for key in obj:
        if key not in allowed:
            raise ParseError(f"unknown key {key!r} in {where}", line=_line_of(text, key), field=key)


def _vec(value, n, name, text):
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{name} must be numeric", line=_line_of(text, name), field=name) from None
    if v.ndim == 0:
        return np.full(n, float(v))
    if v.shape != (n,):
        raise ParseError(f"{name} has length {v.size}, expected {n}", line=_line_of(text, name), field=name)
    return v


def _matrix(value, base, name, text):
    if isinstance(value, str):
        path = Path(value)
        if not path.is_absolute():
            path = base / path
        try:
            return read_matrix_csv(path)
        except OSError as exc:
            raise ParseError(f"cannot read {path}: {exc}", line=_line_of(text, name), field=name) from None
    try:
        return np.atleast_2d(np.asarray(value, dtype=float))
    except (TypeError, ValueError):
        raise ParseError(f"{name} must be a matrix", line=_line_of(text, name), field=name) from None


def _params(block, base, text):
    _check_keys(block, PARAM_KEYS, "params", text)
    missing = PARAM_KEYS - set(block)
    if missing:
        raise ParseError(f"params is missing {sorted(missing)}", line=_line_of(text, "params"), field="params")
    W = build_network(_matrix(block["W"], base, "W", text))
    Wt = build_network(_matrix(block["Wt"], base, "Wt", text))
    n = W.n
    v = {k: _vec(block[k], n, k, text) for k in VECTOR_FIELDS}
    return ModelParams(
        v["beta"], v["gamma"], v["theta"], v["delta"], v["alpha"], v["lambda"], v["xi"], W, Wt, v["x0"]
    )


def scenario_from_dict(data, base=Path("."), text=""):
    """Build a :class:`Scenario` from parsed JSON (see the module docstring)."""
    _check_keys(data, TOP_KEYS, "scenario", text)
    seed = int(data.get("seed", 0))
    T = int(data.get("T", 200))
    label = str(data.get("label", ""))
    if "generate" in data:
        if "params" in data or "initial_state" in data:
            raise ParseError("give either generate or params/initial_state", line=_line_of(text, "generate"))
        gen = data["generate"]
        _check_keys(gen, GENERATE_KEYS, "generate", text)
        ranges = ScenarioRanges.from_dict(gen.get("ranges", {}))
        sc = random_scenario(int(gen["n"]), int(gen.get("seed", seed)), ranges)
        params, s0 = sc.params, sc.s0
    else:
        if "params" not in data:
            raise ParseError("missing params", field="params")
        params = _params(data["params"], base, text)
        n = params.n
        st = data.get("initial_state", {})
        _check_keys(st, STATE_KEYS, "initial_state", text)
        s0 = State(
            _vec(st.get("a", 0.0), n, "a", text),
            _vec(st.get("d", 0.0), n, "d", text),
            _vec(st["x"], n, "x", text) if "x" in st else params.x0.copy(),
        )
        s0.validate()

    ctl = data.get("control", {})
    _check_keys(ctl, CONTROL_KEYS, "control", text)
    n = params.n
    spec = ControlSpec.for_params(
        params,
        ctl.get("channel", "delta"),
        float(ctl.get("budget", FIGURE_BUDGET)),
        _vec(ctl.get("Qa", 1.0), n, "Qa", text),
        _vec(ctl.get("Qd", 0.1), n, "Qd", text),
        _vec(ctl.get("L", 0.1), n, "L", text),
        float(ctl.get("adoption_cap", 1.0)),
        _vec(ctl["u_upper"], n, "u_upper", text) if "u_upper" in ctl else None,
    )

    m = data.get("mpc", {})
    _check_keys(m, MPC_KEYS, "mpc", text)
    sv = m.get("solver", {})
    _check_keys(sv, SOLVER_KEYS, "solver", text)
    defaults = SolverConfig()
    solver = SolverConfig(
        int(sv.get("max_iters", defaults.max_iters)),
        float(sv.get("step_tol", defaults.step_tol)),
        bool(sv.get("finite_differences", defaults.finite_differences)),
        int(sv.get("qp_iters", defaults.qp_iters)),
    )
    base_cfg = MpcConfig()
    mpc = MpcConfig(
        int(m.get("horizon", base_cfg.horizon)),
        float(m.get("terminal_tolerance", base_cfg.terminal_tolerance)),
        float(m.get("terminal_penalty_weight", base_cfg.terminal_penalty_weight)),
        solver,
    )
    return Scenario(params, s0, spec, mpc, T, seed, label)


def load_scenario(path):
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    return scenario_from_dict(data, path.parent, text)


def save_scenario(scenario, path):
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n")


# -- outputs ------------------------------------------------------------------


@dataclass
class RunResult:
    """One finished run to be written by :func:`write_outputs`.

    ``summary`` holds the per-run summary row (seed, channel, feasible,
    total_adopters, control_cost, final_adoption); ``reports`` maps a file
    stem to a JSON-serialisable object.
    """

    name: str
    trajectory: object = None
    summary: dict = None
    reports: dict = field(default_factory=dict)


SUMMARY_COLUMNS = ("run", "seed", "channel", "feasible", "total_adopters", "control_cost", "final_adoption")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_aggregate_csv(path, trajectory):
    agg = np.column_stack(trajectory.aggregate())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "sum_a", "sum_d", "mean_x"])
        for t in range(agg.shape[0]):
            w.writerow([t] + [repr(float(v)) for v in agg[t]])


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_outputs(results, out_dir, tables=None, nested=False):
    """Write every run's files below ``out_dir`` and return the manifest.

    A single run writes ``trajectory.csv`` and ``aggregate.csv`` at the top
    level; several runs (or ``nested=True``) get a sub-directory each,
    named after the run.  Summary rows go to ``summary.csv``; ``tables``
    maps extra CSV stems to lists of row dicts.  The manifest
    (``{relative path: sha256}``) is also saved as ``manifest.json``.
    """
    out = Path(out_dir)
    results = list(results)
    tables = tables or {}
    manifest = {}
    if not results and not tables:
        return manifest
    try:
        out.mkdir(parents=True, exist_ok=True)
        flat = len(results) == 1 and not nested
        rows = []
        for res in results:
            where = out if flat else out / res.name
            where.mkdir(parents=True, exist_ok=True)
            if res.trajectory is not None:
                res.trajectory.to_csv(where / "trajectory.csv")
                write_aggregate_csv(where / "aggregate.csv", res.trajectory)
            for stem, obj in res.reports.items():
                (where / f"{stem}.json").write_text(json.dumps(_json_safe(obj), indent=2) + "\n")
            if res.summary is not None:
                rows.append({"run": res.name, **res.summary})
        if rows:
            with open(out / "summary.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, extrasaction="ignore")
                w.writeheader()
                for row in rows:
                    w.writerow({k: _csv_value(v) for k, v in row.items()})
        for stem, table in tables.items():
            _write_table(out / f"{stem}.csv", table)
        for f in sorted(out.rglob("*")):
            if f.is_file() and f.name != "manifest.json":
                manifest[f.relative_to(out).as_posix()] = _sha256(f)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc}") from exc
    return manifest


def _write_table(path, rows):
    columns = list(dict.fromkeys(k for row in rows for k in row))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: _csv_value(v) for k, v in row.items()})


def _csv_value(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return v
