"""Config-driven experiment runs behind the ``dyngraph`` command.

A config is a JSON object with a ``kind`` choosing the experiment, a
mandatory ``seed``, and kind-specific fields documented in the runners
below.  Every run produces a table (written as CSV) plus a JSON sidecar
holding the config echo, summary statistics, and wall time.  Randomness
is split with counter-based streams keyed by (seed, tag, indices), so
results are byte-identical for any worker count: workers only change how
the independent unit blocks are scheduled, never what they compute.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._version import __version__
from .contact import run_contact
from .coupling import couple_ball_with_tree, dynperc_bound, failure_bound
from .dirg import (SimulationSizeError, simulate_edge_updating,
                   simulate_vertex_updating)
from .dynball import extract_ball
from .gsmpgw import LimitProcessParams, simulate_gsmpgw, simulate_vgsmpgw
from .kernels import (FactorKernel, MarkSpace, MatrixKernel, PrefAttachKernel,
                      StrongKernel, UpdateEtaKernel, VertexRateKernel,
                      WeakKernel, constant_kernel, graphical_check)
from .metrics import canonical_code, tv_estimate
from .segtree import OPEN, SEGMENTED
from .vertexspace import realize

KINDS = ("sample-graph", "sample-tree", "ball", "couple", "converge",
         "contact", "bound", "graphical-check")

# stream tags; every random draw in a run comes from a Philox stream keyed
# (seed, tag, *indices), so unit results never depend on scheduling
_TAG_SINGLE = 0
_TAG_BALL_CODES = 1
_TAG_TREE_CODES = 2
_TAG_COUPLE = 3
_TAG_CONTACT = 4
_TAG_GRAPHICAL = 5
_TAG_PAIR_CODES = 6
_TAG_TREE_RUN = 7
_TAG_BALL_RUN = 8
_TAG_ANALYSIS = 9


class ConfigError(ValueError):
    """Invalid config; path points at the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


def stream(seed: int, *key) -> np.random.Generator:
    """Independent generator for the unit identified by key."""
    ss = np.random.SeedSequence(int(seed),
                                spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# -- config access ---------------------------------------------------------------


def _field(cfg: dict, key: str, path: str, required=True, default=None):
    # an explicit JSON null counts as absent
    if cfg.get(key) is None:
        if required:
            raise ConfigError(f"{path}.{key}" if path else key,
                              "missing required field")
        return default
    return cfg[key]


def _as_int(v, path: str, minimum=None) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    v = int(v)
    if minimum is not None and v < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {v}")
    return v


def _as_float(v, path: str, minimum=None) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    v = float(v)
    if minimum is not None and v < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {v}")
    return v


def _int_field(cfg, key, path, required=True, default=None, minimum=None):
    v = _field(cfg, key, path, required, default)
    return v if v is None else _as_int(v, f"{path}.{key}" if path else key,
                                       minimum)


def _float_field(cfg, key, path, required=True, default=None, minimum=None):
    v = _field(cfg, key, path, required, default)
    return v if v is None else _as_float(v, f"{path}.{key}" if path else key,
                                         minimum)


def _int_list_field(cfg, key, path, required=True, default=None, minimum=None):
    """Accepts a single integer or a list of them."""
    v = _field(cfg, key, path, required, default)
    if v is None:
        return None
    p = f"{path}.{key}" if path else key
    if not isinstance(v, list):
        v = [v]
    if not v:
        raise ConfigError(p, "must not be empty")
    return [_as_int(x, f"{p}[{i}]", minimum) for i, x in enumerate(v)]


def _dynamics_field(cfg) -> str:
    d = cfg.get("dynamics", "edge")
    if d not in ("edge", "vertex"):
        raise ConfigError("dynamics", f"expected 'edge' or 'vertex', got {d!r}")
    return d


# -- kernel and space builders ---------------------------------------------------

_UNIT_FORMS = {"factor": FactorKernel, "pref_attach": PrefAttachKernel,
               "strong": StrongKernel, "weak": WeakKernel}


def _build_space(cfg) -> MarkSpace:
    if "weights" in cfg and "space" in cfg:
        raise ConfigError("space", "give either weights or space, not both")
    if "space" in cfg:
        if cfg["space"] != "unit_interval":
            raise ConfigError("space", f"unknown space {cfg['space']!r}")
        return MarkSpace.unit_interval()
    weights = cfg.get("weights", [1.0])
    if not isinstance(weights, list) or not weights:
        raise ConfigError("weights", "expected a nonempty list of weights")
    w = [_as_float(x, f"weights[{i}]", minimum=0.0)
         for i, x in enumerate(weights)]
    if abs(sum(w) - 1.0) > 1e-9:
        raise ConfigError("weights", f"weights must sum to 1, got {sum(w)}")
    return MarkSpace.finite(w)


def _build_kernel(spec, path: str, ms: MarkSpace):
    if not isinstance(spec, dict):
        raise ConfigError(path, "expected an object with a 'form' field")
    form = _field(spec, "form", path)
    if form == "constant":
        if ms.kind != "finite":
            raise ConfigError(f"{path}.form",
                              "constant kernels need a finite mark space")
        return constant_kernel(_float_field(spec, "value", path, minimum=0.0),
                               ms.r)
    if form == "matrix":
        if ms.kind != "finite":
            raise ConfigError(f"{path}.form",
                              "matrix kernels need a finite mark space")
        values = _field(spec, "values", path)
        try:
            arr = np.asarray(values, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}.values", "expected a square matrix")
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ConfigError(f"{path}.values", "expected a square matrix")
        if arr.shape[0] != ms.r:
            raise ConfigError(f"{path}.values",
                              f"size {arr.shape[0]} does not match the "
                              f"{ms.r} mark weights")
        if (arr < 0).any():
            raise ConfigError(f"{path}.values", "entries must be nonnegative")
        return MatrixKernel.from_array(arr)
    if form in _UNIT_FORMS:
        if ms.kind != "unit_interval":
            raise ConfigError(f"{path}.form",
                              f"{form} kernels live on the unit interval")
        return _UNIT_FORMS[form](a=_float_field(spec, "a", path, False, 1.0),
                                 gamma=_float_field(spec, "gamma", path,
                                                    False, 0.25))
    if form == "update_eta":
        if ms.kind != "unit_interval":
            raise ConfigError(f"{path}.form",
                              "update_eta kernels live on the unit interval")
        return UpdateEtaKernel(b=_float_field(spec, "b", path, False, 1.0),
                               gamma=_float_field(spec, "gamma", path,
                                                  False, 0.25),
                               eta=_float_field(spec, "eta", path, False, 1.0))
    raise ConfigError(f"{path}.form", f"unknown kernel form {form!r}")


def _build_beta(spec, path: str, ms: MarkSpace, dynamics: str):
    if spec is None:
        spec = {"form": "constant", "value": 1.0}
    if dynamics == "edge":
        return _build_kernel(spec, path, ms)
    if not isinstance(spec, dict):
        raise ConfigError(path, "expected an object with a 'form' field")
    form = _field(spec, "form", path)
    if form == "constant":
        v = _float_field(spec, "value", path, minimum=0.0)
        if ms.kind == "finite":
            return VertexRateKernel(values=(v,) * ms.r)
        return VertexRateKernel(b=v, exponent=0.0)
    if form == "vertex_rate":
        if "values" in spec:
            if ms.kind != "finite":
                raise ConfigError(f"{path}.values",
                                  "per-type rates need a finite mark space")
            values = _field(spec, "values", path)
            if not isinstance(values, list) or len(values) != ms.r:
                raise ConfigError(f"{path}.values",
                                  f"expected {ms.r} rates")
            return VertexRateKernel(values=tuple(
                _as_float(x, f"{path}.values[{i}]", minimum=0.0)
                for i, x in enumerate(values)))
        return VertexRateKernel(
            b=_float_field(spec, "b", path, False, 1.0),
            exponent=_float_field(spec, "exponent", path, False, 0.0))
    raise ConfigError(f"{path}.form",
                      f"vertex updating needs a constant or vertex_rate "
                      f"beta, got {form!r}")


def _finite_only(ms: MarkSpace, kind: str):
    if ms.kind != "finite":
        raise ConfigError("weights",
                          f"{kind} runs need finite mark weights")


class _Context:
    """Kernels and vertex space rebuilt identically inside every worker."""

    def __init__(self, cfg: dict, n: int | None = None):
        self.cfg = cfg
        self.dynamics = _dynamics_field(cfg)
        self.ms = _build_space(cfg)
        self.kappa = _build_kernel(_field(cfg, "kappa", ""), "kappa", self.ms)
        self.beta = _build_beta(cfg.get("beta"), "beta", self.ms,
                                self.dynamics)
        self.vs = None
        if n is not None:
            if self.ms.kind != "finite":
                raise ConfigError("weights",
                                  "deterministic vertex spaces need finite "
                                  "mark weights; draw marks per run instead")
            self.vs = realize(self.ms, n, "finite_counts")

    def simulate(self, horizon: float, rng: np.random.Generator):
        sim = simulate_vertex_updating if self.dynamics == "vertex" \
            else simulate_edge_updating
        return sim(self.vs, self.kappa, self.beta, horizon, rng)

    def limit_params(self, depth: int, horizon: float,
                     root_type=None) -> LimitProcessParams:
        return LimitProcessParams(kappa=self.kappa, beta=self.beta,
                                  mark_space=self.ms, depth=depth,
                                  horizon=horizon, root_type=root_type)

    def simulate_limit(self, params: LimitProcessParams,
                       rng: np.random.Generator):
        sim = simulate_vgsmpgw if self.dynamics == "vertex" \
            else simulate_gsmpgw
        return sim(params, rng)


def _realized_space(cfg: dict, n: int, rng: np.random.Generator):
    """Vertex space for kinds that allow continuous marks."""
    ms = _build_space(cfg)
    if ms.kind == "finite":
        return realize(ms, n, "finite_counts")
    mode = cfg.get("mark_mode", "iid")
    if mode == "grid":
        return realize(ms, n, "deterministic_grid")
    if mode != "iid":
        raise ConfigError("mark_mode", f"expected 'iid' or 'grid', got {mode!r}")
    return realize(ms, n, "iid", rng)


# -- results ---------------------------------------------------------------------


@dataclass
class ExperimentResult:
    kind: str
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)
    resource_cap: bool = False


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(result: ExperimentResult, path) -> None:
    lines = [",".join(result.columns)]
    for row in result.rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _json_default(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON-serializable: {type(v).__name__}")


def write_result(result: ExperimentResult, config: dict, out_path,
                 wall_time_s: float | None = None,
                 workers: int = 1) -> tuple[str, str]:
    """CSV table plus a JSON sidecar next to it.

    The CSV is a pure function of the config (identical bytes whatever the
    worker count); timing and anything machine-dependent stays in the
    sidecar.  Returns (csv_path, sidecar_path).
    """
    out_path = str(out_path)
    write_csv(result, out_path)
    side = (out_path[:-4] if out_path.endswith(".csv") else out_path) \
        + ".json"
    payload = {"kind": result.kind, "version": __version__, "config": config,
               "columns": result.columns, "row_count": len(result.rows),
               "summary": result.summary,
               "resource_cap": result.resource_cap, "workers": workers,
               "wall_time_s": wall_time_s}
    with open(side, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True,
                  default=_json_default)
        fh.write("\n")
    return out_path, side


# -- unit scheduling -------------------------------------------------------------


def _map_units(tasks, workers: int):
    """Run unit tasks in order; returns (results, size_error_or_None).

    Unit results depend only on the task content, so any worker count
    yields the same list.  On a size error the completed prefix is kept.
    """
    out = []
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            it = pool.map(_run_unit, tasks)
            try:
                for res in it:
                    out.append(res)
            except SimulationSizeError as err:
                return out, err
        return out, None
    for task in tasks:
        try:
            out.append(_run_unit(task))
        except SimulationSizeError as err:
            return out, err
    return out, None


def _run_unit(task: dict):
    return _UNIT_FUNCS[task["u"]](task)


def _unit_couple(task: dict):
    cfg = task["cfg"]
    ctx = _Context(cfg, n=task["n"])
    seed = cfg["seed"]
    radius = task["d"]
    horizon = _as_float(cfg["horizon"], "horizon")
    k = cfg.get("k", 1)
    failures = 0
    causes: Counter = Counter()
    for rep in range(task["lo"], task["hi"]):
        rng = stream(seed, _TAG_COUPLE, task["n_i"], task["d_i"], rep)
        res = couple_ball_with_tree(ctx.vs, ctx.kappa, ctx.beta, k, radius,
                                    horizon, rng, record=False,
                                    dynamics=ctx.dynamics)
        if not res.report.success:
            failures += 1
            causes[res.report.failure_cause] += 1
    return failures, dict(causes)


def _unit_ball_codes(task: dict):
    cfg = task["cfg"]
    ctx = _Context(cfg, n=task["n"])
    seed = cfg["seed"]
    radius = _as_int(cfg["radius"], "radius")
    horizon = _as_float(cfg["horizon"], "horizon")
    grid = cfg.get("grid_step", 0.5)
    rng = stream(seed, _TAG_BALL_CODES, task["n_i"], task["t"])
    trace = ctx.simulate(horizon, rng)
    keys = []
    for _ in range(task["m"]):
        root = int(rng.integers(ctx.vs.n))
        traj = extract_ball(trace, root, radius).trajectory
        keys.append(canonical_code(traj, grid_step=grid).key)
    return keys


def _unit_tree_codes(task: dict):
    cfg = task["cfg"]
    ctx = _Context(cfg)
    _finite_only(ctx.ms, "converge")
    seed = cfg["seed"]
    params = ctx.limit_params(_as_int(cfg["radius"], "radius"),
                              _as_float(cfg["horizon"], "horizon"))
    grid = cfg.get("grid_step", 0.5)
    keys = []
    for i in range(task["lo"], task["hi"]):
        rng = stream(seed, _TAG_TREE_CODES, i)
        traj = ctx.simulate_limit(params, rng)
        keys.append(canonical_code(traj, grid_step=grid).key)
    return keys


def _unit_pair_codes(task: dict):
    cfg = task["cfg"]
    ctx = _Context(cfg, n=task["n"])
    seed = cfg["seed"]
    radius = _as_int(cfg["radius"], "radius")
    horizon = _as_float(cfg["horizon"], "horizon")
    grid = cfg.get("grid_step", 0.5)
    same_root = bool(cfg.get("force_same_root", False))
    rng = stream(seed, _TAG_PAIR_CODES, task["n_i"], task["t"])
    trace = ctx.simulate(horizon, rng)
    n = ctx.vs.n
    pairs = []
    for _ in range(task["m"]):
        a = int(rng.integers(n))
        if same_root:
            b = a
        else:
            b = int(rng.integers(n))
            while b == a:
                b = int(rng.integers(n))
        ka = canonical_code(extract_ball(trace, a, radius).trajectory,
                            grid_step=grid).key
        kb = canonical_code(extract_ball(trace, b, radius).trajectory,
                            grid_step=grid).key
        pairs.append((ka, kb))
    return pairs


def _unit_contact(task: dict):
    cfg = task["cfg"]
    ctx = _Context(cfg, n=task["n"])
    seed = cfg["seed"]
    lam = _as_float(cfg["lambda"], "lambda", minimum=0.0)
    times = sorted(_as_float(t, f"times[{i}]", minimum=0.0)
                   for i, t in enumerate(cfg["times"]))
    horizon = times[-1] if times[-1] > 0 else 1e-9
    estimator = cfg.get("estimator", "all")
    probes = [min(t, horizon * (1 - 1e-12)) for t in times]
    sums = np.zeros(len(times))
    sumsq = np.zeros(len(times))
    for rep in range(task["lo"], task["hi"]):
        rng = stream(seed, _TAG_CONTACT, rep)
        trace = ctx.simulate(horizon, rng)
        if estimator == "dual":
            root = int(rng.integers(ctx.vs.n))
            ct = run_contact(trace, lam, horizon, rng, initial=[root])
            vals = np.array([1.0 if ct.alive_at(t) else 0.0 for t in probes])
        else:
            ct = run_contact(trace, lam, horizon, rng, initial="all")
            vals = np.array([ct.fraction_infected(t) for t in probes])
        sums += vals
        sumsq += vals * vals
    return sums, sumsq, task["hi"] - task["lo"]


def _unit_graphical(task: dict):
    cfg = task["cfg"]
    ctx = _Context(cfg)
    seed = cfg["seed"]
    rng = stream(seed, _TAG_GRAPHICAL, task["n_i"])
    vs = _realized_space(cfg, task["n"], rng)
    gd = graphical_check(ctx.kappa, ctx.beta, vs,
                         mc_samples=cfg.get("mc_samples", 100_000), rng=rng)
    return gd


_UNIT_FUNCS = {
    "couple": _unit_couple,
    "ball_codes": _unit_ball_codes,
    "tree_codes": _unit_tree_codes,
    "pair_codes": _unit_pair_codes,
    "contact": _unit_contact,
    "graphical": _unit_graphical,
}


def _blocks(total: int, size: int):
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


# -- tree and ball row helpers ---------------------------------------------------


def _word_str(word) -> str:
    return ".".join(str(c) for c in word)


def _state_counts(state) -> tuple[int, int, int]:
    n_open = n_seg = 0
    for (_, s) in state.nodes.values():
        if s == OPEN:
            n_open += 1
        elif s == SEGMENTED:
            n_seg += 1
    return len(state.nodes), n_open, n_seg


def _trajectory_rows(traj, replica: int) -> list:
    rows = []
    for j, (t, state) in enumerate(zip(traj.jump_times, traj.states)):
        nv, no, ns = _state_counts(state)
        rows.append([replica, j, t, nv, no, ns])
    return rows


def _trajectory_json(traj) -> dict:
    out = {"horizon": traj.horizon, "cemetery_time": traj.cemetery_time,
           "jumps": []}
    for t, state in zip(traj.jump_times, traj.states):
        nodes = []
        for word in sorted(state.nodes):
            mark, s = state.nodes[word]
            nodes.append({"word": _word_str(word), "mark": mark,
                          "edge": None if s is None else
                          ("open" if s == OPEN else "segmented")})
        out["jumps"].append({"time": t, "nodes": nodes})
    return out


# -- runners ---------------------------------------------------------------------


def _run_sample_graph(cfg: dict, workers: int) -> ExperimentResult:
    n = _int_field(cfg, "n", "", minimum=1)
    horizon = _float_field(cfg, "horizon", "", minimum=0.0)
    ctx = _Context(cfg)
    rng = stream(cfg["seed"], _TAG_SINGLE)
    vs = _realized_space(cfg, n, rng)
    sim = simulate_vertex_updating if ctx.dynamics == "vertex" \
        else simulate_edge_updating
    trace = sim(vs, ctx.kappa, ctx.beta, horizon, rng)
    rows = []
    for (u, v) in sorted(trace.timelines):
        for (s, e) in trace.timelines[(u, v)]:
            rows.append([u, v, s, e])
    open_at0 = sum(1 for ivs in trace.timelines.values()
                   if any(s <= 0.0 < e for (s, e) in ivs))
    summary = {"n": n, "horizon": horizon, "dynamics": ctx.dynamics,
               "pairs_ever_open": len(trace.timelines),
               "open_at_time_zero": open_at0}
    if n <= 100_000:
        summary["marks"] = vs.marks.tolist()
    return ExperimentResult("sample-graph", list(_COLUMNS["sample-graph"]),
                            rows, summary)


def _run_sample_tree(cfg: dict, workers: int) -> ExperimentResult:
    ctx = _Context(cfg)
    _finite_only(ctx.ms, "sample-tree")
    depth = _int_field(cfg, "depth", "", minimum=0)
    horizon = _float_field(cfg, "horizon", "", minimum=0.0)
    replicas = _int_field(cfg, "replicas", "", required=False, default=1,
                          minimum=1)
    root_type = _int_field(cfg, "root_type", "", required=False)
    if root_type is not None and not 0 <= root_type < ctx.ms.r:
        raise ConfigError("root_type", f"must be in [0, {ctx.ms.r})")
    params = ctx.limit_params(depth, horizon, root_type)
    rows = []
    cemeteries = []
    for i in range(replicas):
        rng = stream(cfg["seed"], _TAG_TREE_RUN, i)
        traj = ctx.simulate_limit(params, rng)
        rows.extend(_trajectory_rows(traj, i))
        cemeteries.append(traj.cemetery_time)
    summary = {"replicas": replicas, "depth": depth, "horizon": horizon,
               "dynamics": ctx.dynamics, "cemetery_times": cemeteries}
    if replicas == 1:
        summary["trajectory"] = _trajectory_json(traj)
    return ExperimentResult("sample-tree", list(_COLUMNS["sample-tree"]),
                            rows, summary)


def _run_ball(cfg: dict, workers: int) -> ExperimentResult:
    n = _int_field(cfg, "n", "", minimum=1)
    radius = _int_field(cfg, "radius", "", minimum=0)
    horizon = _float_field(cfg, "horizon", "", minimum=0.0)
    root = _int_field(cfg, "root", "", required=False, default=0, minimum=0)
    if root >= n:
        raise ConfigError("root", f"must be below n = {n}")
    ctx = _Context(cfg)
    rng = stream(cfg["seed"], _TAG_BALL_RUN)
    vs = _realized_space(cfg, n, rng)
    sim = simulate_vertex_updating if ctx.dynamics == "vertex" \
        else simulate_edge_updating
    trace = sim(vs, ctx.kappa, ctx.beta, horizon, rng)
    ball = extract_ball(trace, root, radius)
    rows = _trajectory_rows(ball.trajectory, 0)
    summary = {"n": n, "root": root, "radius": radius, "horizon": horizon,
               "dynamics": ctx.dynamics, "failed": ball.failed,
               "failure_time": ball.tree_failure_time,
               "vertex_map": {_word_str(w): int(v)
                              for w, v in ball.vertex_map.items()},
               "trajectory": _trajectory_json(ball.trajectory)}
    return ExperimentResult("ball", list(_COLUMNS["ball"]), rows, summary)


def _run_couple(cfg: dict, workers: int) -> ExperimentResult:
    ctx = _Context(cfg)
    _finite_only(ctx.ms, "couple")
    n_list = _int_list_field(cfg, "n", "", minimum=1)
    d_list = _int_list_field(cfg, "radius", "", minimum=0)
    horizon = _float_field(cfg, "horizon", "", minimum=0.0)
    k = _int_field(cfg, "k", "", required=False, default=1, minimum=1)
    cfg = dict(cfg, k=k)
    replicas = _int_field(cfg, "replicas", "", minimum=1)
    block = _int_field(cfg, "block_size", "", required=False, default=500,
                       minimum=1)

    tasks = []
    for i, n in enumerate(n_list):
        for j, d in enumerate(d_list):
            for (lo, hi) in _blocks(replicas, block):
                tasks.append({"u": "couple", "cfg": cfg, "n": n, "n_i": i,
                              "d": d, "d_i": j, "lo": lo, "hi": hi})
    results, err = _map_units(tasks, workers)

    rows = []
    cells = []
    per = len(_blocks(replicas, block))
    for idx in range(0, len(results) - len(results) % per, per):
        task = tasks[idx]
        n, d = task["n"], task["d"]
        failures = sum(r[0] for r in results[idx:idx + per])
        causes: Counter = Counter()
        for r in results[idx:idx + per]:
            causes.update(r[1])
        vs = realize(ctx.ms, n, "finite_counts")
        fb = failure_bound(n, horizon, d, k, ctx.kappa, ctx.beta,
                           vs.discrepancy())
        cell = {"n": n, "d": d, "failures": failures,
                "causes": dict(sorted(causes.items())), **fb.as_dict()}
        if ctx.ms.r == 1 and k == 1 and isinstance(ctx.kappa, MatrixKernel):
            cell["bound_dynperc"] = dynperc_bound(
                n, horizon, d, ctx.kappa.values[0][0])
        cells.append(cell)
        rows.append([n, d, horizon, k, replicas, failures,
                     failures / replicas, fb.explicit])
    summary = {"cells": cells, "dynamics": ctx.dynamics}
    return ExperimentResult("couple", list(_COLUMNS["couple"]), rows,
                            summary, resource_cap=err is not None)


def _dependence_statistic(pairs) -> float:
    """TV distance between the pair law and the product of its pooled
    marginals, both estimated from the same sample."""
    n = len(pairs)
    joint = Counter(pairs)
    marg: Counter = Counter()
    for a, b in pairs:
        marg[a] += 1
        marg[b] += 1
    tot = 2 * n
    stat = 0.0
    cross = 0.0
    for (a, b), c in joint.items():
        prod = (marg[a] / tot) * (marg[b] / tot)
        stat += abs(c / n - prod)
        cross += prod
    # cells with empirical mass zero contribute their product mass
    return 0.5 * (stat + (1.0 - cross))


def _product_null_floor(pairs, boot: int, rng: np.random.Generator) -> float:
    """Mean statistic when the same-size sample is drawn from the product
    law itself; the plug-in statistic sits this far above zero under
    independence."""
    n = len(pairs)
    marg: Counter = Counter()
    for a, b in pairs:
        marg[a] += 1
        marg[b] += 1
    values = sorted(marg)
    cdf = np.cumsum([marg[v] for v in values]) / (2 * n)
    stats = []
    for _ in range(boot):
        ia = np.searchsorted(cdf, rng.random(n), side="right")
        ib = np.searchsorted(cdf, rng.random(n), side="right")
        stats.append(_dependence_statistic(
            [(values[x], values[y]) for x, y in zip(ia, ib)]))
    return float(np.mean(stats))


def _cluster_bootstrap_se(clusters, boot: int,
                          rng: np.random.Generator) -> float:
    """Resample whole traces: pairs sharing a trace are dependent."""
    stats = []
    m = len(clusters)
    for _ in range(boot):
        idx = rng.integers(0, m, m)
        flat = [p for i in idx for p in clusters[i]]
        stats.append(_dependence_statistic(flat))
    return float(np.std(stats, ddof=1)) if boot > 1 else 0.0


def _run_converge(cfg: dict, workers: int) -> ExperimentResult:
    ctx = _Context(cfg)
    _finite_only(ctx.ms, "converge")
    mode = cfg.get("mode", "tv")
    if mode not in ("tv", "two_root"):
        raise ConfigError("mode", f"expected 'tv' or 'two_root', got {mode!r}")
    n_list = _int_list_field(cfg, "n", "", minimum=1)
    radius = _int_field(cfg, "radius", "", minimum=0)
    horizon = _float_field(cfg, "horizon", "", minimum=0.0)
    grid = _float_field(cfg, "grid_step", "", required=False, default=0.5,
                        minimum=0.0)
    if grid <= 0:
        raise ConfigError("grid_step", "must be positive")
    cfg = dict(cfg, grid_step=grid)

    if mode == "two_root":
        return _run_two_root(cfg, ctx, n_list, radius, horizon, grid, workers)

    samples = _int_field(cfg, "samples", "", minimum=1)
    per_trace = _int_field(cfg, "roots_per_trace", "", required=False,
                           default=50, minimum=1)
    n_traces = -(-samples // per_trace)

    tasks = [{"u": "tree_codes", "cfg": cfg, "lo": lo, "hi": hi}
             for (lo, hi) in _blocks(samples, 500)]
    tree_task_count = len(tasks)
    ball_spans = []
    for i, n in enumerate(n_list):
        start = len(tasks)
        for t in range(n_traces):
            tasks.append({"u": "ball_codes", "cfg": cfg, "n": n, "n_i": i,
                          "t": t, "m": per_trace})
        ball_spans.append((start, len(tasks)))
    results, err = _map_units(tasks, workers)

    tree_codes = [key for blk in results[:tree_task_count] for key in blk]
    rows = []
    details = []
    if len(tree_codes) >= samples:
        tree_codes = tree_codes[:samples]
        for i, n in enumerate(n_list):
            start, stop = ball_spans[i]
            if stop > len(results):
                break
            ball_codes = [key for blk in results[start:stop]
                          for key in blk][:samples]
            est = tv_estimate(ball_codes, tree_codes)
            vs = realize(ctx.ms, n, "finite_counts")
            fb = failure_bound(n, horizon, radius, 1, ctx.kappa, ctx.beta,
                               vs.discrepancy())
            rows.append([n, radius, horizon, grid, samples, est.tv,
                         est.sampling_se, est.null_floor, est.stderr,
                         fb.explicit])
            details.append({"n": n, "distinct_ball_codes":
                            len(set(ball_codes)),
                            "distinct_tree_codes": len(set(tree_codes))})
    summary = {"mode": "tv", "dynamics": ctx.dynamics, "cells": details}
    return ExperimentResult("converge", list(_COLUMNS["converge"]), rows,
                            summary, resource_cap=err is not None)


def _run_two_root(cfg, ctx, n_list, radius, horizon, grid,
                  workers: int) -> ExperimentResult:
    pairs = _int_field(cfg, "pairs", "", minimum=1)
    per_trace = _int_field(cfg, "pairs_per_trace", "", required=False,
                           default=50, minimum=1)
    boot = _int_field(cfg, "bootstrap", "", required=False, default=60,
                      minimum=0)
    n_traces = -(-pairs // per_trace)

    tasks = []
    for i, n in enumerate(n_list):
        for t in range(n_traces):
            tasks.append({"u": "pair_codes", "cfg": cfg, "n": n, "n_i": i,
                          "t": t, "m": per_trace})
    results, err = _map_units(tasks, workers)

    rows = []
    details = []
    for i, n in enumerate(n_list):
        start, stop = i * n_traces, (i + 1) * n_traces
        if stop > len(results):
            break
        clusters = []
        kept = 0
        for blk in results[start:stop]:
            take = blk[:max(0, pairs - kept)]
            if take:
                clusters.append(take)
                kept += len(take)
        flat = [p for blk in clusters for p in blk]
        stat = _dependence_statistic(flat)
        se = floor = None
        if boot:
            se = _cluster_bootstrap_se(clusters, boot,
                                       stream(cfg["seed"], _TAG_ANALYSIS,
                                              i, 0))
            floor = _product_null_floor(flat, boot,
                                        stream(cfg["seed"], _TAG_ANALYSIS,
                                               i, 1))
        rows.append([n, radius, horizon, grid, len(flat), stat, se, floor])
        details.append({"n": n, "distinct_codes":
                        len({c for p in flat for c in p})})
    summary = {"mode": "two_root", "dynamics": ctx.dynamics,
               "force_same_root": bool(cfg.get("force_same_root", False)),
               "cells": details}
    return ExperimentResult("converge", list(_COLUMNS["converge-two-root"]),
                            rows, summary, resource_cap=err is not None)


def _run_contact(cfg: dict, workers: int) -> ExperimentResult:
    ctx = _Context(cfg)
    _finite_only(ctx.ms, "contact")
    n = _int_field(cfg, "n", "", minimum=1)
    lam = _float_field(cfg, "lambda", "", minimum=0.0)
    times = _field(cfg, "times", "")
    if not isinstance(times, list) or not times:
        raise ConfigError("times", "expected a nonempty list of times")
    times = sorted(_as_float(t, f"times[{i}]", minimum=0.0)
                   for i, t in enumerate(times))
    replicas = _int_field(cfg, "replicas", "", minimum=1)
    estimator = cfg.get("estimator", "all")
    if estimator not in ("all", "dual"):
        raise ConfigError("estimator",
                          f"expected 'all' or 'dual', got {estimator!r}")
    block = _int_field(cfg, "block_size", "", required=False, default=200,
                       minimum=1)
    tasks = [{"u": "contact", "cfg": cfg, "n": n, "lo": lo, "hi": hi}
             for (lo, hi) in _blocks(replicas, block)]
    results, err = _map_units(tasks, workers)

    rows = []
    if results and err is None:
        sums = sum(r[0] for r in results)
        sumsq = sum(r[1] for r in results)
        count = sum(r[2] for r in results)
        kernel_name = cfg["kappa"].get("form", "custom")
        for i, t in enumerate(times):
            mean = sums[i] / count
            var = max(0.0, (sumsq[i] - count * mean * mean)
                      / max(1, count - 1))
            se = math.sqrt(var / count)
            rows.append([t, mean, se, n, lam, kernel_name, ctx.dynamics])
    summary = {"replicas": replicas, "estimator": estimator,
               "dynamics": ctx.dynamics}
    return ExperimentResult("contact", list(_COLUMNS["contact"]), rows,
                            summary, resource_cap=err is not None)


def _run_bound(cfg: dict, workers: int) -> ExperimentResult:
    ctx = _Context(cfg)
    _finite_only(ctx.ms, "bound")
    n_list = _int_list_field(cfg, "n", "", minimum=1)
    radius = _int_field(cfg, "radius", "", minimum=0)
    horizon = _float_field(cfg, "horizon", "", minimum=0.0)
    k = _int_field(cfg, "k", "", required=False, default=1, minimum=1)
    disc = _float_field(cfg, "discrepancy", "", required=False, default=0.0,
                        minimum=0.0)
    rows = []
    for n in n_list:
        fb = failure_bound(n, horizon, radius, k, ctx.kappa, ctx.beta, disc)
        dyn = None
        if ctx.ms.r == 1 and k == 1 and isinstance(ctx.kappa, MatrixKernel):
            dyn = dynperc_bound(n, horizon, radius, ctx.kappa.values[0][0])
        rows.append([n, radius, horizon, k, fb.lam, fb.mean_bound,
                     fb.second_moment_bound, fb.explicit, fb.simplified,
                     dyn])
    summary = {"constant": fb.constant, "discrepancy": disc}
    return ExperimentResult("bound", list(_COLUMNS["bound"]), rows, summary)


def _run_graphical_check(cfg: dict, workers: int) -> ExperimentResult:
    _Context(cfg)  # validates kernels against the space up front
    n_list = _int_list_field(cfg, "n", "", minimum=1)
    tasks = [{"u": "graphical", "cfg": cfg, "n": n, "n_i": i}
             for i, n in enumerate(n_list)]
    results, err = _map_units(tasks, workers)
    rows = []
    for n, gd in zip(n_list, results):
        rows.append([n, gd.lhs_kappa, gd.rhs_kappa, gd.rhs_kappa_se,
                     gd.lhs_kappa_beta, gd.rhs_kappa_beta,
                     gd.rhs_kappa_beta_se, gd.mark_discrepancy])
    return ExperimentResult("graphical-check",
                            list(_COLUMNS["graphical-check"]), rows, {},
                            resource_cap=err is not None)


_RUNNERS = {
    "sample-graph": _run_sample_graph,
    "sample-tree": _run_sample_tree,
    "ball": _run_ball,
    "couple": _run_couple,
    "converge": _run_converge,
    "contact": _run_contact,
    "bound": _run_bound,
    "graphical-check": _run_graphical_check,
}

_COLUMNS = {
    "sample-graph": ["u", "v", "open_start", "open_end"],
    "sample-tree": ["replica", "jump", "time", "vertices", "open_edges",
                    "segmented_edges"],
    "ball": ["replica", "jump", "time", "vertices", "open_edges",
             "segmented_edges"],
    "couple": ["n", "d", "T", "k", "replicas", "failures", "empirical_rate",
               "bound"],
    "converge": ["n", "d", "T", "grid_step", "samples", "tv", "tv_se",
                 "tv_floor", "tv_stderr", "bound"],
    "converge-two-root": ["n", "d", "T", "grid_step", "pairs", "statistic",
                          "stat_se", "null_floor"],
    "contact": ["t", "estimate", "stderr", "n", "lambda", "kernel",
                "dynamics"],
    "bound": ["n", "d", "T", "k", "lambda", "ez_bound", "ez2_bound",
              "bound_explicit", "bound_simplified", "bound_dynperc"],
    "graphical-check": ["n", "lhs_kappa", "rhs_kappa", "rhs_kappa_se",
                        "lhs_kappa_beta", "rhs_kappa_beta",
                        "rhs_kappa_beta_se", "mark_discrepancy"],
}


def _default_columns(config: dict) -> list:
    kind = config.get("kind")
    if kind == "converge" and config.get("mode") == "two_root":
        return list(_COLUMNS["converge-two-root"])
    return list(_COLUMNS.get(kind, ["error"]))


def run(config: dict, workers: int = 1) -> ExperimentResult:
    """Validate the config and execute the requested experiment."""
    if not isinstance(config, dict):
        raise ConfigError("", "config must be a JSON object")
    kind = _field(config, "kind", "")
    if kind not in KINDS:
        raise ConfigError("kind", f"expected one of {', '.join(KINDS)}, "
                          f"got {kind!r}")
    _int_field(config, "seed", "", minimum=0)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers", "must be a positive integer")
    try:
        result = _RUNNERS[kind](config, workers)
    except SimulationSizeError as err:
        # nothing completed before the cap; report the empty shell
        result = ExperimentResult(kind, _default_columns(config), [],
                                  {"resource_error": str(err)},
                                  resource_cap=True)
    if result.resource_cap:
        result.summary.setdefault(
            "resource_cap",
            "a size cap stopped the run; rows cover completed cells only")
    return result


def two_root_independence(vs, kappa, beta, radius: int, horizon: float,
                          replicas: int, rng: np.random.Generator,
                          dynamics: str = "edge", grid_step: float = 0.5,
                          force_same_root: bool = False,
                          bootstrap: int = 0) -> dict:
    """Dependence between the ball histories at two uniform roots.

    Each replica runs a fresh graph, samples two distinct uniform roots
    (or the same root twice with force_same_root, a positive control for
    the statistic), and records the pair of canonical codes.  Returns the
    TV distance between the empirical pair law and the product of its
    pooled marginals, with optional bootstrap error scales; under
    asymptotic independence the statistic drops to its small-sample floor.
    """
    sim = simulate_vertex_updating if dynamics == "vertex" \
        else simulate_edge_updating
    pairs = []
    for _ in range(replicas):
        trace = sim(vs, kappa, beta, horizon, rng)
        a = int(rng.integers(vs.n))
        if force_same_root:
            b = a
        else:
            b = int(rng.integers(vs.n))
            while b == a:
                b = int(rng.integers(vs.n))
        ka = canonical_code(extract_ball(trace, a, radius).trajectory,
                            grid_step=grid_step).key
        kb = canonical_code(extract_ball(trace, b, radius).trajectory,
                            grid_step=grid_step).key
        pairs.append((ka, kb))
    out = {"statistic": _dependence_statistic(pairs), "pairs": len(pairs),
           "stat_se": None, "null_floor": None}
    if bootstrap:
        out["stat_se"] = _cluster_bootstrap_se([[p] for p in pairs],
                                               bootstrap, rng)
        out["null_floor"] = _product_null_floor(pairs, bootstrap, rng)
    return out
