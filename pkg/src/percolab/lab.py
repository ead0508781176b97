"""Experiment runner: config parsing, seeded replicates, CSV output.

Config files are flat ``key = value`` lines under the sections ``[process]``,
``[marks]``, ``[graph]``, ``[analysis]`` and ``[run]``; ``#`` starts a comment.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, InvalidInputError
from .geom import Norm, Window
from .graphs import BuilderSpec, SpatialGraph
from .percolation import CurveRow, check_subgraph, components, crossing_probe, default_delta, graph_range
from .procgen import MarkSpec, ProcessSpec, attach_marks, child_seed
from .radii import ExponentialPrior, RadiiState, run_chain

log = logging.getLogger(__name__)

PRESETS = ("figure-b", "bknn-threshold", "radii-beta-sweep", "sinr-degree-audit")

# key -> (type, required)
_SCHEMA = {
    "process": {
        "kind": (str, True), "intensity": (float, False), "lam_pv": (float, False), "lam_lin": (float, False),
        "interaction_cost": (float, False), "interaction_range": (float, False), "sweeps": (int, False),
        "spacing": (float, False), "lower": ("floats", True), "upper": ("floats", True), "boundary": (str, False),
        "norm_p": (float, False),
    },
    "marks": {"kind": (str, True), "value": (float, False), "rate": (float, False), "mu": (float, False),
              "sigma": (float, False)},
    "graph": {
        "builders": ("strs", True), "sweep": (str, False), "values": ("floats", False), "k": (int, False),
        "k1": (int, False), "k2": (int, False), "r": (float, False), "radius": (float, False),
        "region": (str, False), "mode": (str, False), "ordering": (str, False), "pathloss": (str, False),
        "alpha": (float, False), "tau": (float, False), "gamma": ("auto_float", False), "noise": (float, False),
        "gamma_margin": (float, False),
    },
    "analysis": {
        "mode": (str, False), "axis": (int, False), "dump_graphs": (bool, False), "dump_replicate": (int, False),
        "subgraph_checks": ("strs", False), "betas": ("floats", False), "prior_rate": (float, False),
        "burn_in": (int, False), "thin": (int, False), "samples": (int, False),
    },
    "run": {"name": (str, False), "seed": (int, True), "replicates": (int, True), "workers": (int, False),
            "out_dir": (str, False)},
}

_BUILDER_KEYS = {
    "bknn": ("k",),
    "fknn": ("k", "ordering", "pathloss", "alpha"),
    "uknn": ("k", "ordering", "pathloss", "alpha"),
    "gilbert": ("r",),
    "sinr": ("k", "tau", "gamma", "noise", "pathloss", "alpha", "gamma_margin"),
    "f_k1k2": ("k1", "k2", "ordering", "pathloss", "alpha"),
    "local_extreme": ("k", "radius", "region", "mode", "ordering", "pathloss", "alpha"),
    "kth_nn": ("k",),
}

_INT_PARAMS = {"k", "k1", "k2"}


@dataclass
class ExperimentConfig:
    name: str
    process: ProcessSpec
    window: Window
    norm: Norm
    marks: MarkSpec | None
    builders: list[BuilderSpec]
    sweep: str | None
    values: list
    mode: str = "percolation"
    axis: int = 0
    dump_graphs: bool = False
    dump_replicate: int = 0
    subgraph_checks: list[tuple[str, str]] = field(default_factory=list)
    betas: list[float] = field(default_factory=lambda: [0.0, 1.0, 4.0])
    prior_rate: float = 1.0
    burn_in: int = 200
    thin: int = 5
    samples: int = 100
    seed: int = 0
    replicates: int = 1
    workers: int = 1
    out_dir: str = "out"


@dataclass
class ResultRecord:
    experiment: str
    builder: str
    param: float
    replicate: int
    seed: int
    n_points: int
    n_edges: int
    max_degree: int
    degree_bound: float
    n_components: int
    largest_fraction: float
    crossed: bool
    wall_time: float = 0.0  # not written to CSV: outputs must be byte-reproducible

    HEADER = ("experiment", "builder", "param", "replicate", "seed", "n_points", "n_edges", "max_degree",
              "degree_bound", "n_components", "largest_fraction", "crossed")

    def as_row(self):
        return (self.experiment, self.builder, self.param, self.replicate, self.seed, self.n_points, self.n_edges,
                self.max_degree, self.degree_bound, self.n_components, self.largest_fraction, int(self.crossed))


@dataclass
class RadiiRecord:
    experiment: str
    beta: float
    replicate: int
    seed: int
    n_points: int
    energy_mean: float
    energy_stderr: float
    mean_radius: float

    HEADER = ("experiment", "beta", "replicate", "seed", "n_points", "energy_mean", "energy_stderr", "mean_radius")

    def as_row(self):
        return (self.experiment, self.beta, self.replicate, self.seed, self.n_points, self.energy_mean,
                self.energy_stderr, self.mean_radius)


# --- parsing ------------------------------------------------------------------


def _convert(kind, text: str):
    if kind is str:
        return text
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is bool:
        if text.lower() in ("true", "yes", "1"):
            return True
        if text.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if kind == "floats":
        return [float(v) for v in text.split(",") if v.strip()]
    if kind == "strs":
        return [v.strip() for v in text.split(",") if v.strip()]
    if kind == "auto_float":
        return "auto" if text == "auto" else float(text)
    raise AssertionError(kind)


def _read_sections(text: str, problems: list):
    """Returns ``{section: {key: (value, lineno)}}``, recording syntax problems."""
    sections: dict[str, dict] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SCHEMA:
                problems.append(f"line {lineno}: unknown section [{current}]")
            elif current in sections:
                problems.append(f"line {lineno}: duplicate section [{current}]")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        if current is None:
            problems.append(f"line {lineno}: key outside of any section")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        schema = _SCHEMA.get(current)
        if schema is None:
            continue
        if key not in schema:
            problems.append(f"line {lineno}: unknown key {key!r} in [{current}]")
            continue
        if key in sections[current]:
            problems.append(f"line {lineno}: duplicate key {key!r} in [{current}]")
        try:
            sections[current][key] = (_convert(schema[key][0], value), lineno)
        except ValueError as exc:
            problems.append(f"line {lineno}: bad value for {key!r}: {exc}")
    return sections


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate a config; raises ``ConfigError`` listing every problem found."""
    problems: list[str] = []
    sections = _read_sections(text, problems)

    def line_of(sec, key):
        return sections.get(sec, {}).get(key, (None, None))[1]

    def where(sec, key):
        ln = line_of(sec, key)
        return f"line {ln}" if ln else f"[{sec}]"

    def get(sec, key, default=None):
        return sections.get(sec, {}).get(key, (default, None))[0]

    def check(cond, sec, key, msg):
        if not cond:
            problems.append(f"{where(sec, key)}: {msg}")
        return cond

    radii_mode = get("analysis", "mode") == "radii"
    for sec, schema in _SCHEMA.items():
        if (sec == "marks" and "marks" not in sections) or (sec == "graph" and radii_mode):
            continue
        for key, (_, required) in schema.items():
            if required and key not in sections.get(sec, {}):
                problems.append(f"[{sec}]: missing required key {key!r}")

    def attempt(fn, sec, key):
        try:
            return fn()
        except InvalidInputError as exc:
            problems.append(f"{where(sec, key)}: {exc}")
        except (TypeError, ValueError) as exc:
            problems.append(f"{where(sec, key)}: {exc}")
        return None

    # process and window
    pkw = {k: get("process", k) for k in ("kind", "intensity", "lam_pv", "lam_lin", "interaction_cost",
                                           "interaction_range", "sweeps", "spacing") if get("process", k) is not None}
    process = attempt(lambda: ProcessSpec(**pkw), "process", "kind") if "kind" in pkw else None
    window = None
    if get("process", "lower") is not None and get("process", "upper") is not None:
        window = attempt(lambda: Window(tuple(get("process", "lower")), tuple(get("process", "upper")),
                                        get("process", "boundary", "hard")), "process", "lower")
    norm = attempt(lambda: Norm(get("process", "norm_p", 2.0)), "process", "norm_p")

    marks = None
    if "marks" in sections and get("marks", "kind") is not None:
        mkw = {k: get("marks", k) for k in ("kind", "value", "rate", "mu", "sigma") if get("marks", k) is not None}
        marks = attempt(lambda: MarkSpec(**mkw), "marks", "kind")

    mode = get("analysis", "mode", "percolation")
    check(mode in ("percolation", "radii"), "analysis", "mode", f"mode must be percolation or radii, got {mode!r}")

    # graph
    builders: list[BuilderSpec] = []
    sweep = get("graph", "sweep")
    values = get("graph", "values") or []
    names = get("graph", "builders") or []
    if mode == "percolation" and "graph" in sections:
        check(sweep is not None, "graph", "sweep", "percolation mode needs 'sweep'")
        check(len(values) > 0, "graph", "values", "percolation mode needs 'values'")
    if sweep is not None and sweep in _INT_PARAMS:
        if check(all(float(v).is_integer() for v in values), "graph", "values", f"{sweep} values must be integers"):
            values = [int(v) for v in values]
    for name in names:
        if name not in _BUILDER_KEYS:
            problems.append(f"{where('graph', 'builders')}: unknown builder {name!r}")
            continue
        params = {}
        for key in _BUILDER_KEYS[name]:
            v = get("graph", key)
            if v is not None:
                params[key] = v
        if params.get("gamma") == "auto":
            del params["gamma"]
        trial_values = values if sweep in _BUILDER_KEYS[name] else [None]
        if sweep is not None and sweep not in _BUILDER_KEYS[name] and not (name == "sinr" and sweep == "k"):
            problems.append(f"{where('graph', 'sweep')}: builder {name!r} has no parameter {sweep!r}")
            continue
        spec = BuilderSpec.make(name, **params)
        for v in trial_values:
            trial = spec.with_params(**{sweep: v}) if v is not None else spec
            problems.extend(f"{where('graph', 'values' if key == sweep else key)}: {msg}"
                            for key, msg in _validate_builder(trial))
        builders.append(spec)

    checks = []
    for item in get("analysis", "subgraph_checks") or []:
        parts = item.split(":")
        if check(len(parts) == 2 and all(p in names for p in parts), "analysis", "subgraph_checks",
                 f"subgraph check {item!r} must read 'builder:builder' over configured builders"):
            checks.append((parts[0], parts[1]))

    seed = get("run", "seed", 0)
    replicates = get("run", "replicates", 1)
    check(replicates is None or replicates >= 1, "run", "replicates", "replicates must be >= 1")
    workers = get("run", "workers", 1)
    check(workers >= 1, "run", "workers", "workers must be >= 1")
    axis = get("analysis", "axis", 0)
    if window is not None:
        check(0 <= axis < window.dimension, "analysis", "axis", "axis out of range")
    betas = get("analysis", "betas", [0.0, 1.0, 4.0])
    check(all(b >= 0 for b in betas), "analysis", "betas", "betas must be >= 0")
    prior_rate = get("analysis", "prior_rate", 1.0)
    check(prior_rate > 0, "analysis", "prior_rate", "prior_rate must be > 0")
    for key, default in (("burn_in", 200), ("thin", 5), ("samples", 100)):
        v = get("analysis", key, default)
        check(v >= (0 if key == "burn_in" else 1), "analysis", key, f"{key} out of range")
    if process is not None and process.kind == "cox_voronoi" and window is not None:
        check(window.dimension == 2, "process", "lower", "cox_voronoi needs a 2-D window")
    if mode == "percolation" and window is not None and window.torus:
        log.info("%s: torus window; crossing flags will be false", source)

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        name=get("run", "name", Path(source).stem if source != "<config>" else "experiment"),
        process=process, window=window, norm=norm, marks=marks, builders=builders, sweep=sweep, values=values,
        mode=mode, axis=axis, dump_graphs=get("analysis", "dump_graphs", False),
        dump_replicate=get("analysis", "dump_replicate", 0), subgraph_checks=checks, betas=betas,
        prior_rate=prior_rate, burn_in=get("analysis", "burn_in", 200), thin=get("analysis", "thin", 5),
        samples=get("analysis", "samples", 100), seed=seed, replicates=replicates, workers=workers,
        out_dir=get("run", "out_dir", "out"),
    )


def _validate_builder(spec: BuilderSpec):
    p = spec.kwargs
    for key in ("k", "k1", "k2"):
        if key in p and (p[key] is None or int(p[key]) < 1):
            yield key, f"{key} must be >= 1"
    if spec.name in ("bknn", "fknn", "uknn", "local_extreme", "kth_nn") and "k" not in p:
        yield "builders", f"builder {spec.name!r} needs k"
    if spec.name == "f_k1k2":
        if "k1" not in p or "k2" not in p:
            yield "builders", "f_k1k2 needs k1 and k2"
        elif not p["k1"] < p["k2"]:
            yield "k2", "need k1 < k2"
    if spec.name == "gilbert" and not p.get("r", 0) > 0:
        yield "r", "r must be > 0"
    if spec.name == "local_extreme":
        if not p.get("radius", 0) > 0:
            yield "radius", "radius must be > 0"
        if p.get("mode", "furthest") not in ("furthest", "nearest"):
            yield "mode", "mode must be furthest or nearest"
    if spec.name == "sinr":
        if not p.get("tau", 1.0) > 0:
            yield "tau", "tau must be > 0"
        if "gamma" in p and not p["gamma"] >= 0:
            yield "gamma", "gamma must be >= 0"
        if "gamma" not in p and "k" not in p:
            yield "gamma", "gamma = auto needs k"
        if not p.get("noise", 0.0) >= 0:
            yield "noise", "noise must be >= 0"
    try:
        spec.ordering()
        if spec.name == "sinr" and ("gamma" in p or "k" in p) and p.get("tau", 1.0) > 0 \
                and p.get("gamma", 0) >= 0 and p.get("noise", 0) >= 0:
            spec.sinr_params()
    except InvalidInputError as exc:
        yield "pathloss", str(exc)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise InvalidInputError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("percolab").joinpath("presets", f"{name}.ini").read_text()


def load_preset(name: str) -> ExperimentConfig:
    return parse_config(preset_text(name), f"{name}.ini")


# --- running --------------------------------------------------------------------


def _sample(config: ExperimentConfig, replicate: int):
    seed = child_seed(config.seed, replicate)
    points = config.process.sample(config.window, seed, config.norm)
    if config.marks is not None:
        points = attach_marks(points, config.marks, child_seed(seed, 1))
    return seed, points


def _sweep_specs(config: ExperimentConfig):
    for spec in config.builders:
        for v in config.values:
            yield spec, v, spec.with_params(**{config.sweep: v})


def _run_replicate(config: ExperimentConfig, replicate: int):
    seed, points = _sample(config, replicate)
    records, checks, graphs = [], [], {}
    built: dict[tuple[str, float], SpatialGraph] = {}
    for spec, value, trial in _sweep_specs(config):
        t0 = time.perf_counter()
        g = trial.build(points)
        rep = components(g)
        crossed = False
        if not config.window.torus and points.n:
            delta = default_delta(config.window, config.axis, graph_range(trial))
            crossed = crossing_probe(g, config.window, config.axis, delta, rep).crossed
        bound = trial.degree_bound()
        records.append(ResultRecord(config.name, spec.name, float(value), replicate, seed, points.n, g.n_edges,
                                    g.max_degree, float(bound), rep.n_components, rep.largest_fraction, crossed,
                                    time.perf_counter() - t0))
        built[(spec.name, float(value))] = g
        if replicate == config.dump_replicate and config.dump_graphs:
            graphs[(spec.name, value)] = g
    for a, b in config.subgraph_checks:
        for v in config.values:
            ok = check_subgraph(built[(a, float(v))], built[(b, float(v))])
            checks.append((a, b, float(v), replicate, ok))
    return records, checks, (points if graphs else None), graphs


def _run_replicate_args(args):
    return _run_replicate(*args)


def _radii_replicate(config: ExperimentConfig, replicate: int):
    seed, points = _sample(config, replicate)
    prior = ExponentialPrior(config.prior_rate)
    out, traces = [], {}
    for b, beta in enumerate(config.betas):
        chain_seed = child_seed(seed, 100 + b)
        state = RadiiState.from_prior(points, beta, prior, child_seed(chain_seed, 0))
        trace = run_chain(state, config.samples, child_seed(chain_seed, 1), config.burn_in, config.thin)
        e = np.array(trace.energy)
        stderr = float(e.std(ddof=1) / math.sqrt(len(e))) if len(e) > 1 else 0.0
        out.append(RadiiRecord(config.name, float(beta), replicate, seed, points.n, float(e.mean()), stderr,
                               float(np.mean(trace.mean_radius))))
        if replicate == config.dump_replicate:
            traces[beta] = (trace.rows(), trace.final.radii.tolist())
    return out, traces


def _radii_replicate_args(args):
    return _radii_replicate(*args)


def resolve_workers(cli_value: int | None, config: ExperimentConfig | None = None) -> int:
    if cli_value is not None:
        return max(1, int(cli_value))
    env = os.environ.get("PERCOLAB_WORKERS")
    if env:
        return max(1, int(env))
    return config.workers if config is not None else 1


def _map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _curve_rows(records: list[ResultRecord], builder: str) -> list[CurveRow]:
    rows = []
    for value in sorted({r.param for r in records if r.builder == builder}):
        group = [r for r in records if r.builder == builder and r.param == value]
        lf = np.array([r.largest_fraction for r in group])
        stderr = float(lf.std(ddof=1) / math.sqrt(len(lf))) if len(lf) > 1 else 0.0
        rows.append(CurveRow(value, len(group), float(np.mean([r.crossed for r in group])), float(lf.mean()),
                             stderr, max(r.max_degree for r in group)))
    return rows


def graph_dump_name(builder: str, sweep: str, value) -> str:
    return f"{builder}_{sweep}{io.fmt(value)}"


def emit_plotdata(graph: SpatialGraph, out_dir, stem: str) -> tuple[Path, Path]:
    """Write ``<stem>_points.csv`` (``id,x,y,mark``) and ``<stem>_edges.csv`` (``x0,y0,x1,y1``)."""
    config = graph.config
    if config.dimension != 2:
        raise InvalidInputError("plot data needs a 2-D configuration")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pts = io.write_plot_points(config, out_dir / f"{stem}_points.csv")
    c = config.coords
    rows = [(c[a, 0], c[a, 1], c[b, 0], c[b, 1]) for a, b in graph.edges.tolist()]
    edges = io.write_rows(out_dir / f"{stem}_edges.csv", ("x0", "y0", "x1", "y1"), rows)
    return pts, edges


@dataclass
class RunResult:
    records: list
    checks: list
    out_dir: Path
    files: list[Path]


def run_experiment(config: ExperimentConfig, workers: int | None = None, out_dir=None) -> RunResult:
    """Run every replicate and write CSVs. Output bytes depend only on the config and seed."""
    workers = resolve_workers(workers, config)
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config.mode == "radii":
        return _run_radii(config, workers, out)
    tasks = [(config, r) for r in range(config.replicates)]
    results = _map(_run_replicate_args, tasks, workers)
    records = sorted((rec for res in results for rec in res[0]),
                     key=lambda r: (config.builders.index(next(b for b in config.builders if b.name == r.builder)),
                                    r.param, r.replicate))
    checks = sorted((c for res in results for c in res[1]), key=lambda c: (c[0], c[1], c[2], c[3]))
    for rec in records:
        if rec.max_degree > rec.degree_bound:
            raise RuntimeError(f"{rec.builder} at {config.sweep}={rec.param}, replicate {rec.replicate}: "
                               f"degree {rec.max_degree} exceeds bound {rec.degree_bound}")
    files = [io.write_rows(out / "records.csv", ResultRecord.HEADER, [r.as_row() for r in records])]
    for spec in config.builders:
        rows = _curve_rows(records, spec.name)
        files.append(io.write_rows(out / f"curve_{spec.name}.csv", CurveRow.HEADER, [r.as_row() for r in rows]))
    if config.subgraph_checks:
        files.append(io.write_rows(out / "checks.csv", ("sub", "super", "param", "replicate", "ok"),
                                   [(a, b, v, r, int(ok)) for a, b, v, r, ok in checks]))
    for points, graphs in ((res[2], res[3]) for res in results):
        if points is None:
            continue
        files.extend(_write_dumps(graphs, config.sweep, out / "graphs", ""))
    log.info("%s: %d records written to %s", config.name, len(records), out)
    return RunResult(records, checks, out, files)


def _run_radii(config: ExperimentConfig, workers: int, out: Path) -> RunResult:
    tasks = [(config, r) for r in range(config.replicates)]
    results = _map(_radii_replicate_args, tasks, workers)
    records = sorted((rec for res in results for rec in res[0]), key=lambda r: (r.beta, r.replicate))
    files = [io.write_rows(out / "radii_summary.csv", RadiiRecord.HEADER, [r.as_row() for r in records])]
    for _, traces in results:
        for beta, (rows, radii) in sorted(traces.items()):
            files.append(io.write_rows(out / f"trace_beta{io.fmt(beta)}.csv", ("sweep", "total_energy", "mean_radius",
                                                                              "max_radius"), rows))
            files.append(io.write_rows(out / f"radii_beta{io.fmt(beta)}.csv", ("id", "radius"), enumerate(radii)))
    return RunResult(records, [], out, files)


def _write_dumps(graphs: dict, sweep: str, out: Path, suffix: str) -> list[Path]:
    files = []
    for (name, value), g in sorted(graphs.items(), key=lambda kv: (kv[0][0], float(kv[0][1]))):
        stem = graph_dump_name(name, sweep, value) + suffix
        files.extend(emit_plotdata(g, out, stem))
        files.append(io.write_edges(g, out / f"{stem}_edgelist.csv"))
    return files


def dump_graph(config: ExperimentConfig, replicate: int, out_dir=None) -> list[Path]:
    """Write points and edges for every builder and sweep value of one replicate."""
    if config.mode != "percolation":
        raise InvalidInputError("dump-graph needs a percolation config")
    if not 0 <= replicate:
        raise InvalidInputError("replicate must be >= 0")
    out = Path(out_dir if out_dir is not None else config.out_dir) / "graphs"
    out.mkdir(parents=True, exist_ok=True)
    cfg = replace(config, dump_graphs=True, dump_replicate=replicate, subgraph_checks=[])
    _, _, points, graphs = _run_replicate(cfg, replicate)
    files = [io.write_points(points, out / f"points_rep{replicate}.csv")]
    files.extend(_write_dumps(graphs, config.sweep, out, f"_rep{replicate}"))
    return files
