"""CSV serialization for configurations, segment sets and edge lists.

Every CSV may carry a sidecar ``<file>.meta`` of ``key = value`` lines holding the
window, norm and generator metadata.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .geom import Norm, PointConfiguration, Window


def fmt(x) -> str:
    """Shortest round-trip text for a float (ints stay ints)."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def parse_scalar(text: str):
    t = text.strip()
    if t in ("true", "false"):
        return t == "true"
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def write_meta(path, items: dict) -> None:
    lines = [f"{k} = {fmt(v)}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _window_meta(config: PointConfiguration) -> dict:
    return {
        "dimension": config.dimension,
        "lower": ",".join(fmt(v) for v in config.window.lower),
        "upper": ",".join(fmt(v) for v in config.window.upper),
        "boundary": config.window.boundary,
        "norm_p": config.norm.p,
        **{f"meta.{k}": v for k, v in config.meta.items()},
    }


def _config_from_meta(meta: dict, coords, marks) -> PointConfiguration:
    lower = tuple(float(v) for v in meta["lower"].split(","))
    upper = tuple(float(v) for v in meta["upper"].split(","))
    window = Window(lower, upper, meta.get("boundary", "hard"))
    extra = {k[5:]: parse_scalar(v) for k, v in meta.items() if k.startswith("meta.")}
    return PointConfiguration(window, coords, marks, Norm(float(meta.get("norm_p", 2.0))), extra)


def write_points(config: PointConfiguration, path) -> Path:
    """CSV ``id,x0,...,x{d-1},mark`` plus the window/meta sidecar."""
    path = Path(path)
    d = config.dimension
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"x{a}" for a in range(d)] + ["mark"])
        for i in range(config.n):
            w.writerow([i] + [fmt(v) for v in config.coords[i]] + [fmt(config.marks[i])])
    write_meta(sidecar_path(path), _window_meta(config))
    return path


def read_points(path) -> PointConfiguration:
    path = Path(path)
    meta = read_meta(sidecar_path(path))
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "id" or header[-1] != "mark":
        raise InvalidInputError(f"{path}: unexpected header {header}")
    d = len(header) - 2
    ids = [int(r[0]) for r in body]
    if ids != list(range(len(ids))):
        raise InvalidInputError(f"{path}: ids must be contiguous from 0")
    coords = np.array([[float(v) for v in r[1 : 1 + d]] for r in body]).reshape(-1, d)
    marks = np.array([float(r[-1]) for r in body])
    return _config_from_meta(meta, coords, marks)


def write_plot_points(config: PointConfiguration, path) -> Path:
    """Points file for plotting, ``id,x,y,mark`` (2-D only), with sidecar."""
    if config.dimension != 2:
        raise InvalidInputError("plot data needs a 2-D configuration")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "mark"])
        for i in range(config.n):
            x, y = config.coords[i]
            w.writerow([i, fmt(x), fmt(y), fmt(config.marks[i])])
    write_meta(sidecar_path(path), _window_meta(config))
    return path


def read_plot_points(path) -> PointConfiguration:
    path = Path(path)
    meta = read_meta(sidecar_path(path))
    with path.open(newline="") as fh:
        body = list(csv.reader(fh))[1:]
    coords = np.array([[float(r[1]), float(r[2])] for r in body]).reshape(-1, 2)
    marks = np.array([float(r[3]) for r in body])
    return _config_from_meta(meta, coords, marks)


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_edges(graph, path, meta: dict | None = None) -> Path:
    """Edge list ``src,dst`` (undirected edges have src < dst)."""
    path = write_rows(path, ["src", "dst"], graph.edges.tolist())
    write_meta(sidecar_path(path), {"builder": graph.builder, "directed": graph.directed, "n": graph.n, **graph.meta, **(meta or {})})
    return path


def read_edges(path) -> np.ndarray:
    _, body = read_rows(path)
    return np.array([[int(a), int(b)] for a, b in body], dtype=np.int64).reshape(-1, 2)


def write_segments(segments, path) -> Path:
    return write_rows(path, ["x0", "y0", "x1", "y1"], segments.segments.tolist())


def read_segments(path) -> np.ndarray:
    _, body = read_rows(path)
    return np.array([[float(v) for v in r] for r in body]).reshape(-1, 4)
