import numpy as np
import pytest

from percolab import ConfigError, InvalidInputError
from percolab import io
from percolab.cli import main
from percolab.geom import PointConfiguration, Window
from percolab.graphs import build_bknn, build_gilbert
from percolab.lab import PRESETS, emit_plotdata, load_preset, parse_config, preset_text, run_experiment

from conftest import line_config

MINIMAL = """
[process]
kind = poisson
intensity = 1.0
lower = 0, 0
upper = 50, 50

[graph]
builders = bknn
sweep = k
values = 2

[run]
seed = 1
replicates = 5
"""

SMALL = """
[process]
kind = poisson
intensity = 1.0
lower = 0, 0
upper = 15, 15

[marks]
kind = constant
value = 2.0

[graph]
builders = bknn, sinr, uknn
sweep = k
values = 1, 2, 3

tau = 1.0
noise = 0.001

[analysis]
subgraph_checks = sinr:bknn
dump_graphs = true

[run]
seed = 5
replicates = 3
"""


def test_minimal_config():
    cfg = parse_config(MINIMAL)
    assert cfg.process.kind == "poisson" and cfg.process.intensity == 1.0
    assert cfg.window == Window((0, 0), (50, 50))
    assert [b.name for b in cfg.builders] == ["bknn"]
    assert cfg.values == [2] and cfg.replicates == 5


def test_k_zero_rejected_with_line():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL.replace("values = 2", "values = 0"))
    assert "k must be >= 1" in str(exc.value)
    assert "line 11" in str(exc.value)


def test_negative_gamma_rejected():
    text = MINIMAL.replace("builders = bknn", "builders = sinr\ngamma = -0.5")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert "gamma must be >= 0" in str(exc.value)


def test_all_errors_reported():
    text = MINIMAL.replace("intensity = 1.0", "intensity = 1.0\ncolour = red").replace("replicates = 5", "replicates = 0")
    text = text.replace("seed = 1\n", "")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    problems = exc.value.problems
    assert any("unknown key 'colour'" in p and "line 5" in p for p in problems)
    assert any("missing required key 'seed'" in p for p in problems)
    assert any("replicates must be >= 1" in p for p in problems)


def test_syntax_errors():
    with pytest.raises(ConfigError) as exc:
        parse_config("seed = 1\n[nope]\nnot a pair\n[run]\nseed = x\n")
    text = str(exc.value)
    for frag in ("line 1: key outside", "unknown section [nope]", "line 3: expected", "line 5: bad value"):
        assert frag in text


@pytest.mark.parametrize("name", PRESETS)
def test_presets_parse(name):
    cfg = load_preset(name)
    assert cfg.name == name
    assert preset_text(name).startswith("#")
    with pytest.raises(InvalidInputError):
        preset_text("figure-z")


def test_run_records_and_determinism(tmp_path):
    cfg = parse_config(SMALL)
    res = run_experiment(cfg, workers=1, out_dir=tmp_path / "a")
    assert len(res.records) == 3 * 3 * 3
    for rec in res.records:
        assert rec.max_degree <= rec.degree_bound
    assert all(ok for *_, ok in res.checks)
    res2 = run_experiment(cfg, workers=2, out_dir=tmp_path / "b")
    names = sorted(p.relative_to(tmp_path / "a") for p in res.files)
    assert names == sorted(p.relative_to(tmp_path / "b") for p in res2.files)
    for rel in names:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    header, rows = io.read_rows(tmp_path / "a" / "curve_bknn.csv")
    assert header == ["param", "replicates", "crossing_freq", "largest_frac_mean", "largest_frac_stderr",
                      "max_degree_seen"]
    assert len(rows) == 3


def test_runner_seeds_are_child_seeds(tmp_path):
    from percolab.procgen import child_seed

    cfg = parse_config(MINIMAL.replace("upper = 50, 50", "upper = 10, 10"))
    res = run_experiment(cfg, out_dir=tmp_path)
    assert [r.seed for r in res.records] == [child_seed(1, r) for r in range(5)]


def test_radii_mode(tmp_path):
    cfg = load_preset("radii-beta-sweep")
    from dataclasses import replace

    cfg = replace(cfg, samples=5, burn_in=5, replicates=1)
    res = run_experiment(cfg, out_dir=tmp_path)
    assert [r.beta for r in res.records] == [0.0, 1.0, 4.0]
    header, rows = io.read_rows(tmp_path / "trace_beta1.0.csv")
    assert header == ["sweep", "total_energy", "mean_radius", "max_radius"] and len(rows) == 5
    header, rows = io.read_rows(tmp_path / "radii_beta1.0.csv")
    assert header == ["id", "radius"] and len(rows) == res.records[0].n_points


def test_emit_plotdata_examples(tmp_path):
    c = line_config([0, 1, 3, 7])
    plane = PointConfiguration(Window((-1, -1), (10, 1)), np.c_[c.coords, np.zeros(4)])
    pts, edges = emit_plotdata(build_bknn(plane, 2), tmp_path, "tri")
    header, rows = io.read_rows(edges)
    assert header == ["x0", "y0", "x1", "y1"] and len(rows) == 3
    assert io.read_plot_points(pts) == plane
    pts, edges = emit_plotdata(build_gilbert(plane, 0.1), tmp_path, "empty")
    assert len(io.read_rows(pts)[1]) == 4 and io.read_rows(edges)[1] == []
    with pytest.raises(InvalidInputError):
        emit_plotdata(build_bknn(c, 2), tmp_path, "line")


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    good = tmp_path / "good.ini"
    good.write_text(MINIMAL.replace("upper = 50, 50", "upper = 10, 10"))
    bad = tmp_path / "bad.ini"
    bad.write_text(MINIMAL.replace("values = 2", "values = 0"))
    assert main(["validate", str(good)]) == 0
    assert main(["validate", str(bad)]) == 1
    assert "k must be >= 1" in capsys.readouterr().err
    assert main(["validate", str(tmp_path / "missing.ini")]) == 1
    monkeypatch.setenv("PERCOLAB_WORKERS", "2")
    assert main(["run", str(good), "--out-dir", str(tmp_path / "out"), "--seed", "9"]) == 0
    assert (tmp_path / "out" / "records.csv").exists()
    assert main(["dump-graph", str(good), "--replicate", "1", "--out-dir", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "graphs" / "bknn_k2_rep1_edges.csv").exists()
    assert main(["preset", "figure-b", "--show"]) == 0


def test_cli_runtime_failure(tmp_path):
    # kth_nn with k beyond the point count fails during the run, not at validation
    cfg = tmp_path / "fail.ini"
    cfg.write_text(MINIMAL.replace("builders = bknn", "builders = kth_nn").replace("upper = 50, 50", "upper = 1, 1")
                   .replace("values = 2", "values = 50"))
    assert main(["validate", str(cfg)]) == 0
    assert main(["run", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2
