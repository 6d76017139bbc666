"""Config-driven experiment runners, their output files, and the CLI."""

import json
import math

import pytest

from dyngraph import cli
from dyngraph.experiments import (
    ConfigError,
    ExperimentResult,
    run,
    stream,
    write_csv,
    write_result,
)

CONST_ONE = {"form": "constant", "value": 1.0}


def bound_config(**extra):
    cfg = {"kind": "bound", "seed": 1, "n": [1000, 10000], "radius": 1,
           "horizon": 1.0, "kappa": CONST_ONE}
    cfg.update(extra)
    return cfg


def test_stream_is_keyed_and_reproducible():
    assert stream(5, 1, 2).random() == stream(5, 1, 2).random()
    assert stream(5, 1, 2).random() != stream(5, 1, 3).random()
    assert stream(5, 1, 2).random() != stream(6, 1, 2).random()
    assert stream(5).random() != stream(5, 0).random()


def test_config_validation():
    bad = [
        {},                                        # nothing at all
        {"kind": "mystery", "seed": 1},            # unknown kind
        bound_config(seed=None),
        bound_config(seed=-1),
        bound_config(seed="one"),
        bound_config(kappa={"value": 1.0}),        # no form
        bound_config(kappa={"form": "constant", "value": -2.0}),
        bound_config(kappa={"form": "matrix", "values": [[1.0, 2.0]]}),
        bound_config(weights=[0.5, 0.4]),          # not a distribution
        bound_config(weights=[1.0], space="unit_interval"),
        bound_config(space="circle"),
        bound_config(n=[0]),
        bound_config(radius=-1),
        bound_config(horizon=-1.0),
        bound_config(dynamics="both"),
        # unit-interval marks have no deterministic type counts
        bound_config(space="unit_interval",
                     kappa={"form": "strong", "gamma": 0.25}),
        {"kind": "converge", "seed": 1, "mode": "center", "n": [10],
         "radius": 1, "horizon": 1.0, "samples": 5, "kappa": CONST_ONE},
        {"kind": "contact", "seed": 1, "n": 10, "lambda": 1.0,
         "times": [], "replicas": 5, "kappa": CONST_ONE},
        {"kind": "contact", "seed": 1, "n": 10, "lambda": 1.0,
         "times": [1.0], "replicas": 5, "estimator": "half",
         "kappa": CONST_ONE},
    ]
    for cfg in bad:
        with pytest.raises(ConfigError):
            run(cfg)
    with pytest.raises(ConfigError):
        run(bound_config(), workers=0)
    err = pytest.raises(ConfigError, run, bound_config(radius=-1)).value
    assert err.path == "radius"


def test_csv_formatting(tmp_path):
    res = ExperimentResult("bound", ["a", "b", "c", "d"],
                           [[1, 0.1, None, True], [2, 1 / 3, "x", False]])
    path = tmp_path / "t.csv"
    write_csv(res, path)
    assert path.read_text() == ("a,b,c,d\n"
                                "1,0.1,,true\n"
                                "2,0.3333333333333333,x,false\n")


def test_bound_runner_values(tmp_path):
    res = run(bound_config())
    assert res.columns == ["n", "d", "T", "k", "lambda", "ez_bound",
                           "ez2_bound", "bound_explicit", "bound_simplified",
                           "bound_dynperc"]
    row = res.rows[1]
    assert row[:5] == [10000, 1, 1.0, 1, 3.0]
    assert row[5] == 6.0 and row[6] == 144.0
    assert row[7] == pytest.approx(0.0882)
    assert row[8] == pytest.approx(0.0918)
    assert row[9] == pytest.approx(0.0918)
    assert res.rows[0][7] == pytest.approx(0.882)

    csv_path, side_path = write_result(res, bound_config(),
                                       tmp_path / "bound.csv", 0.25, 1)
    side = json.loads(open(side_path).read())
    assert side["kind"] == "bound"
    assert side["config"]["seed"] == 1
    assert side["row_count"] == 2
    assert side["workers"] == 1 and side["wall_time_s"] == 0.25
    assert not side["resource_cap"]
    header = open(csv_path).readline().strip()
    assert header.split(",") == res.columns


def couple_config():
    return {"kind": "couple", "seed": 7, "n": [60, 120], "radius": [1],
            "horizon": 0.5, "replicas": 40, "block_size": 10,
            "kappa": {"form": "constant", "value": 1.5}}


def csv_bytes(cfg, workers, tmp_path, name):
    res = run(cfg, workers=workers)
    csv_path, _ = write_result(res, cfg, tmp_path / name, None, workers)
    with open(csv_path, "rb") as fh:
        return fh.read()


def test_couple_runner_and_worker_parity(tmp_path):
    res = run(couple_config())
    assert res.columns[:3] == ["n", "d", "T"]
    assert len(res.rows) == 2
    for row in res.rows:
        n, d, T, k, replicas, failures, rate, bound = row
        assert replicas == 40 and failures == round(rate * 40)
        assert 0.0 <= rate <= 1.0 and 0.0 < bound <= 1.0
    assert res.summary["cells"][0]["causes"].keys() <= {
        "root_mismatch", "offspring_mismatch", "collision_or_cycle",
        "rate_discrepancy_event"}
    one = csv_bytes(couple_config(), 1, tmp_path, "w1.csv")
    two = csv_bytes(couple_config(), 2, tmp_path, "w2.csv")
    assert one == two


def converge_config(**extra):
    cfg = {"kind": "converge", "seed": 9, "n": [50], "radius": 1,
           "horizon": 0.5, "samples": 60, "roots_per_trace": 20,
           "kappa": CONST_ONE}
    cfg.update(extra)
    return cfg


def test_converge_tv_runner_and_worker_parity(tmp_path):
    res = run(converge_config())
    assert len(res.rows) == 1
    n, d, T, grid, samples, tv, tv_se, tv_floor, tv_stderr, bound = \
        res.rows[0]
    assert (n, d, T, grid, samples) == (50, 1, 0.5, 0.5, 60)
    assert 0.0 <= tv <= 1.0 and tv_stderr >= tv_floor >= 0.0
    assert bound == 1.0  # the explicit bound clamps at this size
    assert res.summary["cells"][0]["distinct_tree_codes"] >= 2
    one = csv_bytes(converge_config(), 1, tmp_path, "c1.csv")
    two = csv_bytes(converge_config(), 2, tmp_path, "c2.csv")
    assert one == two


def test_two_root_runner_detects_the_positive_control():
    base = {"kind": "converge", "mode": "two_root", "seed": 11, "n": [80],
            "radius": 1, "horizon": 0.5, "pairs": 60,
            "pairs_per_trace": 20, "bootstrap": 8, "kappa": CONST_ONE}
    looped = run(dict(base, force_same_root=True))
    split = run(base)
    assert looped.columns == ["n", "d", "T", "grid_step", "pairs",
                              "statistic", "stat_se", "null_floor"]
    assert looped.summary["force_same_root"] is True
    stat_same = looped.rows[0][5]
    stat_diff = split.rows[0][5]
    assert looped.rows[0][4] == 60
    assert stat_same > stat_diff
    assert split.rows[0][6] >= 0.0 and split.rows[0][7] > 0.0


def test_contact_runner_pure_death():
    cfg = {"kind": "contact", "seed": 13, "n": 40, "lambda": 0.0,
           "times": [1.0, 0.5], "replicas": 30, "kappa": CONST_ONE}
    res = run(cfg)
    assert [r[0] for r in res.rows] == [0.5, 1.0]
    for t, estimate, stderr, n, lam, kernel, dynamics in res.rows:
        assert (n, lam, kernel, dynamics) == (40, 0.0, "constant", "edge")
        assert abs(estimate - math.exp(-t)) < 4 * max(stderr, 0.02)


def test_sample_runners_smoke():
    tree = run({"kind": "sample-tree", "seed": 3, "depth": 1,
                "horizon": 1.0, "replicas": 2,
                "kappa": {"form": "constant", "value": 2.0}})
    assert len(tree.summary["cemetery_times"]) == 2
    assert {row[0] for row in tree.rows} == {0, 1}

    graph = run({"kind": "sample-graph", "seed": 4, "n": 25,
                 "horizon": 1.0, "kappa": {"form": "constant",
                                           "value": 2.0}})
    assert len(graph.summary["marks"]) == 25
    pairs = set()
    for u, v, s, e in graph.rows:
        assert 0 <= u < v < 25
        assert 0.0 <= s < e <= 1.0
        pairs.add((u, v))
    assert graph.summary["pairs_ever_open"] == len(pairs)

    ball = run({"kind": "ball", "seed": 5, "n": 30, "radius": 1,
                "horizon": 0.5, "kappa": {"form": "constant", "value": 2.0}})
    assert ball.summary["radius"] == 1 and ball.summary["root"] == 0
    assert "" in ball.summary["vertex_map"]  # the root word

    gc = run({"kind": "graphical-check", "seed": 6, "n": [300],
              "mc_samples": 2000, "kappa": {"form": "constant",
                                            "value": 2.0}})
    n, lhs, rhs, rhs_se, lhs_kb, rhs_kb, rhs_kb_se, disc = gc.rows[0]
    assert n == 300 and disc == 0.0
    # finite marks: exact limits, and the pair sum only misses the diagonal
    assert rhs_se == 0.0 and rhs_kb_se == 0.0
    assert lhs == pytest.approx(rhs * (1 - 1 / n), rel=1e-12)
    assert lhs_kb == pytest.approx(rhs_kb * (1 - 1 / n), rel=1e-12)


def write_config(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_cli_happy_path(tmp_path):
    cfg = write_config(tmp_path, "bound.json", bound_config())
    out = tmp_path / "out.csv"
    assert cli.main(["bound", "--config", cfg, "--out", str(out)]) == 0
    assert out.exists()
    side = json.loads((tmp_path / "out.json").read_text())
    assert side["kind"] == "bound" and side["wall_time_s"] is not None

    assert cli.main(["bound", "--config", cfg, "--out", str(out),
                     "--seed", "42"]) == 0
    side = json.loads((tmp_path / "out.json").read_text())
    assert side["config"]["seed"] == 42


def test_cli_config_errors(tmp_path):
    out = str(tmp_path / "x.csv")
    assert cli.main(["bound", "--config", str(tmp_path / "missing.json"),
                     "--out", out]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{nope")
    assert cli.main(["bound", "--config", str(broken), "--out", out]) == 2
    toplevel = write_config(tmp_path, "arr.json", [1, 2])
    assert cli.main(["bound", "--config", toplevel, "--out", out]) == 2
    mismatched = write_config(tmp_path, "mk.json", couple_config())
    assert cli.main(["bound", "--config", mismatched, "--out", out]) == 2
    incomplete = write_config(tmp_path, "inc.json",
                              {"kind": "bound", "seed": 1,
                               "kappa": CONST_ONE})
    assert cli.main(["bound", "--config", incomplete, "--out", out]) == 2


def test_cli_resource_cap(tmp_path):
    cfg = write_config(tmp_path, "dense_cfg.json", {
        "kind": "sample-graph", "seed": 1, "n": 3000, "horizon": 1.0,
        "kappa": {"form": "constant", "value": 900.0}})
    out = tmp_path / "dense.csv"
    assert cli.main(["sample-graph", "--config", cfg,
                     "--out", str(out)]) == 3
    sidecar = json.loads((tmp_path / "dense.json").read_text())
    assert sidecar["resource_cap"] is True
    assert out.read_text().startswith("u,v,open_start,open_end")


def test_cli_ball_overrides(tmp_path):
    cfg = write_config(tmp_path, "ball_cfg.json", {
        "kind": "ball", "seed": 2, "n": 30, "radius": 1, "horizon": 0.5,
        "kappa": {"form": "constant", "value": 2.0}})
    out = tmp_path / "ball.csv"
    assert cli.main(["ball", "--config", cfg, "--out", str(out),
                     "--root", "5", "--radius", "2"]) == 0
    side = json.loads((tmp_path / "ball.json").read_text())
    assert side["summary"]["root"] == 5
    assert side["summary"]["radius"] == 2
