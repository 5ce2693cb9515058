import json

import numpy as np
import pytest
from click.testing import CliRunner
from hypothesis import given, settings
from hypothesis import strategies as st

from multivirus.cli import main
from multivirus.errors import PreconditionError, ScenarioError
from multivirus.runner import execute, plot_columns, run
from multivirus.scenario import build, bundled_scenarios, from_dict, load, parse, serialize


def small_doc(**overrides):
    doc = {
        "name": "small",
        "seed": 3,
        "n": 4,
        "viruses": [
            {"beta": {"graph": "ring", "rate": 1.0}, "delta": 0.5},
            {"beta": [[0, 0.2, 0, 0.2], [0.2, 0, 0.2, 0], [0, 0.2, 0, 0.2], [0.2, 0, 0.2, 0]], "delta": [1, 1, 1, 1]},
        ],
        "initial": {"random": {"max_total": 0.8}},
        "integrator": {"dt": 0.01, "t_end": 2.0, "record_every": 10},
    }
    doc.update(overrides)
    return doc


def write(tmp_path, doc, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


def test_bundled_scenarios_round_trip():
    names = bundled_scenarios()
    assert {"three_virus_eradication", "single_survivor", "parallel_equilibrium",
            "control_comparison"} <= set(names)
    for path in names.values():
        sc = load(path)
        assert parse(serialize(sc)) == sc


graph = st.sampled_from([
    {"graph": "complete", "rate": 0.5},
    {"graph": "ring", "rate": 0.3, "directed": True},
    {"graph": "random", "p": 0.4, "rate": 0.7, "seed": 1, "weights": [0.5, 1.0]},
])


@given(
    st.integers(1, 6), st.lists(graph, min_size=1, max_size=3), st.integers(0, 2**31),
    st.sampled_from(["rk4", "euler"]), st.booleans(),
)
@settings(max_examples=40, deadline=None)
def test_generated_scenarios_round_trip(n, graphs, seed, method, with_control):
    doc = {
        "name": "gen",
        "seed": seed,
        "n": n,
        "viruses": [{"beta": g, "delta": 0.4} for g in graphs],
        "initial": {"uniform": 0.1},
        "integrator": {"dt": 0.01, "t_end": 1.0, "method": method},
    }
    if with_control:
        doc["control"] = {"budget": [1.0] * len(graphs), "solver": "alg1", "interval": 0.5}
    sc = from_dict(doc)
    assert parse(serialize(sc)) == sc
    assert serialize(parse(serialize(sc))) == serialize(sc)


def test_m_mismatch_names_field_and_line():
    doc = small_doc(initial=[[0.1, 0.1, 0.1, 0.1]])
    text = json.dumps(doc, indent=2)
    with pytest.raises(ScenarioError) as info:
        parse(text)
    err = info.value
    assert err.field == "initial"
    assert err.line == next(i for i, l in enumerate(text.splitlines(), 1) if '"initial"' in l)
    assert "2x4" in str(err)


def test_budget_length_mismatch():
    with pytest.raises(ScenarioError) as info:
        from_dict(small_doc(control={"budget": [1.0, 2.0, 3.0]}))
    assert info.value.field == "control.budget"


def test_nested_field_path():
    doc = small_doc()
    doc["viruses"][1]["delta"] = [1, 1, 1]
    with pytest.raises(ScenarioError) as info:
        parse(json.dumps(doc, indent=2))
    assert info.value.field == "viruses[1].delta"
    assert info.value.line is not None


def test_json_syntax_error_reports_line():
    with pytest.raises(ScenarioError) as info:
        parse('{\n  "name": "x",\n  "n": 3,,\n}')
    assert info.value.line == 3


@pytest.mark.parametrize("patch, field", [
    ({"n": 0}, "n"),
    ({"bogus": 1}, "bogus"),
    ({"integrator": {"dt": -1, "t_end": 1}}, "integrator.dt"),
    ({"outputs": ["trajectory_csv", "movie"]}, "outputs[1]"),
    ({"perturbation": {"magnitude": 2.0, "interval": 1.0}}, "perturbation.magnitude"),
    ({"initial": {"uniform": 0.6}}, "initial.uniform"),
])
def test_validation_errors(patch, field):
    with pytest.raises(ScenarioError) as info:
        from_dict(small_doc(**patch))
    assert info.value.field == field


def test_mixed_static_and_mobility_rejected():
    doc = small_doc(mobility={"side": 2.0})
    doc["viruses"][0]["beta"] = {"graph": "mobility", "rate": 0.3}
    with pytest.raises(ScenarioError) as info:
        from_dict(doc)
    assert info.value.field == "viruses"


def test_build_is_seeded_and_overridable():
    doc = small_doc()
    doc["viruses"][0]["beta"] = {"graph": "random", "p": 0.5, "rate": 1.0}
    sc = from_dict(doc)
    a, b = build(sc), build(sc)
    assert a.spec == b.spec and a.initial == b.initial
    c = build(sc, seed=99)
    assert not np.array_equal(a.initial.p, c.initial.p)
    assert c.seed == 99


def test_generated_graphs():
    doc = small_doc()
    doc["viruses"] = [
        {"beta": {"graph": "complete", "rate": 2.0}, "delta": 1.0},
        {"beta": {"graph": "ring", "rate": 1.0, "directed": True}, "delta": 1.0},
    ]
    built = build(from_dict(doc))
    assert np.array_equal(built.spec.betas[0], 2.0 * (np.ones((4, 4)) - np.eye(4)))
    assert built.spec.betas[1].sum(axis=0).tolist() == [1.0] * 4
    assert built.spec.betas[1][1, 0] == 1.0 and built.spec.betas[1][0, 1] == 0.0


def test_plot_columns_examples():
    p = np.array([[0.0, 0.4, 0.2], [0.0, 0.0, 0.2], [0.0, 0.0, 0.2]])
    rgb, diam = plot_columns(p, d0=1.0, r0=5.0)
    assert np.array_equal(rgb[0], [0, 0, 0]) and diam[0] == 1.0
    assert np.allclose(rgb[1], [1, 0, 0]) and diam[1] == pytest.approx(3.0)
    assert np.allclose(rgb[2], [1 / 3] * 3) and diam[2] == pytest.approx(4.0)
    # virus 2 maps to blue, virus 3 to green
    rgb, _ = plot_columns(np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]]))
    assert np.allclose(rgb, [[0, 0, 1], [0, 1, 0]])


def test_plot_columns_needs_three_viruses_for_colour():
    with pytest.raises(PreconditionError, match="color=False"):
        plot_columns(np.zeros((2, 3)))
    rgb, diam = plot_columns(np.full((2, 3), 0.25), color=False)
    assert rgb is None and np.allclose(diam, 1.0 + 5.0 * 0.5)


def test_run_writes_outputs_with_schema(tmp_path):
    result = run(from_dict(small_doc()), tmp_path / "out")
    names = sorted(p.name for p in result.files)
    assert names == ["plot_data.csv", "spectral_trace.csv", "summary.json", "trajectory.csv"]
    header = (tmp_path / "out" / "trajectory.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["t", "p1_1", "p1_2"] and header[8] == "p2_4" and header[9:] == ["s1", "s2"]
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["classification"]["outcome"] == "SingleSurvivor"
    assert summary["classification"]["survivor"] == 1
    rows = (tmp_path / "out" / "trajectory.csv").read_text().splitlines()
    assert len(rows) == 1 + 21


def test_outputs_selection(tmp_path):
    result = run(from_dict(small_doc(outputs=["summary_json"])), tmp_path)
    assert [p.name for p in result.files] == ["summary.json"]


def test_reducible_graph_reported_not_fatal():
    doc = small_doc()
    doc["viruses"][0]["beta"] = {"graph": "ring", "rate": 1.0, "directed": True}
    doc["viruses"][1]["beta"] = [[0, 1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]
    res = execute(from_dict(doc))
    assert res.summary["classification"]["virus"] == 2
    assert "error" in res.summary["classification"]


def test_control_summary_and_columns(tmp_path):
    doc = small_doc(control={"budget": 1.0, "interval": 0.5, "compare": True})
    res = run(from_dict(doc), tmp_path)
    assert set(res.summary["runs"]) == {"none", "p1", "alg1"}
    comp = res.summary["control_comparison"]
    assert set(comp["final_total"]) == {"none", "p1", "alg1"}
    header = (tmp_path / "trajectory_p1.csv").read_text().splitlines()[0].split(",")
    assert "u1_1" in header and "u2_4" in header
    assert res.summary["runs"]["p1"]["allocation_events"] == 4


def test_cli_run_analyze_control(tmp_path):
    path = write(tmp_path, small_doc(control={"budget": 1.0, "interval": 1.0}))
    runner = CliRunner()
    out = runner.invoke(main, ["run", str(path), "--out", str(tmp_path / "a")])
    assert out.exit_code == 0, out.output
    assert (tmp_path / "a" / "trajectory.csv").exists()
    out = runner.invoke(main, ["analyze", str(path)])
    assert out.exit_code == 0
    assert json.loads(out.output)["classification"]["outcome"] == "SingleSurvivor"
    out = runner.invoke(main, ["control", str(path), "--solver", "alg1", "--out", str(tmp_path / "b")])
    assert out.exit_code == 0
    summary = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert list(summary["runs"]) == ["alg1"]


def test_cli_seed_override_changes_output(tmp_path):
    path = write(tmp_path, small_doc())
    runner = CliRunner()
    runner.invoke(main, ["run", str(path), "--out", str(tmp_path / "a")])
    runner.invoke(main, ["run", str(path), "--out", str(tmp_path / "b"), "--seed", "5"])
    runner.invoke(main, ["run", str(path), "--out", str(tmp_path / "c"), "--seed", "5"])
    a, b, c = ((tmp_path / d / "trajectory.csv").read_bytes() for d in "abc")
    assert a != b and b == c


def test_cli_validation_exit_code(tmp_path):
    path = write(tmp_path, small_doc(initial=[[0.1, 0.1, 0.1, 0.1]]))
    out = CliRunner().invoke(main, ["run", str(path)])
    assert out.exit_code == 1
    assert "initial" in out.output


def test_cli_control_without_section_is_validation_error(tmp_path):
    path = write(tmp_path, small_doc())
    out = CliRunner().invoke(main, ["control", str(path), "--solver", "p1"])
    assert out.exit_code == 1 and "control" in out.output


def test_cli_runtime_exit_code(tmp_path):
    doc = small_doc()
    doc["viruses"] = [{"beta": {"graph": "complete", "rate": 1e305}, "delta": 1.0}]
    doc["initial"] = {"uniform": 0.1}
    doc["integrator"] = {"dt": 1.0, "t_end": 3.0}
    out = CliRunner().invoke(main, ["run", str(write(tmp_path, doc))])
    assert out.exit_code == 2
    assert "IntegrationBlowupError" in out.output


def test_cli_missing_file(tmp_path):
    out = CliRunner().invoke(main, ["analyze", str(tmp_path / "nope.json")])
    assert out.exit_code == 1


def test_cli_lists_bundled():
    out = CliRunner().invoke(main, ["scenarios"])
    assert out.exit_code == 0 and "control_comparison" in out.output
