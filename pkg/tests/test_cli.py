import csv
import json

import numpy as np
import pytest
import yaml

from hypex.cli import main
from hypex.modelfile import load_model, models_equal

DEPENDENT = """\
format: hypex-model/1
axis_order: [X, Y1, Y2]
alphabets:
  X: {size: 2}
  Y1: {size: 2}
  Y2: {size: 2, labels: [lo, hi]}
M: 2
i1: 2
i2: 2
hypotheses:
  - name: nominal
    pmf: [[[0.3, 0.1], [0.05, 0.05]], [[0.05, 0.1], [0.1, 0.25]]]
  - name: alternative
    pmf: [0.12, 0.13, 0.11, 0.14, 0.13, 0.12, 0.12, 0.13]
"""

# X correlates Y1 with Y2 in opposite directions, so P_{Y1 Y2} is uniform (a product)
INDEPENDENT_SIDES = """\
format: hypex-model/1
axis_order: [X, Y1, Y2]
alphabets:
  X: {size: 2}
  Y1: {size: 2}
  Y2: {size: 2}
M: 2
i1: 2
i2: 2
hypotheses:
  - name: nominal
    pmf: [[[0.175, 0.075], [0.075, 0.175]], [[0.075, 0.175], [0.175, 0.075]]]
  - name: product
    preset: testing_against_independence
    of: 1
"""

THREE = """\
format: hypex-model/1
axis_order: [X, Y1, Y2]
alphabets:
  X: {size: 2}
  Y1: {size: 2}
  Y2: {size: 2}
M: 3
i1: 1
i2: 2
hypotheses:
  - name: low
    pmf: [[[0.015, 0.045], [0.035, 0.105]], [[0.06, 0.18], [0.14, 0.42]]]
  - name: mid
    pmf: [[[0.165, 0.135], [0.11, 0.09]], [[0.165, 0.135], [0.11, 0.09]]]
  - name: high
    pmf: [[[0.544, 0.096], [0.136, 0.024]], [[0.136, 0.024], [0.034, 0.006]]]
"""

CONSTANT_AUX = """\
format: hypex-aux/1
u_channel: constant
v_channel: constant
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.fixture
def dependent(tmp_path):
    return write(tmp_path, "dependent.yaml", DEPENDENT)


@pytest.fixture
def tii(tmp_path):
    return write(tmp_path, "tii.yaml", INDEPENDENT_SIDES)


@pytest.fixture
def three(tmp_path):
    return write(tmp_path, "three.yaml", THREE)


def test_fixture_sides_are_independent(tii):
    P = load_model(tii).pmf(1).mass
    y1y2 = P.sum(axis=0)
    assert np.allclose(y1y2, np.outer(y1y2.sum(axis=1), y1y2.sum(axis=0)))


def test_validate_reports_applicability(dependent, capsys):
    assert main(["validate", dependent]) == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert first.startswith("ok; Theorem 3 applicable; Theorem 2 not applicable (Y1⊥Y2 fails)")
    assert "Proposition 2 not applicable" in first


def test_validate_concurrent_model(three, capsys):
    assert main(["validate", three]) == 0
    out = capsys.readouterr().out
    assert "Proposition 2 applicable" in out
    assert "Theorem 3 not applicable" in out


def test_validate_theorem2_applicable(tii, capsys):
    assert main(["validate", tii]) == 0
    assert "Theorem 2 applicable" in capsys.readouterr().out


def test_unnormalized_row_names_the_field(tmp_path, capsys):
    bad = DEPENDENT.replace("[0.3, 0.1], [0.05, 0.05]", "[0.5, 0.1], [0.05, 0.05]")
    path = write(tmp_path, "bad.yaml", bad)
    assert main(["validate", path]) == 2
    err = capsys.readouterr().err
    assert "NotNormalized" in err
    assert "hypotheses[0].pmf" in err
    assert "line 12" in err


def test_single_hypothesis_is_invariant_violation(tmp_path, capsys):
    text = DEPENDENT.replace("M: 2", "M: 1")
    path = write(tmp_path, "m1.yaml", text)
    assert main(["validate", path]) == 2
    assert "InvariantViolation" in capsys.readouterr().err


@pytest.mark.parametrize("text", [
    "format: hypex-model/1\nalphabets: [unclosed\n",
    DEPENDENT.replace("format: hypex-model/1", "format: something-else"),
    DEPENDENT.replace("M: 2", "M: two"),
    DEPENDENT.replace("pmf: [0.12", "pmf: [oops"),
])
def test_parse_errors_exit_4(tmp_path, text, capsys):
    path = write(tmp_path, "broken.yaml", text)
    assert main(["validate", path]) == 4
    assert "ParseError" in capsys.readouterr().err


def test_region_theorem3_table(dependent, capsys):
    assert main(["region", dependent, "--theorem", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[1].startswith("theta1* = ") and lines[2].startswith("theta2* = ")
    assert len(lines) == 3


def test_region_not_applicable_exits_2(dependent, capsys):
    assert main(["region", dependent, "--theorem", "2", "--R1", "0.3"]) == 2
    assert "TheoremNotApplicable" in capsys.readouterr().err


def test_region_theorem2_csv(tii, tmp_path):
    out = str(tmp_path / "frontier.csv")
    assert main(["region", tii, "--theorem", "2", "--R1", "0.3", "--u-card", "3", "--points", "17",
                 "--grid", "6", "--starts", "8", "--out", out]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    # near-duplicate frontier points are dropped, so a few of the 17 weights may merge
    assert 12 <= len(rows) <= 17
    assert [int(r["point_index"]) for r in rows] == list(range(len(rows)))
    t1 = [float(r["theta1_nats"]) for r in rows]
    t2 = [float(r["theta2_nats"]) for r in rows]
    assert t1 == sorted(t1) and t2 == sorted(t2, reverse=True)
    for r in rows:
        assert r["schema_version"] == "hypex-region/1"
        assert r["tool_version"] and r["seed"] == "0"
        assert json.loads(r["solver"])["R1"] == 0.3
        assert repr(float(r["theta1_nats"])) == r["theta1_nats"]


def test_region_theorem1_constant_aux_matches_theorem3(dependent, tmp_path):
    aux = write(tmp_path, "aux.yaml", CONSTANT_AUX)
    a, b = str(tmp_path / "t1.json"), str(tmp_path / "t3.json")
    assert main(["region", dependent, "--theorem", "1", "--aux", aux, "--out", a]) == 0
    assert main(["region", dependent, "--theorem", "3", "--out", b]) == 0
    p1 = json.load(open(a))["points"][0]
    p3 = json.load(open(b))["points"][0]
    assert abs(p1["theta1_nats"] - p3["theta1_nats"]) <= 1e-6
    assert abs(p1["theta2_nats"] - p3["theta2_nats"]) <= 1e-6


def test_region_bits_scaling(dependent, capsys):
    main(["region", dependent, "--theorem", "prop1"])
    nats = float(capsys.readouterr().out.splitlines()[1].split("=")[1])
    main(["region", dependent, "--theorem", "prop1", "--bits"])
    bits = float(capsys.readouterr().out.splitlines()[1].split("=")[1])
    assert bits == pytest.approx(nats / np.log(2), rel=1e-8)


def test_simulate_is_byte_identical(dependent, tmp_path):
    args = ["simulate", dependent, "--scheme", "zero-coop", "--n", "50,100,200", "--trials", "20000", "--seed", "7"]
    a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    assert main(args + ["--out", a]) == 0
    assert main(args + ["--out", b]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()


def test_simulate_concurrent_table_has_six_rows(three, capsys):
    assert main(["simulate", three, "--scheme", "concurrent", "--n", "40", "--trials", "2000",
                 "--mu", "0.08,0.09,0.1"]) == 0
    out = capsys.readouterr().out.splitlines()
    rows = [ln for ln in out if ln.strip().endswith("]") and ("alpha" in ln or "beta" in ln)]
    assert len(rows) == 6
    assert sum("alpha" in r for r in rows) == 4


def test_simulate_json_flag(dependent, capsys):
    assert main(["simulate", dependent, "--scheme", "zero-coop", "--n", "20", "--trials", "500", "--json"]) == 0
    out = capsys.readouterr().out
    doc = json.loads(out[out.index("{"):])
    assert doc["schema_version"] == "hypex-simulation/1"
    assert doc["report"]["records"][0]["n"] == 20


def test_simulate_budget_exit_3(tii, tmp_path, capsys):
    aux = write(tmp_path, "aux.yaml", "format: hypex-aux/1\nu_channel: identity\nv_channel: constant\n")
    assert main(["simulate", tii, "--scheme", "positive-rate", "--aux", aux, "--n", "80", "--trials", "10",
                 "--R1", "1.0", "--R2", "0.1"]) == 3
    assert "BudgetExceeded" in capsys.readouterr().err


def test_simulate_bad_config_exit_2(dependent, capsys):
    assert main(["simulate", dependent, "--scheme", "zero-coop", "--trials", "0"]) == 2
    assert "ConfigInvalid" in capsys.readouterr().err


def test_compare_reports_gap(dependent, tmp_path, capsys):
    out = str(tmp_path / "cmp.json")
    assert main(["compare", dependent, "--scheme", "zero-coop", "--n", "50,100,200,400", "--trials", "5000",
                 "--delta", "0.005", "--estimator", "tilted", "--seed", "3", "--out", out]) == 0
    text = capsys.readouterr().out
    assert "theory" in text and "empirical" in text
    doc = json.load(open(out))
    rows = doc["comparison"]
    assert [r["detector"] for r in rows] == [1, 2]
    for r in rows:
        assert r["gap"] == pytest.approx(r["empirical"] - r["theory"])
        assert r["exceeds_theory"] is False


def test_export_round_trip(dependent, tmp_path):
    out = str(tmp_path / "exported.yaml")
    assert main(["export", dependent, "--out", out]) == 0
    assert models_equal(load_model(dependent), load_model(out))
    again = str(tmp_path / "again.yaml")
    assert main(["export", out, "--out", again]) == 0
    assert models_equal(load_model(out), load_model(again))


def test_export_json(tii, tmp_path):
    out = str(tmp_path / "model.json")
    assert main(["export", tii, "--format", "json", "--out", out]) == 0
    doc = json.load(open(out))
    assert doc["M"] == 2 and len(doc["hypotheses"]) == 2
    assert np.allclose(doc["hypotheses"][1]["pmf"], load_model(tii).pmf(2).mass)


def test_every_output_file_has_provenance(dependent, three, tmp_path):
    outs = {
        "region.json": ["region", dependent, "--theorem", "3"],
        "sim.json": ["simulate", dependent, "--scheme", "zero-coop", "--n", "20", "--trials", "200"],
        "cmp.json": ["compare", three, "--scheme", "concurrent", "--n", "20,40,80", "--trials", "200", "--mu", "0.08,0.09,0.1"],
        "model.json": ["export", dependent, "--format", "json"],
        "model.yaml": ["export", dependent],
    }
    for name, args in outs.items():
        path = str(tmp_path / name)
        assert main(args + ["--out", path]) == 0
        with open(path) as fh:
            doc = yaml.safe_load(fh) if name.endswith(".yaml") else json.load(fh)
        prov = doc["provenance"]
        for key in ("tool", "tool_version", "seed", "solver", "model_sha256"):
            assert key in prov, (name, key)
    region_csv = str(tmp_path / "region.csv")
    assert main(["region", dependent, "--theorem", "3", "--out", region_csv]) == 0
    header = open(region_csv).readline().strip().split(",")
    assert {"tool_version", "seed", "solver"} <= set(header)


def test_workers_env_default(dependent, tmp_path, monkeypatch):
    monkeypatch.setenv("HYPEX_WORKERS", "2")
    out = str(tmp_path / "w.json")
    assert main(["simulate", dependent, "--scheme", "zero-coop", "--n", "20", "--trials", "100", "--out", out]) == 0
    assert json.load(open(out))["report"]["config"]["workers"] == 2


def test_missing_file_exits_4(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nothing.yaml")]) == 4
    assert "cannot read" in capsys.readouterr().err


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["region"])
    assert exc.value.code == 2
