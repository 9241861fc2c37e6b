import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jmsl.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_PARTIAL, EXIT_VALIDATION, main, score_names
from jmsl.cli.formats import (
    dataset_from_csv,
    dataset_to_csv,
    library_from_json,
    library_to_json,
    posterior_from_bytes,
    posterior_to_bytes,
)
from jmsl.core import Dataset, SubjectRecord
from jmsl.errors import SchemaError
from jmsl.jointmodel import JointModelSpec, MCMCConfig, fit_mcmc
from jmsl.simulate import CELLS, ScenarioSpec, simulate_dataset
from jmsl.superlearn import standard_library

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def datasets(draw):
    k = draw(st.integers(0, 2))
    subjects = []
    for sid in draw(st.lists(st.one_of(st.integers(-50, 10_000), st.text("abcxyz_", min_size=1, max_size=5)),
                             min_size=1, max_size=5, unique_by=str)):
        times = sorted(draw(st.sets(st.floats(0, 50, allow_nan=False), min_size=1, max_size=4)))
        values = draw(st.lists(finite, min_size=len(times), max_size=len(times)))
        covs = draw(st.lists(finite, min_size=k, max_size=k))
        T = draw(st.floats(1e-6, 100))
        subjects.append(SubjectRecord(sid, covs, times, values, T, draw(st.integers(0, 1))))
    return Dataset(tuple(subjects), tuple(f"w{j + 1}" for j in range(k)))


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_csv_round_trip(data):
    text = dataset_to_csv(data)
    assert dataset_from_csv(text) == data
    assert dataset_to_csv(dataset_from_csv(text)) == text


def test_csv_header_and_errors():
    rec = SubjectRecord(3, [0.5], [0.0, 1.5], [1.0, 2.0], 4.0, 1)
    text = dataset_to_csv(Dataset((rec,), ("w1",)))
    assert text.splitlines()[0] == "id,time,value,obs_time,event,w1"
    assert text.splitlines()[1] == "3,0.0,1.0,4.0,1,0.5"
    with pytest.raises(SchemaError, match="/header"):
        dataset_from_csv("id,time,value\n1,0,0\n")
    with pytest.raises(SchemaError, match="/row/3"):
        dataset_from_csv("id,time,value,obs_time,event\n1,0.0,1.0,4.0,1\n1,1.0,1.0,5.0,1\n")


def test_library_json_round_trip_and_pointers():
    lib = standard_library()
    again = library_from_json(library_to_json(lib))
    assert again == lib
    bad = [{"name": "a", "functional_form": "value"},
           {"name": "b", "functional_form": "slope", "spline": {"degree": "two", "knots": []}}]
    with pytest.raises(SchemaError) as err:
        library_from_json(json.dumps(bad))
    assert err.value.pointer == "/1/spline/degree"
    dup = [{"name": "a", "functional_form": "value"}, {"name": "a", "functional_form": "slope"}]
    with pytest.raises(SchemaError) as err:
        library_from_json(json.dumps(dup))
    assert err.value.pointer == "/1/name"
    spline_missing = [{"name": "a", "functional_form": "value"},
                      {"name": "b", "functional_form": "value", "trajectory": "spline"}]
    with pytest.raises(SchemaError) as err:
        library_from_json(json.dumps(spline_missing))
    assert err.value.pointer == "/1"
    with pytest.raises(SchemaError):
        library_from_json("[{")


def test_posterior_archive_round_trip():
    data, _ = simulate_dataset(ScenarioSpec.standard("I", 50), seed=0)
    cfg = MCMCConfig(iterations=300, burn_in=100, thin=1, seed=7)
    post = fit_mcmc(JointModelSpec(), data, cfg)
    blob = posterior_to_bytes(post, {"seed": 7})
    back, header = posterior_from_bytes(blob)
    assert header["version"] == 1 and header["provenance"] == {"seed": 7}
    for name in post.PARAMS:
        assert np.array_equal(getattr(back, name), getattr(post, name))
    assert back.meta["burn_in"] == 100 and back.meta["thin"] == 1 and back.meta["seed"] == 7
    assert back.model == post.model and back.subject_ids == post.subject_ids
    assert posterior_to_bytes(back, {"seed": 7}) == blob
    refit = fit_mcmc(JointModelSpec(), data, cfg)
    assert np.array_equal(refit.theta(100).beta, post.theta(100).beta)
    with pytest.raises(SchemaError):
        posterior_from_bytes(b"NOTANARCHIVE" + blob)


def test_score_names():
    assert score_names("both", "both") == ("ibs-ipcw", "ibs-model", "epce")
    assert score_names("ibs", "model") == ("ibs-model",)
    assert score_names("epce", "ipcw") == ("epce",)


def test_simulate_command(tmp_path):
    out = tmp_path / "sim"
    args = ["simulate", "--scenario", "I", "--n", "750", "--reps", "1", "--seed", "4", "--out", str(out)]
    assert main(args) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == [
        "manifest.json", "rep000_test.csv", "rep000_test_truth.json", "rep000_train.csv", "rep000_train_truth.json"]
    truth = json.loads((out / "rep000_train_truth.json").read_text())
    assert Counter(t["cell"] for t in truth) == {c: 125 for c in CELLS}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["tool_version"]
    assert abs(manifest["censoring"]["mean_realized_rate"] - 0.45) < 0.05
    assert main(args) == EXIT_VALIDATION
    first = (out / "rep000_train.csv").read_bytes()
    assert main(args + ["--force"]) == EXIT_OK
    assert (out / "rep000_train.csv").read_bytes() == first


def test_fit_command(tmp_path):
    data, _ = simulate_dataset(ScenarioSpec.standard("I", 50), seed=1)
    (tmp_path / "d.csv").write_text(dataset_to_csv(data))
    (tmp_path / "m.json").write_text('{"name": "lv", "functional_form": "value"}')
    run = lambda out: main(["fit", "--data", str(tmp_path / "d.csv"), "--model", str(tmp_path / "m.json"),
                            "--seed", "2", "--iterations", "300", "--burn-in", "100", "--thin", "1",
                            "--out", str(tmp_path / out)])
    assert run("a.bin") == EXIT_OK and run("b.bin") == EXIT_OK
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    (tmp_path / "m.json").write_text('{"name": "lv", "functional_form": "value", "baseline": {"degree": -1}}')
    assert run("c.bin") == EXIT_VALIDATION


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fit_numerical_failure_exit_code(tmp_path):
    # squared residuals overflow, so the longitudinal block cannot initialize
    recs = tuple(SubjectRecord(i, [], [0.0, 0.5], [1e200, -1e200], 1.0 + i, 1) for i in range(5))
    (tmp_path / "d.csv").write_text(dataset_to_csv(Dataset(recs)))
    (tmp_path / "m.json").write_text('{"name": "lv", "functional_form": "value"}')
    code = main(["fit", "--data", str(tmp_path / "d.csv"), "--model", str(tmp_path / "m.json"), "--seed", "0",
                 "--iterations", "20", "--burn-in", "10", "--out", str(tmp_path / "x.bin")])
    assert code == EXIT_NUMERICAL


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("sl")
    data, _ = simulate_dataset(ScenarioSpec.standard("I", 90), seed=2)
    test, _ = simulate_dataset(ScenarioSpec.standard("I", 90), seed=2, stream=1)
    (root / "train.csv").write_text(dataset_to_csv(data))
    (root / "test.csv").write_text(dataset_to_csv(test))
    lib = [{"name": "lv", "functional_form": "value"}, {"name": "ls", "functional_form": "slope"},
           {"name": "la", "functional_form": "area"}]
    (root / "lib.json").write_text(json.dumps(lib))
    fast = ["--iterations", "200", "--burn-in", "100", "--mc-draws", "20", "--seed", "3"]
    code = main(["superlearn", "--data", str(root / "train.csv"), "--library", str(root / "lib.json"),
                 "--landmarks", "6,10", "--dt", "4", "--folds", "2", "--censoring-weights", "both",
                 "--out", str(root / "panel.json"), *fast])
    return root, code, fast


def test_superlearn_panel(small_run):
    root, code, _ = small_run
    assert code == EXIT_OK
    doc = json.loads((root / "panel.json").read_text())
    assert doc["seed"] == 3 and "tool_version" in doc and doc["config"]["folds"] == 2
    entries = doc["panel"]["entries"]
    assert len(entries) == 2 * 3
    for e in entries:
        assert len(e["model_scores"]) + 1 == 4
        assert abs(sum(e["weights"].values()) - 1) < 1e-10
        assert e["esl_score"] <= min(e["model_scores"].values()) + 1e-6
    assert [r["model"] for r in doc["table"]] == ["lv", "ls", "la", "SL"]


def test_evaluate_command(small_run):
    root, _, _ = small_run
    code = main(["evaluate", "--panel", str(root / "panel.json"), "--train", str(root / "train.csv"),
                 "--test", str(root / "test.csv"), "--out", str(root / "eval.json")])
    assert code == EXIT_OK
    results = json.loads((root / "eval.json").read_text())["results"]
    assert len(results) == 6
    for r in results:
        assert r["oracle"] == min(r["model_scores"].values())


def test_superlearn_rejects_empty_interval(small_run):
    root, _, fast = small_run
    code = main(["superlearn", "--data", str(root / "train.csv"), "--library", str(root / "lib.json"),
                 "--landmarks", "30", "--dt", "2", "--out", str(root / "none.json"), *fast])
    assert code == EXIT_VALIDATION


def test_replicate_rows_and_determinism(tmp_path):
    args = ["replicate", "--scenario", "I", "--n", "120", "--reps", "2", "--landmarks", "6,10", "--dt", "4",
            "--iterations", "200", "--burn-in", "100", "--mc-draws", "20", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b"), "--workers", "2"]) == EXIT_OK
    rows = (tmp_path / "a" / "report.csv").read_text().splitlines()
    assert rows[0] == "replication,arm,metric,interval,value"
    assert len(rows) - 1 == 2 * 5 * 2 * 2
    for name in ("report.csv", "panels.json", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_replicate_partial_exit_code(tmp_path):
    args = ["replicate", "--scenario", "I", "--n", "30", "--reps", "2", "--landmarks", "30", "--dt", "2",
            "--iterations", "50", "--burn-in", "25", "--mc-draws", "5", "--seed", "5", "--out", str(tmp_path / "p")]
    assert main(args) == EXIT_PARTIAL
    summary = json.loads((tmp_path / "p" / "summary.json").read_text())
    assert len(summary["failures"]) == 2


def test_bad_arguments_exit_code(tmp_path):
    assert main(["simulate", "--scenario", "IV", "--seed", "1", "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert main(["fit", "--data", str(tmp_path / "missing.csv"), "--model", "m.json", "--seed", "1",
                 "--out", str(tmp_path / "o.bin")]) == EXIT_VALIDATION
