import json

import pytest

from crosslight.cli import main
from crosslight.config import parse_config, shipped_scenarios
from crosslight.harness import STEP_COLUMNS, compute_metrics, run_scenario
from crosslight.serialize import (
    dumps_report,
    emit_trace,
    metrics_from_report,
    read_report,
    read_toml,
    read_trace,
)

FIG1D = str(shipped_scenarios()["fig1d"])
FIG3 = str(shipped_scenarios()["fig3"])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", "-c", FIG1D, "-o", str(out)]) == 0
    return out


def test_run_writes_outputs(run_dir):
    assert (run_dir / "trace.csv").read_text().splitlines()[0] == ",".join(STEP_COLUMNS)
    doc = read_report(run_dir / "report.json")
    assert doc["kind"] == "run" and doc["name"] == "fig1d" and doc["seed"] == 1


def test_trace_round_trip_is_lossless(run_dir, tmp_path):
    tr = read_trace(run_dir / "trace.csv")
    direct = run_scenario(parse_config(FIG1D, env={})).trace
    for c in STEP_COLUMNS:
        assert tr[c].tobytes() == direct[c].tobytes(), c
    again = emit_trace(tr, tmp_path / "again.csv")
    assert again.read_bytes() == (run_dir / "trace.csv").read_bytes()


def test_report_round_trip(run_dir):
    text = (run_dir / "report.json").read_text()
    doc = read_report(run_dir / "report.json")
    assert dumps_report({k: v for k, v in doc.items() if k != "schema_version"}) == text


def test_metrics_recomputed_from_csv_match(run_dir):
    cfg = parse_config(FIG1D, env={})
    stored = metrics_from_report(read_report(run_dir / "report.json"))
    assert compute_metrics(read_trace(run_dir / "trace.csv"), cfg) == stored


def test_rerun_is_byte_identical(run_dir, tmp_path):
    assert main(["run", "-c", FIG1D, "-o", str(tmp_path)]) == 0
    for name in ("trace.csv", "report.json"):
        assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes()


def test_seed_option(tmp_path):
    assert main(["run", "-c", FIG1D, "--seed", "9", "-o", str(tmp_path)]) == 0
    assert read_report(tmp_path / "report.json")["seed"] == 9


def test_validate(capsys):
    assert main(["validate", "-c", FIG1D]) == 0
    assert "ok" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["validate", "-c", FIG1D, "--override", "pairs.0.k=inf"]) == 2
    assert "pairs.0.k" in capsys.readouterr().err
    assert main(["validate", "-c", str(tmp_path / "missing.toml")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_fault_exit_code(tmp_path):
    code = main(["run", "-c", FIG1D, "--override", "pairs.0.k=1e308", "-o", str(tmp_path)])
    assert code == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sweep_report_and_partial_failure(tmp_path):
    ok = tmp_path / "ok"
    args = ["sweep", "-c", FIG1D, "--grid", "attack.enabled=true,false", "--seeds", "2", "-o", str(ok)]
    assert main(args) == 0
    doc = read_report(ok / "report.json")
    assert [it["seed"] for it in doc["items"]] == [1, 2, 1, 2]
    assert [a["params"] for a in doc["aggregates"]] == [{"attack.enabled": True}, {"attack.enabled": False}]
    assert all(a["runs"] == 2 and a["failed"] == 0 for a in doc["aggregates"])

    bad = tmp_path / "bad"
    args = ["sweep", "-c", FIG1D, "--grid", "pairs.0.k=0.008,1e308", "-o", str(bad)]
    assert main(args) == 4
    statuses = [it["status"] for it in read_report(bad / "report.json")["items"]]
    assert statuses == ["ok", "error"]


def test_sweep_bad_grid(tmp_path):
    assert main(["sweep", "-c", FIG1D, "--grid", "noequals", "-o", str(tmp_path)]) == 2


def test_train_threshold(tmp_path):
    out = tmp_path / "thr.toml"
    assert main(["train-threshold", "-c", FIG3, "-o", str(out)]) == 0
    det = read_toml(out)["detector"]
    assert len(det["threshold"]) == 2 and det["kappa"] == 3.0 and det["train_cycles"] == 20
    assert all(t < 0 for t in det["threshold"])


def test_fit_params_feeds_back_through_params(run_dir, tmp_path):
    # the trace is noise-free, so the fit recovers the configured values
    fitted = tmp_path / "fit.toml"
    assert main(["fit-params", "--trace", str(run_dir / "trace.csv"), "-o", str(fitted)]) == 0
    recs = read_toml(fitted)["pairs"]
    assert recs[0]["k"] == pytest.approx(0.008, abs=1e-9)
    assert recs[0]["beta"] == pytest.approx(0.8, abs=1e-9)
    out = tmp_path / "run"
    assert main(["run", "-c", FIG1D, "--params", str(fitted), "-o", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["metrics"]["peak_queue"] > 0
    cfg = parse_config(FIG1D, params=read_toml(fitted), env={})
    assert cfg.pairs[0].k == recs[0]["k"]


def test_fit_params_degenerate_trace(tmp_path):
    path = tmp_path / "flat.csv"
    row = ",".join("0.5" if c.startswith("o_true") else "1.0" for c in STEP_COLUMNS)
    path.write_text(",".join(STEP_COLUMNS) + "\n" + "\n".join([row] * 20) + "\n")
    assert main(["fit-params", "--trace", str(path), "-o", str(tmp_path / "x.toml")]) == 3
