import pandas as pd
import pytest

from bsumkit.engine import CycleInfo, Trace, TraceRecord
from bsumkit.remarks import counted, experiment_summary, listing, run_summary
from bsumkit.results_db import DatabaseManager


@pytest.fixture
def trace():
    return Trace(
        records=[
            TraceRecord(1, (0,), 4.0, 1.0, None, None, None),
            TraceRecord(2, (1,), 2.5, 0.5, 0.1, None, None),
            TraceRecord(3, (0, 1), 2.0, 0.25, 0.01, None, None),
        ],
        terminal_status="converged",
        initial_f=6.0,
    )


def test_save_run_and_records(tmp_path, trace):
    db = DatabaseManager(str(tmp_path / "results.db"))
    db.save_run("lasso-1", trace, solver="lasso", seed=3, rule="cyclic")

    runs = db.read_sql("SELECT * FROM runs")
    assert runs["run_id"].tolist() == ["lasso-1"]
    assert runs["iterations"].iloc[0] == 3
    assert runs["final_f"].iloc[0] == 2.0
    assert runs["solver"].iloc[0] == "lasso"

    records = db.read_sql("SELECT * FROM trace_records ORDER BY r")
    assert records["blocks"].tolist() == ["0", "1", "0+1"]
    assert records["stat_gap"].isna().tolist() == [True, False, False]

    # saving the same run again replaces rather than duplicates
    db.save_run("lasso-1", trace, solver="lasso", seed=4)
    runs = db.read_sql("SELECT * FROM runs")
    assert len(runs) == 1
    assert runs["seed"].iloc[0] == 4
    assert len(db.read_sql("SELECT * FROM trace_records")) == 3


def test_new_db_clears_previous(tmp_path, trace):
    path = str(tmp_path / "results.db")
    DatabaseManager(path).save_run("a", trace)
    db = DatabaseManager(path, newdb=True)
    assert db.read_sql("SELECT * FROM runs").empty


def test_read_only_db_skips_writes(tmp_path, trace):
    db = DatabaseManager(str(tmp_path / "results.db"), dbReadOnly=True)
    db.save_run("a", trace)
    assert db.read_sql("SELECT * FROM runs").empty


def test_save_checks(tmp_path):
    checks = pd.DataFrame(
        {"scenario": ["bsumm_ex4", "bsumm_ex4"], "check": ["objective", "feasible"], "value": [2.0, 0.0], "pass": [True, False]}
    )
    db = DatabaseManager(str(tmp_path / "results.db"))
    db.save_checks(checks)
    stored = db.read_sql("SELECT * FROM experiment_checks ORDER BY \"check\"")
    assert stored["pass"].tolist() == [0, 1]


def test_run_summary(trace):
    md = run_summary(trace, "lasso", "lasso_small")
    assert md.startswith("The lasso run on *lasso_small* converged after three iterations")
    assert "from 6 to 2." in md

    trace.terminal_status = "detected_cycle"
    trace.cycle = CycleInfo(first_r=2, period=6, points=())
    trace.notes.append("exact cyclic updates")
    md = run_summary(trace, "pathology")
    assert "was stopped after revisiting an earlier iterate" in md
    assert "period six, first seen at the 2nd iteration" in md
    assert md.endswith("Note: exact cyclic updates.")


def test_run_summary_counts_large_runs():
    records = [TraceRecord(r, (0,), 1.0, 0.0) for r in range(1, 1501)]
    md = run_summary(Trace(records=records, terminal_status="max_iters"), "cp")
    assert "stopped at the iteration limit after 1,500 iterations" in md


def test_experiment_summary():
    checks = pd.DataFrame(
        {
            "scenario": ["ssum_ls", "ssum_ls", "cp_swamp"],
            "check": ["mean", "match", "fit"],
            "pass": [True, True, False],
        }
    )
    md = experiment_summary(checks)
    assert md == "Ran three checks across two scenarios (ssum_ls and cp_swamp); one failed: cp_swamp/fit."
    assert experiment_summary(checks.iloc[:2]).endswith("; all passed.")
    assert listing(["a"]) == "a"
    assert listing(["a", "b", "c"]) == "a, b and c"
    assert counted(1, "scenario") == "one scenario"
    assert counted(25, "check") == "25 checks"
