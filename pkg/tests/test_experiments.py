import numpy as np
import pytest

from bsumkit.engine import Trace, TraceRecord
from bsumkit.experiments import (
    EXPERIMENTS,
    POWELL_PATTERNS,
    Checks,
    first_settled_iteration,
    lasso_instance,
    powell_cycle_visits,
    run_experiment,
)


def failed(checks):
    df = checks.frame()
    return df.loc[~df["pass"], "check"].tolist()


def test_checks_table():
    checks = Checks("demo")
    checks.add("value small", 1e-9, True)
    checks.add("value big", 3.0, False)
    checks.keep("run", Trace())
    df = checks.frame()
    assert df.columns.tolist() == ["scenario", "check", "value", "pass"]
    assert df["scenario"].unique().tolist() == ["demo"]
    assert failed(checks) == ["value big"]
    assert list(checks.traces) == ["demo_run"]


def test_powell_cycle_visits():
    assert powell_cycle_visits(POWELL_PATTERNS * 1.05) == set(range(6))
    assert powell_cycle_visits([np.zeros(3), [1.0, 1.0, 1.0]]) == set()


def test_first_settled_iteration():
    fs = [5.0, 4.0, 3.0, 3.0, 3.0 - 1e-7, 3.0 - 1e-7]
    trace = Trace(records=[TraceRecord(r, (0,), f, 0.0) for r, f in enumerate(fs, start=1)])
    assert first_settled_iteration(trace) == 5
    assert first_settled_iteration(trace, tol=1e-9) is None


def test_lasso_instance_is_reproducible():
    A1, b1, lam1 = lasso_instance(3, rows=20, cols=50, sparsity=5)
    A2, b2, lam2 = lasso_instance(3, rows=20, cols=50, sparsity=5)
    assert np.array_equal(A1, A2) and np.array_equal(b1, b2) and lam1 == lam2
    assert lam1 == pytest.approx(0.1 * np.abs(A1.T @ b1).max())


def test_unknown_experiment():
    with pytest.raises(ValueError, match="valid experiments"):
        run_experiment("fig9")


@pytest.mark.parametrize("name", ["bsumm_ex4", "psca_naive_vs_damped", "ssum_ls"])
def test_quick_scenarios_pass(name):
    checks = run_experiment(name)
    assert failed(checks) == []
    assert len(checks.traces) >= 1


def test_pathologies_quick():
    checks = run_experiment("pathologies", n_seeds=4)
    assert [c for c in failed(checks) if "randomized" not in c] == []
    names = checks.frame()["check"].tolist()
    assert "ex6 exact cyclic BSUM cycles through six patterns" in names


def test_wmmse_quick():
    checks = run_experiment("wmmse_smoke", n_seeds=2)
    assert [c for c in failed(checks) if "random K=3" not in c] == []


def test_lasso_rules_small_instance():
    checks = run_experiment("lasso_rules", rows=30, cols=60, n_blocks=4, max_iters=20000)
    df = checks.frame().set_index("check")
    for rule in ("cyclic", "essentially_cyclic", "gauss_southwell", "mbi", "randomized"):
        assert df.loc[f"{rule} monotone", "pass"]
    assert df.loc["lam >= |A'b|_inf gives exactly 0", "pass"]


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(EXPERIMENTS))
def test_full_scale_scenarios_pass(name):
    checks = run_experiment(name)
    assert failed(checks) == []
