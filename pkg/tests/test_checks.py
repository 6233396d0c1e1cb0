import pytest

from nestedavg import solvers
from nestedavg.checks import SCOPES, CheckReport, run_checks


def wrong_sign(z, product, tau):
    return (1 - tau) * z - tau * product


@pytest.mark.parametrize("scope", [s for s in SCOPES if s != "oracle"])
def test_scope_passes(scope):
    report = run_checks(scope, seed=0)
    assert report.results, scope
    assert report.ok, report.to_text()
    assert {r.scope for r in report.results} == {scope}


@pytest.mark.slow
def test_all_scopes_pass():
    report = run_checks("all", seed=0)
    assert report.ok, report.to_text()
    assert {r.scope for r in report.results} == set(SCOPES)


@pytest.mark.slow
def test_wrong_sign_mutation_is_caught(monkeypatch):
    monkeypatch.setattr(solvers, "_average_gradient", wrong_sign)
    report = run_checks("all", seed=0)
    assert not report.ok
    assert {r.scope for r in report.failures} == {"solvers"}


def test_wrong_sign_mutation_fails_solver_scope(monkeypatch):
    monkeypatch.setattr(solvers, "_average_gradient", wrong_sign)
    names = {r.name for r in run_checks("solvers").failures}
    assert "alg1/unit_step_gradient" in names and "alg2/unit_step_gradient" in names


def test_unknown_scope():
    with pytest.raises(ValueError, match="unknown check scope"):
        run_checks("everything")


def test_report_text():
    report = CheckReport()
    report.add("params", "a", 0.5, 1.0)
    report.add("params", "b", 2.0, 1.0)
    text = report.to_text()
    assert "PASS params/a" in text and "FAIL params/b" in text and "1/2 checks passed" in text
    assert not report.ok and len(report.failures) == 1
