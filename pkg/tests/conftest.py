import os

import pytest

# acceptance criterion -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)


@pytest.fixture(scope="session")
def scenario_reports(tmp_path_factory):
    """Lazily run and cache 100-replication experiments by scenario name."""
    from sparse_mefm.cli import ExperimentSpec, run_experiment
    from sparse_mefm.simulate import scenario

    cache = {}
    root = tmp_path_factory.mktemp("acceptance")

    def get(name: str, reps: int = 100, seed: int = 1):
        key = (name, reps, seed)
        if key not in cache:
            spec = ExperimentSpec(name=name, dgp=scenario(name), reps=reps, seed=seed, output=root / name)
            reports, failures = run_experiment(spec, threads=os.cpu_count() or 1)
            assert not failures, failures
            cache[key] = reports
        return cache[key]

    return get


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[criterion]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {detail}")
