import pytest

from reram_onn.config import PATTERNS, config_from_dict
from reram_onn.harness import run_coupling_toggle, run_retrieval


@pytest.fixture(scope="session")
def default_config():
    return config_from_dict({})


@pytest.fixture(scope="session")
def retrievals(tmp_path_factory, default_config):
    """Default-config retrieval runs for the three stored patterns (waveforms kept)."""
    from dataclasses import replace

    out = {}
    for name in PATTERNS:
        cfg = replace(default_config, pattern=name)
        out[name] = run_retrieval(cfg, tmp_path_factory.mktemp(name), keep_waveforms=True)
    return out


@pytest.fixture(scope="session")
def toggle_run(tmp_path_factory, default_config):
    return run_coupling_toggle(default_config, tmp_path_factory.mktemp("toggle"), keep_waveforms=True)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def _report(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
