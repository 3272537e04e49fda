import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from oppforecast import ingest, synth

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_records():
    return synth.generate(synth.SynthConfig(n_records=3000, seed=3))


@pytest.fixture(scope="session")
def small_csv(tmp_path_factory, small_records):
    path = tmp_path_factory.mktemp("data") / "small.csv"
    ingest.write_csv(small_records, path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: one line per criterion, printed after the run
_CRITERIA: dict[int, dict] = {}


class _Criterion:
    """Context manager recording whether a block checking one criterion passed."""

    def __init__(self, number: int, title: str):
        self.number, self.title, self.notes = number, title, []

    def note(self, text: str) -> None:
        self.notes.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        entry = _CRITERIA.setdefault(self.number, {"title": self.title, "ok": True, "notes": []})
        entry["ok"] = entry["ok"] and exc_type is None
        entry["notes"] += self.notes
        if exc_type is not None:
            first = str(exc).splitlines()[0] if str(exc) else ""
            entry["notes"].append(f"{exc_type.__name__}: {first}")
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        notes = f"  [{'; '.join(e['notes'])}]" if e["notes"] else ""
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}{notes}")
