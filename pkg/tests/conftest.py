from functools import lru_cache

import pytest

from opext.geometry import sample_radial_manifold, shape_preset


@lru_cache(maxsize=None)
def cloud(shape: str = "sphere", n: int = 1000, seed: int = 0):
    return sample_radial_manifold(shape_preset(shape), n, seed=seed)


@pytest.fixture(scope="session")
def sphere1000():
    return cloud("sphere", 1000)


@pytest.fixture(scope="session")
def sphere2000():
    return cloud("sphere", 2000)


@pytest.fixture(scope="session")
def sphere4000():
    return cloud("sphere", 4000)


@pytest.fixture(autouse=True)
def _cache_dir(tmp_path_factory, monkeypatch):
    monkeypatch.setenv("OPEXT_CACHE_DIR", str(tmp_path_factory.getbasetemp() / "response-cache"))


ACCEPTANCE: list[str] = []


def record(criterion: int, ok: bool, detail: str, seconds: float | None = None) -> bool:
    """Log one acceptance line; printed again in the terminal summary."""
    t = f" [{seconds:.1f}s]" if seconds is not None else ""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion:2d}: {detail}{t}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
