import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

CRITERIA = {
    1: "Figure 1 slopes",
    2: "SHB collapse",
    3: "SHB auxiliary identities",
    4: "envelope admissibility",
    5: "q-trick closed form",
    6: "gradient oracles",
    7: "(ABC) verification",
    8: "local trapping",
    9: "conditional decay",
    10: "non-uniform PL and local radius",
    11: "local policy gradient",
}
_RESULTS: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def criterion():
    """``criterion(k, ok, detail)`` records one sub-check of acceptance criterion ``k``."""

    def record(k: int, ok: bool, detail: str) -> None:
        _RESULTS.setdefault(k, []).append((bool(ok), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k, name in CRITERIA.items():
        checks = _RESULTS.get(k)
        if not checks:
            terminalreporter.write_line(f"criterion {k:2d} ({name}): NOT RUN")
            continue
        ok = all(c[0] for c in checks)
        failed = [c[1] for c in checks if not c[0]]
        detail = "; ".join(failed) if failed else "; ".join(c[1] for c in checks)
        terminalreporter.write_line(f"criterion {k:2d} ({name}): {'PASS' if ok else 'FAIL'} | {detail}")
