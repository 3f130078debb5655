import numpy as np
import pytest

from ldtprob.tsunami import TsunamiModel, TsunamiSetup

# criterion number -> part label -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, dict[str, tuple[bool, str]]] = {}


def record(criterion: int, part: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, {})[part] = (bool(ok), detail)


@pytest.fixture(scope="session")
def coarse_model() -> TsunamiModel:
    """K=64, T_F=1500 s tsunami model (a few ms per forward solve)."""
    return TsunamiModel.from_setup(TsunamiSetup(K=64, T_F=1500.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p[0] for p in parts.values())
        detail = "; ".join(f"{k}{'' if v[0] else ' FAILED'}: {v[1]}" for k, v in parts.items())
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
