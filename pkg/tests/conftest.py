import numpy as np
import pytest

from cco.netsim import CellConfig, NetworkState, UserEquipment, model_a


def small_network(n_cells=3, n_ues=30, seed=0, sigma=0.0, side=1200.0, tilt=6.0):
    """Hand-sized network: cells on a ring, UEs uniform in a square."""
    rng = np.random.default_rng(seed)
    cells = []
    for i in range(n_cells):
        ang = 2 * np.pi * i / max(n_cells, 1)
        pos = (float(300 * np.cos(ang)), float(300 * np.sin(ang)))
        cells.append(CellConfig(i, pos, height=30.0, azimuth=float((120 * i) % 360),
                                tilt=tilt, tx_power=15.0))
    ues = [UserEquipment(j, tuple(float(v) for v in rng.uniform(-side / 2, side / 2, 2)))
           for j in range(n_ues)]
    return NetworkState(tuple(cells), tuple(ues), model_a(shadowing_sigma=sigma),
                        shadowing_seed=seed)


@pytest.fixture
def net3():
    return small_network(3, 30, seed=1, sigma=0.0)


@pytest.fixture
def net3_shadowed():
    return small_network(3, 30, seed=2, sigma=6.0)


# -- acceptance report -------------------------------------------------------------
ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion and return ``ok``."""
    def record(key: str, ok: bool, detail: str) -> bool:
        line = f"criterion {key}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES[key] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.rstrip("ab")), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
