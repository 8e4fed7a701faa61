import numpy as np
import pytest

from quantour import kernels

# criterion number -> list of (part, ok, detail)
ACCEPTANCE = {}


def record_criterion(number, part, ok, detail=""):
    ACCEPTANCE.setdefault(number, []).append((part, bool(ok), detail))


@pytest.fixture(scope="session")
def warm_kernels():
    """Compile the numba kernels once so timed sections measure steady state."""
    rng = np.random.default_rng(0)
    pts = np.ascontiguousarray(rng.standard_normal((16, 2)))
    dirs = np.ascontiguousarray(rng.standard_normal((4, 2)))
    kernels.directional_kth(pts, dirs, 2)
    kernels.halfspace_inside(pts, dirs, np.zeros(4), 1e-9)
    kernels.project(pts, dirs[0].copy())
    kernels.check_loss(pts[:, 0].copy(), 0.5)
    kernels.jacobi_eigh(np.eye(3), 1e-12, 10)
    return True


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        ok = all(p[1] for p in parts)
        notes = "; ".join(f"{'ok' if good else 'FAILED'}: {part}" + (f" ({detail})" if detail else "")
                          for part, good, detail in parts)
        terminalreporter.write_line(f"criterion {number:>2}  {'PASS' if ok else 'FAIL'}  {notes}")
