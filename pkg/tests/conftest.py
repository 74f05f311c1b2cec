import numpy as np
import pytest

from snapfield.radiance_field import RadianceGrid


def random_grid(rng, res=8, sh_degree=1, density_scale=1.5, bbox=((-1, -1, -1), (1, 1, 1))):
    """Random grid whose decoded colors stay well inside (0, 1)."""
    grid = RadianceGrid.create((res,) * 3, bbox[0], bbox[1], sh_degree)
    grid.density_raw[:] = rng.normal(0.0, density_scale, grid.density_raw.shape)
    sh = rng.normal(0.0, 0.08, grid.sh_coeffs.shape)
    sh[..., 0, :] = rng.uniform(0.8, 2.6, sh[..., 0, :].shape)   # DC: 0.23..0.73 after C0
    grid.sh_coeffs[:] = sh
    return grid


def random_rays(rng, n, radius=3.0, spread=0.4):
    """Rays starting on a sphere of ``radius`` and aimed near the origin."""
    o = rng.normal(size=(n, 3))
    o *= radius / np.linalg.norm(o, axis=1, keepdims=True)
    target = rng.uniform(-spread, spread, (n, 3))
    d = target - o
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return o, d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
