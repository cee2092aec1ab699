import numpy as np
import pytest

from mkrisk import ReferenceSpec, SolveOptions, sample_reference, solve_semidual


@pytest.fixture(scope="session")
def plane():
    return ReferenceSpec.spherical(2)


@pytest.fixture(scope="session")
def small_cloud():
    rng = np.random.default_rng(3)
    return rng.standard_normal((300, 2)) * np.array([1.0, 0.5])


@pytest.fixture(scope="session")
def small_grid(plane):
    return sample_reference(plane, 3000, 11)


@pytest.fixture(scope="session")
def small_fit(plane, small_cloud, small_grid):
    """A quick, fully converged fit used by the cheaper property tests."""
    return solve_semidual(small_cloud, plane, 1e-2, reference_grid=small_grid)


@pytest.fixture(scope="session")
def sharp_fit(plane):
    """A converged fit at the default regularisation on a modest cloud."""
    x = np.random.default_rng(5).standard_normal((500, 2))
    return solve_semidual(x, plane, 1e-3, SolveOptions(batch_reference_size=5000))


@pytest.fixture(scope="session")
def uniform_fit(plane):
    """Self-transport on a modest sample: the fitted maps should be close to the identity."""
    u = sample_reference(plane, 1000, 21)
    return solve_semidual(u, plane, 1e-3)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line, then fail the test if the check did not hold."""

    def report(number, title, ok, detail):
        line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
