import pytest

from mkdvlab import selfsimilar_profile as sp


@pytest.fixture(scope="session")
def exact_profile():
    """Self-similar Fourier profile from the ODE with Airy amplitude 0.5."""
    phys = sp.solve_profile_ode(amplitude=0.5, domain=(-400.0, 40.0))
    return sp.ExactProfile.from_ode(phys)


VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line; shown in the terminal summary."""
    def record(n, ok, detail=""):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
