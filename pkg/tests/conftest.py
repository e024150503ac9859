import pytest

from lpplfit.model import LinearParams, NonlinearParams
from lpplfit.synth import WEEK, SynthSpec, generate

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []

T2 = 2008.0
TRUE_NL = NonlinearParams(tc=T2 + 0.1, m=0.5, omega=8.0, phi=1.0)
TRUE_LIN = LinearParams(A=10.0, B=-2.0, C=0.3)


def synthetic(nl=TRUE_NL, lin=TRUE_LIN, start=T2 - 1.5, end=T2, noise=0.0, seed=0):
    return generate(SynthSpec(nl, lin, start, end, WEEK, noise, seed))


@pytest.fixture(scope="session")
def bubble():
    """Noiseless weekly bubble, 1.5 years up to T2, tc five weeks later."""
    return synthetic()


@pytest.fixture(scope="session")
def bubble_series(bubble):
    return bubble.series


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
