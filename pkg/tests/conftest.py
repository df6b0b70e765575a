import mpmath as mp
import pytest
from hypothesis import HealthCheck, settings

from discmax import Geometric, Poisson

# property suites run at least 1000 randomized cases each
settings.register_profile("thorough", max_examples=1000, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("thorough")


def poisson_tail_mp(lam, k, dps=40):
    """-ln P(xi >= k) for Poisson(lam) by direct summation at ``dps`` digits."""
    with mp.workdps(dps):
        lam = mp.mpf(lam)
        if k <= lam + 20:
            head = mp.fsum(lam**i / mp.factorial(i) for i in range(k))
            return -mp.log(1 - mp.exp(-lam) * head)
        terms, term, i = [], mp.exp(-lam) * lam**k / mp.factorial(k), k
        while term > mp.mpf(10) ** (-dps - 5) * (terms[0] if terms else term):
            terms.append(term)
            i += 1
            term *= lam / i
        return -mp.log(mp.fsum(terms))


@pytest.fixture
def geo_half():
    return Geometric(0.5)


@pytest.fixture
def poisson_one():
    return Poisson(1.0)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
