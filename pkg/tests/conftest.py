import numpy as np
import pytest


def trapezoid(f, a, b, step):
    """Composite trapezoid rule; the independent integration oracle."""
    n = int(round((b - a) / step))
    u = np.linspace(a, b, n + 1)
    return np.trapezoid(f(u), u)


def brute_force_concordance(risk, times, case):
    """Pair-by-pair enumeration; ``risk[i, k]`` is subject i's score at time k."""
    conc, comp = 0.0, 0
    n = len(times)
    for m in range(n):
        if not case[m]:
            continue
        for j in range(n):
            if j != m and times[j] > times[m]:
                comp += 1
                if risk[m][m] > risk[j][m]:
                    conc += 1
                elif risk[m][m] == risk[j][m]:
                    conc += 0.5
    return conc, comp


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
