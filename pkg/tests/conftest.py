import numpy as np
import pytest

from prefshift.space import PrefSpace
from prefshift.user import UserParams


def random_params(rng: np.random.Generator, n: int, anticipation: str = "next") -> UserParams:
    space = PrefSpace(n)
    return UserParams(
        lam=float(rng.uniform(0.0, 1.0)),
        beta_d=float(rng.uniform(0.5, 8.0)),
        beta_c_field=rng.uniform(0.2, 4.0, n),
        init_pref_mean=float(rng.uniform(0, 360)),
        init_pref_std=float(rng.uniform(20, 90)),
        anticipation=anticipation,
        space=space,
    )


def random_simplex(rng: np.random.Generator, n: int, alpha: float = 1.0) -> np.ndarray:
    p = rng.dirichlet(np.full(n, alpha))
    p = np.maximum(p, 1e-6)
    return p / p.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        passed, detail = RESULTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")
