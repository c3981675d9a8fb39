import numpy as np
import pytest
from hypothesis import settings

from mmrn import mmcore
from mmrn.dcov import SampleSet, double_center, pairwise_distances
from mmrn.manifold import random_stiefel

settings.register_profile("mmrn", deadline=None, max_examples=50)
settings.load_profile("mmrn")

# Acceptance tests append "criterion N: PASS/FAIL ..." lines here; printed in the summary.
ACCEPTANCE_LINES: list[str] = []

# Every optimizer run in the session is checked for monotone ascent.
ASCENT_LOG: list[dict] = []


def make_instance(rng, n=20, p=5, d=2, q=1):
    """Whitened-looking predictors, a nonlinear response, its centred kernel and a random point."""
    Z = rng.standard_normal((p, n))
    Y = np.vstack([np.sin(Z[0]) + Z[1] ** 2 + 0.3 * rng.standard_normal(n) for _ in range(q)])
    B = double_center(pairwise_distances(Y)).B
    gamma = random_stiefel(p, d, rng)
    return Z, Y, B, gamma


def sample_set(rng, n=60, p=5, q=1):
    X = rng.standard_normal((p, n))
    Y = np.vstack([X[0] ** 2 + X[1] + 0.2 * rng.standard_normal(n) for _ in range(q)])
    return SampleSet(X, Y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True, scope="session")
def _record_ascent():
    original = mmcore.mm_ascent

    def checked(gamma0, surrogate_at, objective, opts):
        point, info = original(gamma0, surrogate_at, objective, opts)
        trace = np.asarray(info["objective_trace"])
        steps = np.diff(trace)
        worst = float(np.min(steps / np.maximum(np.abs(trace[:-1]), 1e-300))) if steps.size else 0.0
        entry = {
            "min_rel_step": worst,
            "max_halvings": max(info["line_search_counts"], default=0),
            "cap": opts.max_halvings,
        }
        ASCENT_LOG.append(entry)
        assert worst >= -1e-12, f"objective decreased (relative step {worst:.3e})"
        assert entry["max_halvings"] <= entry["cap"]
        return point, info

    mmcore.mm_ascent = checked
    yield
    mmcore.mm_ascent = original


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
