import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tilehmm.emission import ConstrainedGaussianSet
from tilehmm.hmm import ModelParams, ModelSpec


def random_emissions(rng, spread=3.0):
    u2 = rng.uniform(0.2, 1.0)
    return ConstrainedGaussianSet(
        mu=rng.uniform(0.0, spread, size=(4, 2)),
        theta12=rng.uniform(0, np.pi),
        theta3=rng.uniform(0, np.pi),
        theta4=rng.uniform(0, np.pi),
        u1=u2 * (1.0 + rng.uniform(0.1, 3.0, size=4)),
        u2=u2,
    )


def random_params(rng, spec=ModelSpec(), spread=3.0):
    if spec.use_markov:
        tr = rng.dirichlet(np.ones(4), size=(spec.n_chains, 4))
    else:
        tr = rng.dirichlet(np.ones(4), size=spec.n_chains)
    return ModelParams(spec, random_emissions(rng, spread), tr)


def separated_emissions(u1=0.6, u2=0.1):
    """Noise low/low, identical high/high, two off-diagonal groups; well separated."""
    return ConstrainedGaussianSet(
        mu=[[6.0, 6.0], [10.0, 10.0], [10.0, 7.5], [7.5, 10.0]],
        theta12=np.pi / 4,
        theta3=0.3,
        theta4=np.pi / 2 - 0.3,
        u1=np.full(4, u1) if np.isscalar(u1) else u1,
        u2=u2,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(module.summary_line(number))
