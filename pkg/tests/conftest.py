import numpy as np
import pytest

from mismc.spde_model import GammaPrior, ModelConfig, simulate_data


@pytest.fixture(scope="session")
def toy_config():
    # two base modes, one step per interval, ten observations
    return ModelConfig(K0=2, M0=1, n_obs=10)


@pytest.fixture(scope="session")
def toy_data(toy_config):
    return simulate_data(toy_config)


@pytest.fixture(scope="session")
def toy_prior(toy_config):
    return GammaPrior.from_config(toy_config)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {
    1: "coupling exactness",
    2: "Z^N unbiasedness",
    3: "PMMH oracle equivalence",
    4: "telescoping identity",
    5: "DOD unbiased at scale",
    6: "rate fit",
    7: "cost-rate separation",
    8: "property suites",
}


@pytest.fixture
def acceptance(request):
    """report(criterion, ok, detail) prints one line and records it for the summary."""
    lines = request.config.stash.setdefault(_LINES, {})

    def report(criterion: int, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion} ({_CRITERIA[criterion]}): {'PASS' if ok else 'FAIL'} | {detail}"
        lines[criterion] = line
        print(line)
        return ok

    return report


_LINES = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, {})
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(_CRITERIA):
        terminalreporter.write_line(lines.get(k, f"criterion {k} ({_CRITERIA[k]}): NOT RUN"))
