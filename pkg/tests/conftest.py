import pytest

from daeloc.experiment import RunConfig, run_full


@pytest.fixture(scope="session")
def default_run():
    """One full pipeline run on the default synthetic scenario.

    Session-scoped because it trains two 100-tree forests (~15 s); several
    test modules and the acceptance suite share it.
    """
    cfg = RunConfig(synth="default", seed=7)
    return cfg, run_full(cfg)
