import pytest

from alflow.types import validate_config


BASE_CONFIG = dict(
    pred_workers=2,
    orcl_workers=2,
    gene_workers=3,
    train_workers=2,
    fixed_size_data=True,
    retrain_size=3,
    dynamic_oracle_list=False,
    progress_save_interval=60,
    oracle_latency=0.0,
    selection_threshold=0.0,
    seed=7,
    selection="committee_std",
    epochs_per_round=5,
)


@pytest.fixture
def make_config(tmp_path):
    """Config factory rooted in the test's tmp dir."""

    def factory(**overrides):
        raw = dict(BASE_CONFIG)
        raw["result_dir"] = str(tmp_path / "results")
        raw.update(overrides)
        return validate_config(raw)

    return factory
