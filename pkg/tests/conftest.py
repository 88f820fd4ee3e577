import pytest

from cpes.store import SyntheticConfig, generate_synthetic

# Frozen synthetic-store settings shared by tests and the acceptance suite.
# Noise scales were tuned once against oracle runs and are fixed here;
# see also the calibration constants in test_acceptance.py.
SWEEP_TRAIN_CFG = SyntheticConfig(
    class_count=20,
    records_per_class=30,
    dim=32,
    patches=16,
    signal_patches=4,
    signal_noise=0.2,
    distractor_pool_size=8,
    distractor_noise=0.3,
    seed=101,
)
SWEEP_EVAL_CFG = SyntheticConfig(
    class_count=5,
    records_per_class=30,
    dim=32,
    patches=16,
    signal_patches=4,
    signal_noise=0.2,
    distractor_pool_size=8,
    distractor_noise=0.3,
    seed=999,
)


@pytest.fixture(scope="session")
def small_store():
    """5 classes x 10 records, mild noise; the golden-value reference store."""
    return generate_synthetic(
        SyntheticConfig(5, 10, 32, 16, 4, 0.1, 8, 0.1, seed=7)
    )


@pytest.fixture(scope="session")
def easy_train_store():
    """Low signal noise: learning signal must be unmistakable."""
    return generate_synthetic(
        SyntheticConfig(10, 25, 32, 16, 4, 0.05, 8, 0.3, seed=41)
    )


@pytest.fixture(scope="session")
def easy_eval_store():
    return generate_synthetic(
        SyntheticConfig(5, 25, 32, 16, 4, 0.05, 8, 0.3, seed=42)
    )


@pytest.fixture(scope="session")
def sweep_train_store():
    return generate_synthetic(SWEEP_TRAIN_CFG)


@pytest.fixture(scope="session")
def sweep_eval_store():
    return generate_synthetic(SWEEP_EVAL_CFG)
