import numpy as np
import pytest

from mea.microgen import SweepConfig, generate_dataset, generate_test_suite

# one verdict line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def verdict(number: int, ok: bool, detail: str):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE[number] = line
    print(line)
    assert ok, line


def skip_verdict(number: int, reason: str):
    ACCEPTANCE[number] = f"criterion {number}: SKIP | {reason}"
    pytest.skip(reason)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture(scope="session")
def default_dataset():
    return generate_dataset(SweepConfig())


@pytest.fixture(scope="session")
def test_suite():
    return generate_test_suite()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def slab_field(n=101, k1=1.0, k2=0.1):
    """Columns with x < 0.5 carry k1, the rest k2."""
    x = np.linspace(0.0, 1.0, n)
    row = np.where(x < 0.5 - 1e-12, k1, k2)
    return np.tile(row, (n, 1))


@pytest.fixture(scope="session")
def fol_data(default_dataset):
    """2,000 condensed 11 x 11 fields: the first 1,600 train, the rest are held out."""
    from mea.pipeline import condense_batch
    samples = default_dataset[0]
    order = np.random.default_rng([0, 0x5A3]).permutation(len(samples))[:2000]
    k101 = np.stack([samples[i].k101.values for i in order])
    k11 = condense_batch(k101)[11]
    return k11[:1600], k11[1600:]


@pytest.fixture(scope="session")
def trained_fol(fol_data):
    from mea.fol import train_fol
    return train_fol(fol_data[0], seed=0)


@pytest.fixture(scope="session")
def small_labelled(default_dataset):
    """24 labelled samples spread across the sweep."""
    from mea.pipeline import dataset_from_samples, label_dataset
    samples = default_dataset[0]
    ds = dataset_from_samples([samples[i] for i in range(0, len(samples), len(samples) // 24)][:24])
    return label_dataset(ds)


@pytest.fixture(scope="session")
def small_pairs(small_labelled):
    from mea.pipeline import make_pairs
    return make_pairs(small_labelled)
