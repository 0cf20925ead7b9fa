import numpy as np
import pytest

from credfair.data import Encoder, SplitSpec, bundled_dataset_path, load_raw, split


@pytest.fixture(scope="session")
def german():
    return load_raw(bundled_dataset_path())


@pytest.fixture(scope="session")
def canonical_split(german):
    return split(german, SplitSpec(0.8, seed=42, stratified=True))


@pytest.fixture(scope="session")
def encoded(canonical_split):
    train, test = canonical_split
    enc = Encoder.fit(train)
    return enc.transform(train), enc.transform(test)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 9):
        terminalreporter.write_line(mod.RESULTS.get(n, f"criterion {n}: not recorded (not run or errored first)"))
