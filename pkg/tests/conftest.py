import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from catnet.dataset import SyntheticSpec, generate_synthetic, split_by_group  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dataset():
    spec = SyntheticSpec(classes=6, dims=[5, 3], samples_per_class=24, groups=4, separation=3.0, noise=0.3, seed=11)
    ds = generate_synthetic(spec)
    return ds, split_by_group(ds, {"train": 0.75, "test": 0.25}, seed=2)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
