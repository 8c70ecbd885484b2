import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bloodtriage.dataio import Dataset, generic_schema


def make_dataset(values, labels, class_names=None) -> Dataset:
    values = np.asarray(values, dtype=np.float64)
    return Dataset(
        generic_schema(values.shape[1]),
        values,
        np.asarray(labels),
        class_names or {1: "pos", -1: "neg"},
    )


@pytest.fixture
def tiny_1d():
    return make_dataset([[1.0], [2.0], [3.0], [4.0]], [-1, -1, 1, 1])


@pytest.fixture
def xor_2d():
    return make_dataset([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]], [1, 1, -1, -1])
