import json

import numpy as np
import pytest

from utils.halfmeasure import LOG_CONCAVE_LIBRARY, named_measure


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope='session')
def library_measures():
    return {name: named_measure(name) for name in LOG_CONCAVE_LIBRARY}


@pytest.fixture
def write_json(tmp_path):
    def _write(name, data):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding='utf-8')
        return str(path)
    return _write
