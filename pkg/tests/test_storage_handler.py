import json

import numpy as np
import pandas as pd
import pytest

from core.handler.storage_handler import Container, StorageHandler
from core.utils.exceptions import CorruptFileError, StorageError


@pytest.fixture
def handler() -> StorageHandler:
    return StorageHandler()


def test_container_round_trip(handler, tmp_path, rng):
    columns = {'a': rng.standard_normal((3, 4)), 'b': np.arange(5.0)}
    path = handler.write_container(tmp_path / 'nested' / 'c.qfdi', Container('trajectory', {'seed': 3}, columns))
    loaded = handler.read_container(path, expected_kind='trajectory')

    assert loaded.kind == 'trajectory'
    assert loaded.metadata == {'seed': 3}
    assert list(loaded.columns) == ['a', 'b']
    for name, values in columns.items():
        np.testing.assert_array_equal(loaded.columns[name], values)
        assert loaded.columns[name].shape == values.shape


def test_writes_are_byte_identical(handler, tmp_path):
    container = Container('dataset', {'b': 1, 'a': [1.5, 2.0]}, {'x': np.linspace(0, 1, 7)})
    first = handler.write_container(tmp_path / 'one.qfdi', container).read_bytes()
    second = handler.write_container(tmp_path / 'two.qfdi', container).read_bytes()
    assert first == second


def test_bad_magic_is_corrupt(handler, tmp_path):
    path = tmp_path / 'bad.qfdi'
    path.write_bytes(b'NOPE' + bytes(12))
    with pytest.raises(CorruptFileError):
        handler.read_container(path)


def test_truncated_header_is_corrupt(handler, tmp_path):
    path = handler.write_container(tmp_path / 'c.qfdi', Container('dataset', {'k': 'v'}, {'x': np.ones(3)}))
    path.write_bytes(path.read_bytes()[:10])
    with pytest.raises(CorruptFileError):
        handler.read_container(path)


def test_missing_file_is_storage_error(handler, tmp_path):
    with pytest.raises(StorageError):
        handler.read_container(tmp_path / 'absent.qfdi')


def test_unexpected_kind(handler, tmp_path):
    path = handler.write_container(tmp_path / 'c.qfdi', Container('dataset'))
    with pytest.raises(StorageError):
        handler.read_container(path, expected_kind='checkpoint')


def test_csv_and_json(handler, tmp_path):
    df = pd.DataFrame({'experiment': ['fault-levels'] * 2, 'accuracy': [0.5, 1.0 / 3.0]})
    path = handler.write_csv(tmp_path / 'r.csv', df)
    pd.testing.assert_frame_equal(handler.read_csv(path), df, check_exact=False, rtol=1e-9)

    json_path = handler.write_json(tmp_path / 'r.json', {'value': np.float64(0.25), 'shape': np.array([1, 2])})
    assert json.loads(json_path.read_text(encoding='utf-8')) == {'value': 0.25, 'shape': [1, 2]}


def test_missing_csv(handler, tmp_path):
    with pytest.raises(StorageError):
        handler.read_csv(tmp_path / 'absent.csv')
