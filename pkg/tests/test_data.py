import numpy as np
import pytest

from hetrain.data import DataError, load_iris, minmax_scale, read_iris_csv, stratified_split


def write(tmp_path, text, name="iris.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_bundled_iris_split():
    ds = load_iris(seed=0)
    assert ds.features.shape == (150, 4) and ds.labels.shape == (150, 3)
    assert len(ds.train_idx) == 120 and len(ds.test_idx) == 30
    assert not set(ds.train_idx) & set(ds.test_idx)
    assert np.bincount(ds.labels[ds.test_idx].argmax(axis=1)).tolist() == [10, 10, 10]
    assert np.array_equal(ds.features.min(axis=0), np.zeros(4))
    assert np.array_equal(ds.features.max(axis=0), np.ones(4))


def test_split_is_seeded():
    a, b, c = load_iris(seed=1), load_iris(seed=1), load_iris(seed=2)
    assert np.array_equal(a.test_idx, b.test_idx)
    assert not np.array_equal(a.test_idx, c.test_idx)


def test_header_is_optional(tmp_path):
    rows = "5.1,3.5,1.4,0.2,setosa\n7.0,3.2,4.7,1.4,Iris-versicolor\n"
    X1, y1 = read_iris_csv(write(tmp_path, rows, "a.csv"))
    X2, y2 = read_iris_csv(write(tmp_path, "sepal_length,sepal_width,petal_length,petal_width,species\n" + rows, "b.csv"))
    assert np.array_equal(X1, X2) and y1.tolist() == y2.tolist() == [0, 1]


@pytest.mark.parametrize("line, message", [
    ("5.1,3.5,1.4,setosa", "expected 5 columns"),
    ("5.1,abc,1.4,0.2,setosa", "non-numeric"),
    ("5.1,3.5,1.4,0.2,daisy", "unknown species"),
])
def test_malformed_rows_name_the_line(tmp_path, line, message):
    p = write(tmp_path, "5.1,3.5,1.4,0.2,setosa\n" + line + "\n")
    with pytest.raises(DataError, match=rf"iris.csv:2: {message}"):
        read_iris_csv(p)


def test_missing_and_empty_files(tmp_path):
    with pytest.raises(DataError, match="not found"):
        read_iris_csv(tmp_path / "nope.csv")
    with pytest.raises(DataError, match="no data"):
        read_iris_csv(write(tmp_path, ""))


def test_minmax_constant_column():
    X = np.array([[1.0, 5.0], [3.0, 5.0]])
    assert minmax_scale(X).tolist() == [[0.0, 0.0], [1.0, 0.0]]


def test_stratified_split_proportions():
    classes = np.repeat([0, 1, 2], 50)
    train, test = stratified_split(classes, 0.2, 0)
    assert np.bincount(classes[test]).tolist() == [10, 10, 10]
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(150))
