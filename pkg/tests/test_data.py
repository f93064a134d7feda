import filecmp

import numpy as np
import pytest

from ksdflow.data import (LabeledDataset, generate_ica, generate_logistic, load_labeled_csv,
                          make_ica_data, make_logistic_data, read_matrix_csv, standardize,
                          write_labeled_csv)


def test_csv_round_trip(tmp_path, rng):
    ds = LabeledDataset(rng.normal(size=(7, 3)), np.where(rng.uniform(size=7) < 0.5, 1.0, -1.0))
    write_labeled_csv(tmp_path / "d.csv", ds)
    back = load_labeled_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.names == ("f1", "f2", "f3")


def test_y_column_anywhere(tmp_path):
    (tmp_path / "d.csv").write_text("a,y,b\n1,1,2\n3,-1,4\n")
    ds = load_labeled_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(ds.features, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(ds.labels, [1, -1])


@pytest.mark.parametrize("text", ["", "y,f1\n", "f1,f2\n1,2\n", "y,f1\n1,2\n-1\n",
                                  "y,f1\n1,abc\n", "y,f1\n0,1\n"])
def test_malformed_csv_rejected(tmp_path, text):
    (tmp_path / "d.csv").write_text(text)
    with pytest.raises(ValueError):
        load_labeled_csv(tmp_path / "d.csv")


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((0, 2)), np.zeros(0))


def test_standardize_uses_train_statistics(rng):
    tr = LabeledDataset(rng.normal(3.0, 2.0, size=(50, 2)), np.ones(50))
    te = LabeledDataset(rng.normal(3.0, 2.0, size=(20, 2)), -np.ones(20))
    s_tr, s_te = standardize(tr, te)
    np.testing.assert_allclose(s_tr.features.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(s_tr.features.std(axis=0), 1.0, rtol=1e-12)
    mu, sd = tr.features.mean(axis=0), tr.features.std(axis=0)
    np.testing.assert_allclose(s_te.features, (te.features - mu) / sd)


def test_split():
    ds = LabeledDataset(np.arange(10.0)[:, None], np.ones(10))
    tr, te = ds.split(6)
    assert len(tr) == 6 and len(te) == 4
    with pytest.raises(ValueError):
        ds.split(10)


def test_logistic_separable_labels():
    ds, w = make_logistic_data(300, 5, seed=4)
    assert ds.dim == 5
    np.testing.assert_array_equal(ds.labels, np.where(ds.features @ w >= 0, 1.0, -1.0))
    assert np.min(np.abs(ds.features @ w)) >= 0.1


def test_ica_shapes():
    X, W = make_ica_data(3, 200, seed=1)
    assert X.shape == (200, 3) and W.shape == (3, 3)
    assert np.all(np.isfinite(X))


def test_generators_byte_deterministic(tmp_path):
    a = generate_logistic(str(tmp_path / "a" / "l.csv"), 5, 100, seed=9)
    b = generate_logistic(str(tmp_path / "b" / "l.csv"), 5, 100, seed=9)
    for x, y in zip(a, b):
        assert filecmp.cmp(x, y, shallow=False)
    assert open(a[0]).readline().strip() == "y,f1,f2,f3,f4,f5"
    a = generate_ica(str(tmp_path / "a" / "i.csv"), 2, 100, seed=9)
    b = generate_ica(str(tmp_path / "b" / "i.csv"), 2, 100, seed=9)
    for x, y in zip(a, b):
        assert filecmp.cmp(x, y, shallow=False)
    assert read_matrix_csv(a[0]).shape == (100, 2)
    assert read_matrix_csv(a[1]).shape == (2, 2)
