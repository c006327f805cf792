import numpy as np
import pytest

from linot.core import DiscreteMeasure
from linot.io import load_measure, read_csv, save_measure


def test_csv_without_header(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0.0,1.0\n2.0,3.0\n\n")
    mu = read_csv(p)
    np.testing.assert_array_equal(mu.points, [[0.0, 1.0], [2.0, 3.0]])
    np.testing.assert_array_equal(mu.weights, [0.5, 0.5])


def test_csv_with_weight_column_is_normalized(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x,y,weight\n0,0,1\n1,1,3\n")
    mu = load_measure(p)
    assert mu.dim == 2
    np.testing.assert_allclose(mu.weights, [0.25, 0.75])


def test_csv_header_without_weight(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x,y\n0,0\n1,1\n")
    assert load_measure(p).dim == 2


@pytest.mark.parametrize("text", ["", "x,y\n", "x,weight\n0,0\n1,2\n", "0,1\n2\n"])
def test_csv_errors(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ValueError):
        load_measure(p)


def test_json(tmp_path):
    p = tmp_path / "a.json"
    p.write_text('{"points": [[0, 0, 1], [1, 0, 0]], "weights": [2, 2]}')
    mu = load_measure(p)
    assert mu.dim == 3
    np.testing.assert_array_equal(mu.weights, [0.5, 0.5])


@pytest.mark.parametrize("suffix", [".csv", ".json"])
@pytest.mark.parametrize("weights", [True, False])
def test_roundtrip_is_exact(tmp_path, suffix, weights):
    rng = np.random.default_rng(0)
    w = rng.uniform(0.5, 1, 7)
    mu = DiscreteMeasure.normalized(rng.normal(size=(7, 2)), w)
    path = tmp_path / f"m{suffix}"
    save_measure(path, mu, weights=weights)
    back = load_measure(path)
    np.testing.assert_array_equal(back.points, mu.points)
    if weights:
        np.testing.assert_allclose(back.weights, mu.weights, rtol=1e-15)
    else:
        np.testing.assert_array_equal(back.weights, np.full(7, 1 / 7))
