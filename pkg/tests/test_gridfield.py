import numpy as np
import pytest

from pdmplab.gridfield import GridField


def test_cdf_density_round_trip(rng):
    d = GridField("density", rng.uniform(size=(8, 6)), rng.uniform(size=(8, 6)))
    back = d.to_cdf().to_density()
    np.testing.assert_allclose(back.values0, d.values0, rtol=1e-10)
    assert d.to_cdf().total_mass() == pytest.approx(d.total_mass())
    assert d.to_cdf().is_monotone()


def test_axes():
    g = GridField("density", np.zeros((4, 2)), np.zeros((4, 2)))
    np.testing.assert_allclose(g.axes()[0], [0.125, 0.375, 0.625, 0.875])
    c = GridField("cdf", np.zeros((4, 2)), np.zeros((4, 2)))
    np.testing.assert_allclose(c.axes()[1], [0.5, 1.0])
    assert g.points().shape == (4, 2, 2)


def test_csv_round_trip(tmp_path, rng):
    g = GridField("cdf", rng.uniform(size=(5, 3)), rng.uniform(size=(5, 3)), (0, 2, -1, 1))
    path = tmp_path / "g.csv"
    text = g.to_csv(path, {"version": "x", "seed": 3})
    lines = text.splitlines()
    assert lines[0] == "# version: x"
    assert lines[2:6] == ["kind,cdf", "n1,5", "n2,3", "bounds,0.0,2.0,-1.0,1.0"]
    back = GridField.from_csv(path)
    np.testing.assert_array_equal(back.values0, g.values0)
    np.testing.assert_array_equal(back.values1, g.values1)
    assert back.bounds == g.bounds and back.kind == "cdf"


def test_validation():
    with pytest.raises(ValueError):
        GridField("pdf", np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        GridField("cdf", np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        GridField("density", np.zeros((2, 2)), np.zeros((2, 2))).is_monotone()
