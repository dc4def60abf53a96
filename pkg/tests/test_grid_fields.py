import numpy as np
import pytest

from utils.exceptions import GridError
from utils.grid_fields import (
    SQRT2,
    GridShape,
    QPField,
    apply_rank4,
    field_inner,
    field_mean,
    mandel_to_tensor,
    stiffness_to_mandel,
    tensor_to_mandel,
)
from utils.materials import plane_strain_stiffness


def test_grid_shape_derived_sizes():
    grid = GridShape(4, 8, lx=2.0, ly=4.0, nq=2)
    assert grid.hx == 0.5
    assert grid.hy == 0.5
    assert grid.n_qp == 64
    assert grid.qp_weight == pytest.approx(8.0 / 64)


@pytest.mark.parametrize("kwargs", [
    {"nx": 1, "ny": 4},
    {"nx": 4, "ny": 4, "lx": 0.0},
    {"nx": 4, "ny": 4, "nq": 0},
])
def test_grid_shape_rejects_degenerate_grids(kwargs):
    with pytest.raises(GridError):
        GridShape(**kwargs)


def test_grid_shape_dict_round_trip():
    grid = GridShape(5, 7, 0.5, 0.7, 2)
    assert GridShape.from_dict(grid.to_dict()) == grid


def test_pixel_centers_layout():
    x, y = GridShape(4, 2).pixel_centers()
    assert x.shape == (2, 4)
    assert x[0, 0] == pytest.approx(0.125)
    assert y[1, 0] == pytest.approx(0.75)


def test_uniform_infers_rank():
    grid = GridShape(3, 3)
    assert QPField.uniform(grid, [1.0, 2.0, 3.0]).rank == 2
    assert QPField.uniform(grid, np.eye(3)).rank == 4
    with pytest.raises(GridError):
        QPField.uniform(grid, [1.0, 2.0])


def test_field_shape_mismatch():
    a = QPField.zeros(GridShape(3, 3))
    b = QPField.zeros(GridShape(4, 3))
    with pytest.raises(GridError):
        a + b
    with pytest.raises(GridError):
        QPField(GridShape(3, 3), 2, np.zeros((3, 3, 1, 2)))


def test_field_mean_of_uniform_field():
    value = np.array([1e-3, -2e-3, 5e-4])
    f = QPField.uniform(GridShape(6, 4, nq=2), value)
    np.testing.assert_allclose(field_mean(f), value, rtol=1e-14)


def test_field_mean_rejects_nan():
    f = QPField.zeros(GridShape(3, 3))
    f.data[1, 1, 0, 2] = np.nan
    with pytest.raises(GridError):
        field_mean(f)


def test_field_inner_is_area_weighted():
    grid = GridShape(4, 4, lx=2.0, ly=3.0, nq=2)
    a = QPField.uniform(grid, [1.0, 0.0, 0.0])
    b = QPField.uniform(grid, [2.0, 5.0, 0.0])
    assert field_inner(a, b) == pytest.approx(2.0 * 6.0)


def test_mandel_contraction_matches_tensor_contraction(rng):
    s = rng.standard_normal((2, 2))
    s = s + s.T
    e = rng.standard_normal((2, 2))
    e = e + e.T
    assert np.dot(tensor_to_mandel(s), tensor_to_mandel(e)) == pytest.approx(np.sum(s * e))
    np.testing.assert_allclose(mandel_to_tensor(tensor_to_mandel(s)), s, atol=1e-15)


def test_shear_component_scaling():
    t = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(tensor_to_mandel(t), [0.0, 0.0, SQRT2])


def test_stiffness_to_mandel_isotropic():
    E, nu = 2.0, 0.25
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    delta = np.eye(2)
    c4 = (lam * np.einsum("ij,kl->ijkl", delta, delta)
          + mu * (np.einsum("ik,jl->ijkl", delta, delta) + np.einsum("il,jk->ijkl", delta, delta)))
    np.testing.assert_allclose(stiffness_to_mandel(c4), plane_strain_stiffness(E, nu), atol=1e-14)


def test_apply_rank4_per_point(rng):
    grid = GridShape(3, 2, nq=2)
    mats = rng.standard_normal((2, 3, 2, 3, 3))
    b = QPField(grid, 4, mats.reshape(2, 3, 2, 9))
    eps = QPField(grid, 2, rng.standard_normal((2, 3, 2, 3)))
    out = apply_rank4(b, eps)
    np.testing.assert_allclose(out.data[1, 2, 1], mats[1, 2, 1] @ eps.data[1, 2, 1])
    with pytest.raises(GridError):
        apply_rank4(eps, eps)
