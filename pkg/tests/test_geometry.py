import numpy as np
import pytest

from mftd.geometry import LBracketGeometry, MaterialModel, boundary_conditions, build_lbracket


def test_desk_grid_counts(desk_grid):
    g = desk_grid
    assert (g.nx, g.ny) == (50, 50)
    assert g.n_elements == 50 * 50 - 30 * 30
    assert (~g.design).sum() == 5  # 0.2 x 0.04 strip
    assert g.n_dofs == 2 * g.n_nodes


def test_fine_scale_counts():
    g = build_lbracket(LBracketGeometry(), 0.01)
    assert g.n_elements == 25600
    assert (~g.design).sum() == 80


def test_active_cells_inside_shape(desk_grid):
    g = desk_grid
    assert np.all(g.geometry.contains(g.centers[:, 0], g.centers[:, 1]))
    assert np.all(g.active.sum() == g.n_elements)


def test_nondesign_strip_location(desk_grid):
    g = desk_grid
    c = g.centers[~g.design]
    assert np.all(c[:, 0] > 2.0 - 0.2) and np.all((c[:, 1] > 0.76) & (c[:, 1] < 0.8))


def test_connectivity_counter_clockwise(desk_grid):
    g = desk_grid
    xy = g.nodes[g.connectivity]
    d1 = xy[:, 1] - xy[:, 0]
    d2 = xy[:, 3] - xy[:, 0]
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    assert np.allclose(cross, g.element_size**2)


def test_image_round_trip(desk_grid, rng):
    v = rng.random(desk_grid.n_elements)
    img = desk_grid.to_image(v, fill=-1)
    assert img.shape == (50, 50)
    assert np.all(img[30:, 30:] == -1)
    assert np.array_equal(desk_grid.from_image(img), v)


def test_element_at(desk_grid):
    k = desk_grid.element_at(0.79, 0.79)
    assert np.allclose(desk_grid.centers[k], (0.78, 0.78))
    assert desk_grid.element_at(1.5, 1.5) == -1


def test_boundary_conditions(desk_grid):
    bc = boundary_conditions(desk_grid, force=2.5)
    assert len(bc.fixed_nodes) == 21
    assert np.allclose(desk_grid.nodes[bc.fixed_nodes][:, 1], 2.0)
    assert np.allclose(desk_grid.nodes[bc.load_nodes][:, 1], 0.8)
    assert np.isclose(bc.force.sum(), -2.5)
    assert np.all(bc.force[0::2] == 0)
    assert len(bc.free_dofs) + len(bc.fixed_dofs) == desk_grid.n_dofs


def test_nondivisible_resolution_names_dimension():
    with pytest.raises(ValueError, match="leg_width"):
        build_lbracket(LBracketGeometry(leg_width=0.81), 0.04)


@pytest.mark.parametrize("kw", [dict(leg_width=0), dict(leg_width=3), dict(load_length=2.0),
                                dict(nondesign_depth=0.9)])
def test_geometry_validation(kw):
    with pytest.raises(ValueError):
        LBracketGeometry(**kw)


def test_simp_modulus_limits():
    m = MaterialModel()
    assert m.simp_modulus(1.0) == m.E0
    assert m.simp_modulus(0.0) == m.Emin
    r = np.linspace(0.1, 0.9, 5)
    h = 1e-7
    fd = (m.simp_modulus(r + h) - m.simp_modulus(r - h)) / (2 * h)
    assert np.allclose(m.simp_modulus_derivative(r), fd, rtol=1e-6)


@pytest.mark.parametrize("kw", [dict(Emin=0), dict(nu=0.5), dict(p=0.5), dict(q=0)])
def test_material_validation(kw):
    with pytest.raises(ValueError):
        MaterialModel(**kw)
