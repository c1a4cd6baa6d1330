"""Multilattice geometry and discrete calculus."""

import numpy as np
import pytest
from fractions import Fraction

from hqclab.lattice import (
    LatticeError,
    LatticeField,
    Multilattice,
    average,
    chain_lattice,
    discrete_derivative,
    discrete_norms,
    inner_product,
    is_zero_mean,
    project_zero_mean,
    square_lattice,
    translate,
    zeros_field,
)


def test_two_species_chain_sites():
    # eps = 1/4, shifts (0, 1/2): sites at all multiples of 1/8
    lat = Multilattice(1, Fraction(1, 4), [(0,), (Fraction(1, 2),)])
    assert lat.n_sites == 8
    pos = np.sort(lat.site_positions().ravel())
    assert np.allclose(pos, np.arange(8) / 8)


def test_simple_lattice_sites():
    lat = Multilattice(1, Fraction(1, 4), [(0,)])
    assert lat.n_sites == 4
    assert np.allclose(np.sort(lat.site_positions().ravel()), np.arange(4) / 4)


def test_square_lattice_sites():
    lat = Multilattice(2, Fraction(1, 2), [(0, 0)])
    assert lat.n_sites == 4
    pos = {tuple(p) for p in lat.site_positions()}
    assert pos == {(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)}


def test_invalid_constructions():
    with pytest.raises(LatticeError):
        Multilattice(1, 0.3, [(0,)])  # 1/eps not integral
    with pytest.raises(LatticeError):
        Multilattice(1, Fraction(1, 2), [(0,), (0,)])  # duplicate shifts
    with pytest.raises(LatticeError):
        Multilattice(1, Fraction(1, 2), [(0,), (Fraction(3, 2),)])  # outside [0,1)
    with pytest.raises(LatticeError):
        Multilattice(1, Fraction(1, 2), [(Fraction(1, 2),), (0,)])  # p_0 != 0


def test_offset_resolution_and_errors():
    lat = chain_lattice(Fraction(1, 4), 2)
    off = lat.resolve_offset(0, Fraction(1, 2))
    assert off.species_target == 1
    off = lat.resolve_offset(1, Fraction(1, 2))
    assert off.species_target == 0 and off.cell_shift == (1,)
    with pytest.raises(LatticeError):
        lat.resolve_offset(0, Fraction(1, 3))


def test_derivative_of_constant_field():
    lat = chain_lattice(Fraction(1, 8), 2)
    u = LatticeField(lat, np.full((lat.n_sites, 1), 0.7))
    du = discrete_derivative(u, Fraction(1, 2))
    assert np.allclose(du.values, 0.0)


def test_derivative_hand_value():
    # eps = 1/2, u = (0, 0.1) on sites (0, 1/2), r = 1: wrap gives (0.2, -0.2)
    lat = Multilattice(1, Fraction(1, 2), [(0,)])
    u = LatticeField(lat, np.array([[0.0], [0.1]]))
    du = discrete_derivative(u, 1)
    assert np.allclose(du.values.ravel(), [0.2, -0.2])


def test_derivative_of_affine_interior():
    lat = chain_lattice(Fraction(1, 16), 1)
    pos = lat.site_positions()
    u = LatticeField(lat, 0.3 * pos)
    du = discrete_derivative(u, 1)
    interior = pos.ravel() + lat.eps_float < 1.0
    assert np.allclose(du.values.ravel()[interior], 0.3)


def test_average_and_inner_product():
    lat = chain_lattice(Fraction(1, 4), 1)
    c = LatticeField(lat, np.full((4, 1), 2.5))
    assert np.allclose(average(c), [2.5])
    z = project_zero_mean(LatticeField(lat, np.random.default_rng(0).standard_normal((4, 1))))
    assert abs(inner_product(z, c)) < 1e-14
    ind = zeros_field(lat)
    ind.values[2, 0] = 1.0
    assert inner_product(ind, ind) == pytest.approx(0.25)


def test_project_zero_mean():
    lat = Multilattice(1, Fraction(1, 2), [(0,)])
    u = LatticeField(lat, np.array([[1.0], [3.0]]))
    v = project_zero_mean(u)
    assert np.allclose(v.values.ravel(), [-1.0, 1.0])
    assert np.allclose(project_zero_mean(v).values, v.values)
    assert is_zero_mean(v)


def test_discrete_norms():
    lat = Multilattice(1, Fraction(1, 2), [(0,)])
    zero = zeros_field(lat)
    assert discrete_norms(zero) == (0.0, 0.0)
    c = LatticeField(lat, np.full((2, 1), -1.5))
    l2, h1 = discrete_norms(c)
    assert l2 == pytest.approx(1.5) and h1 == pytest.approx(1.5)
    u = LatticeField(lat, np.array([[0.0], [1.0]]))
    l2, h1 = discrete_norms(u)
    assert l2 == pytest.approx(np.sqrt(0.5))
    assert h1 == pytest.approx(np.sqrt(0.5 + 4.0))


@pytest.mark.parametrize("m", [1, 2, 3])
def test_summation_by_parts(m):
    # index shift over the periodic sum: <D_r u, v> = <u, D_{-r} v>; the
    # reversed offset is the adjoint of D_r (it approximates -r d/dx)
    rng = np.random.default_rng(m)
    lat = chain_lattice(Fraction(1, 8), m)
    u = LatticeField(lat, rng.standard_normal((lat.n_sites, 1)))
    v = LatticeField(lat, rng.standard_normal((lat.n_sites, 1)))
    r = Fraction(1, m)
    lhs = inner_product(discrete_derivative(u, r), v)
    rhs = inner_product(u, discrete_derivative(v, -r))
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_derivative_commutes_with_translation():
    rng = np.random.default_rng(3)
    lat = chain_lattice(Fraction(1, 8), 2)
    u = LatticeField(lat, rng.standard_normal((lat.n_sites, 1)))
    r = Fraction(1, 2)
    a = discrete_derivative(translate(u, [3]), r)
    b = translate(discrete_derivative(u, r), [3])
    assert np.allclose(a.values, b.values, atol=1e-14)


def test_full_and_partial_derivative_identity():
    # two-variable fields u(x, y) on M x P with separable random data; the full
    # derivative on the trace y = x/eps equals D_{x,r} T_{y,r} + (1/eps) D_{y,r}
    rng = np.random.default_rng(11)
    m = 2
    lat = chain_lattice(Fraction(1, 8), m)
    eps = lat.eps_float
    n = lat.n_sites
    gx = rng.standard_normal(n)  # g(x) on lattice sites
    py = rng.standard_normal(m)  # p(y) on the periodic cell (indexed by species)
    species = lat.site_species()
    u = gx[:, None] * py[None, :]  # u(x_i, y_j)

    r = Fraction(1, 2)
    # neighbor index table for the physical step x -> x + eps*r
    nbr = np.empty(n, dtype=int)
    for alpha in range(m):
        off = lat.resolve_offset(alpha, r)
        nbr[lat.species_sites(alpha)] = lat.neighbor_sites(alpha, off)
    yshift = np.array([lat.resolve_offset(a, r).species_target for a in range(m)])

    trace = u[np.arange(n), species]
    full = (u[nbr, species[nbr]] - trace) / eps
    # D_{x,r} T_{y,r} u: step x, with y already shifted by r
    dx_ty = (u[nbr, yshift[species]] - u[np.arange(n), yshift[species]]) / eps
    # (1/eps) D_{y,r} u: undivided difference in y, scaled
    dy = (u[np.arange(n), yshift[species]] - trace) / eps
    assert np.allclose(full, dx_ty + dy, atol=1e-12)


def test_2d_norm_offsets():
    lat = square_lattice(4)
    rng = np.random.default_rng(5)
    u = LatticeField(lat, rng.standard_normal((lat.n_sites, 2)))
    l2, h1 = discrete_norms(u)
    assert h1 >= l2 > 0.0


def test_build_multilattice_alias():
    from hqclab.lattice import build_multilattice

    lat = build_multilattice(1, Fraction(1, 4), [(0,), (Fraction(1, 2),)])
    assert lat.n_sites == 8
