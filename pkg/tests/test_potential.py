"""Material models: energies, derivatives, and the two model factories."""

import numpy as np
import pytest

from hqclab.potential import (
    LennardJonesLaw,
    LinearSpring1D,
    PotentialError,
    RandomBond2D,
    external_force_2d,
    make_dynamics_model,
    make_stochastic_model,
)


def test_spring_site_energy_and_derivatives():
    model = LinearSpring1D((2.0,))
    assert model.site_energy(0, [0.3]) == pytest.approx(0.09)
    (g,) = model.site_gradient(0, [0.3])
    assert g == pytest.approx([0.6])
    blocks = model.site_hessian(0, [0.3])
    assert np.allclose(blocks[0][0], [[2.0]])


def test_spring_zero_gap_energy():
    model = LinearSpring1D((1.0, 3.0))
    assert model.site_energy(1, [0.0]) == 0.0


def test_lj_bond_minimum():
    # single bond with s = 1, ell = 1 at its equilibrium length: energy -1,
    # force zero, curvature positive
    law = LennardJonesLaw(np.array(1.0), np.array(1.0), scale=1.0)
    r = np.array([[1.0]])
    g = np.array([[0.0]])
    assert law.energy(g, r)[0] == pytest.approx(-1.0)
    assert law.grad(g, r)[0, 0] == pytest.approx(0.0, abs=1e-14)
    assert law.hess(g, r)[0, 0, 0] > 0


def test_quadratic_scaling():
    model = LinearSpring1D((1.0, 3.0))
    for lam in (0.5, 2.0, -1.3):
        assert model.site_energy(0, [lam * 0.2]) == pytest.approx(lam**2 * model.site_energy(0, [0.2]))


def _fd_gradient(model, alpha, gaps, cell=0, step=1e-5):
    gaps = [np.atleast_1d(np.asarray(g, float)) for g in gaps]
    out = []
    for j in range(len(gaps)):
        gj = np.zeros_like(gaps[j])
        for k in range(len(gaps[j])):
            plus = [g.copy() for g in gaps]
            minus = [g.copy() for g in gaps]
            plus[j][k] += step
            minus[j][k] -= step
            gj[k] = (model.site_energy(alpha, plus, cell) - model.site_energy(alpha, minus, cell)) / (2 * step)
        out.append(gj)
    return out


def _models_for_consistency():
    rng = np.random.default_rng(42)
    spring = LinearSpring1D((1.0, 3.0))
    lj = make_dynamics_model().model
    rb = RandomBond2D(4, seed=9)
    cases = []
    for alpha in range(2):
        gaps = [0.05 * rng.standard_normal(1) for _ in spring.bond_specs(alpha)]
        cases.append((spring, alpha, gaps, 0))
    for alpha in range(2):
        gaps = [0.03 * rng.standard_normal(1) for _ in lj.bond_specs(alpha)]
        cases.append((lj, alpha, gaps, 0))
    gaps = [0.1 * rng.standard_normal(2) for _ in rb.bond_specs(0, 5)]
    cases.append((rb, 0, gaps, 5))
    return cases


def test_gradient_matches_finite_differences():
    for model, alpha, gaps, cell in _models_for_consistency():
        exact = model.site_gradient(alpha, gaps, cell)
        approx = _fd_gradient(model, alpha, gaps, cell)
        for a, b in zip(exact, approx):
            scale = max(np.max(np.abs(a)), 1e-3)
            assert np.allclose(a, b, rtol=0, atol=1e-6 * scale)


def test_hessian_matches_gradient_differences():
    step = 1e-5
    for model, alpha, gaps, cell in _models_for_consistency():
        blocks = model.site_hessian(alpha, gaps, cell)
        k = len(gaps)
        d = len(np.atleast_1d(gaps[0]))
        for j in range(k):
            for comp in range(d):
                plus = [np.array(g, float) for g in gaps]
                minus = [np.array(g, float) for g in gaps]
                plus[j][comp] += step
                minus[j][comp] -= step
                gp = model.site_gradient(alpha, plus, cell)
                gm = model.site_gradient(alpha, minus, cell)
                for i in range(k):
                    fd = (gp[i] - gm[i]) / (2 * step)
                    scale = max(np.max(np.abs(blocks[i][j])), 1.0)
                    assert np.allclose(blocks[i][j][:, comp], fd, atol=1e-5 * scale)


def test_hessian_block_symmetry():
    for model, alpha, gaps, cell in _models_for_consistency():
        blocks = model.site_hessian(alpha, gaps, cell)
        k = len(blocks)
        for i in range(k):
            for j in range(k):
                assert np.allclose(blocks[i][j], blocks[j][i].T, atol=1e-12)


def test_lj_collapse_raises():
    law = LennardJonesLaw(np.array(1.0), np.array(1.0), scale=1.0)
    with pytest.raises(PotentialError):
        law.energy(np.array([[-1.0]]), np.array([[1.0]]))


def test_gap_count_mismatch():
    model = LinearSpring1D((1.0, 2.0))
    with pytest.raises(PotentialError):
        model.site_energy(0, [0.1, 0.2])


def test_dynamics_model_parameters():
    setup = make_dynamics_model()
    model = setup.model
    # integer sites (species 0): strong stiff short bonds, heavy mass
    assert model.params.s == (1.6, 0.4)
    assert model.params.ell == (0.99, 1.01)
    assert setup.species_masses == (2.0, 1.0)
    # all sites within 3 lattice units at spacing 1/2: 12 offsets
    assert len(model.bond_specs(0)) == 12
    assert len(model.bond_specs(1)) == 12
    rs = sorted(float(s.offset.r_float[0]) for s in model.bond_specs(0))
    assert rs == [x / 2 for x in range(-6, 0)] + [x / 2 for x in range(1, 7)]


def test_dynamics_mass_field():
    from fractions import Fraction
    from hqclab.lattice import chain_lattice

    setup = make_dynamics_model()
    lat = chain_lattice(Fraction(1, 4), 2)
    masses = setup.mass_field(lat)
    pos = lat.site_positions().ravel()
    integer_sites = np.isclose(np.mod(pos / lat.eps_float, 1.0), 0.0)
    assert np.all(masses[integer_sites] == 2.0)
    assert np.all(masses[~integer_sites] == 1.0)


def test_stochastic_force_value():
    # before mean subtraction: f(1/4, 1/4) = 10 e^{-1} (1, 1)
    val = external_force_2d(np.array([[0.25, 0.25]]))[0]
    assert np.allclose(val, 10 * np.exp(-1.0) * np.ones(2), atol=1e-14)


def test_stochastic_model_zero_mean_force():
    _, _, f = make_stochastic_model(8, seed=3)
    assert np.all(np.abs(f.values.mean(axis=0)) <= 1e-12 * np.max(np.abs(f.values)))


def test_stochastic_model_reproducible():
    _, m1, f1 = make_stochastic_model(8, seed=123)
    _, m2, f2 = make_stochastic_model(8, seed=123)
    assert np.array_equal(m1.psi, m2.psi)
    assert np.array_equal(f1.values, f2.values)
    _, m3, _ = make_stochastic_model(8, seed=124)
    assert not np.array_equal(m1.psi, m3.psi)


def test_stochastic_bond_ranges():
    model = RandomBond2D(16, seed=0)
    axis = model.psi[:, :2]
    diag = model.psi[:, 2:]
    assert axis.min() >= 0.5 and axis.max() <= 10.0
    assert diag.min() >= 0.1 and diag.max() <= 5.0


def test_stochastic_requires_power_of_two():
    with pytest.raises(PotentialError):
        make_stochastic_model(12, seed=0)
