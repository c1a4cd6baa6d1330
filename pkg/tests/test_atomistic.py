"""Full-atomistic reference: energies, equilibria, eigenmodes."""

import numpy as np
import pytest
from fractions import Fraction

from hqclab.atomistic import (
    EquilibriumProblem,
    energy_gradient,
    energy_hessian,
    residual_norm,
    slowest_eigenmode,
    solve_equilibrium,
    total_energy,
)
from hqclab.lattice import (
    LatticeField,
    average,
    chain_lattice,
    l2_norm,
    zeros_field,
)
from hqclab.potential import LinearSpring1D, make_dynamics_model


def spring_problem(eps, psi, force=None):
    model = LinearSpring1D(psi)
    lat = chain_lattice(eps, model.m)
    return EquilibriumProblem(lat, model, force=force), lat


def test_zero_displacement_zero_energy():
    prob, lat = spring_problem(Fraction(1, 8), (1.0, 3.0))
    assert total_energy(prob, zeros_field(lat)) == 0.0


def test_alternating_displacement_energy():
    # m=2, eps=1/2, psi=(1,3), u alternating 0/0.05 on the 4 sites: every bond
    # gap is +-0.05/eps = +-0.1, so E = <psi * 0.01 / 2> = (1+3+1+3)*0.005/4
    prob, lat = spring_problem(Fraction(1, 2), (1.0, 3.0))
    u = LatticeField(lat, np.array([[0.0], [0.05], [0.0], [0.05]]))
    assert total_energy(prob, u) == pytest.approx(0.01)


def test_translation_invariance():
    rng = np.random.default_rng(0)
    prob, lat = spring_problem(Fraction(1, 8), (1.0, 2.0, 5.0))
    u = LatticeField(lat, rng.standard_normal((lat.n_sites, 1)))
    shifted = LatticeField(lat, u.values + 0.37)
    assert total_energy(prob, u) == pytest.approx(total_energy(prob, shifted), rel=1e-12)


def test_gradient_zero_mean_and_fd():
    rng = np.random.default_rng(1)
    for model in (LinearSpring1D((1.0, 3.0)), make_dynamics_model().model):
        lat = chain_lattice(Fraction(1, 4), model.m)
        prob = EquilibriumProblem(lat, model)
        u = LatticeField(lat, 0.02 * rng.standard_normal((lat.n_sites, 1)))
        g = energy_gradient(prob, u)
        assert np.all(np.abs(average(g)) < 1e-12)
        step = 1e-5
        for k in (0, 3, lat.n_sites - 1):
            up = u.copy()
            um = u.copy()
            up.values[k, 0] += step
            um.values[k, 0] -= step
            fd = (total_energy(prob, up) - total_energy(prob, um)) / (2 * step)
            # Riesz representer: dE/du(x) = g(x)/n_sites
            exact = g.values[k, 0] / lat.n_sites
            assert fd == pytest.approx(exact, rel=1e-6, abs=1e-10)


def test_hessian_symmetric_with_constant_kernel():
    prob, lat = spring_problem(Fraction(1, 8), (1.0, 3.0))
    H = energy_hessian(prob, zeros_field(lat))
    dense = np.asarray(H.todense())
    assert np.allclose(dense, dense.T, atol=1e-12)
    assert np.allclose(dense @ np.ones(lat.n_sites), 0.0, atol=1e-12)


def test_equilibrium_without_force_is_zero():
    prob, lat = spring_problem(Fraction(1, 8), (2.0, 1.0))
    u = solve_equilibrium(prob)
    assert np.allclose(u.values, 0.0, atol=1e-12)


def _dense_spring_solve(lat, psi, f):
    """Independent oracle: assemble the spring-chain stiffness by hand and
    solve with a Lagrange multiplier for the zero mean."""
    n = lat.n_sites
    eps = lat.eps_float
    K = np.zeros((n, n))
    order = np.argsort(lat.site_positions().ravel())
    for idx in range(n):
        i = order[idx]
        j = order[(idx + 1) % n]
        k = psi[idx % len(psi)] / eps**2
        K[i, i] += k
        K[j, j] += k
        K[i, j] -= k
        K[j, i] -= k
    # <dE(u), v> uses the averaged pairing; the pointwise force equation is
    # K u = f with K the Riesz Hessian
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = K
    A[:n, n] = 1.0
    A[n, :n] = 1.0
    rhs = np.concatenate([f.values.ravel(), [0.0]])
    sol = np.linalg.solve(A, rhs)
    return sol[:n]


def test_equilibrium_matches_dense_oracle():
    rng = np.random.default_rng(7)
    psi = (1.0, 3.0)
    model = LinearSpring1D(psi)
    lat = chain_lattice(Fraction(1, 16), 2)  # 32 sites
    fvals = rng.standard_normal((lat.n_sites, 1))
    fvals -= fvals.mean(axis=0)
    f = LatticeField(lat, fvals)
    prob = EquilibriumProblem(lat, model, force=f)
    u = solve_equilibrium(prob, tol=1e-12)
    expected = _dense_spring_solve(lat, psi, f)
    assert np.max(np.abs(u.values.ravel() - expected)) < 1e-10


def test_lj_equilibrium_residual():
    setup = make_dynamics_model()
    lat = chain_lattice(Fraction(1, 16), 2)
    prob = EquilibriumProblem(lat, setup.model, masses=setup.mass_field(lat))
    rng = np.random.default_rng(5)
    guess = LatticeField(lat, 1e-3 * rng.standard_normal((lat.n_sites, 1)))
    u = solve_equilibrium(prob, initial_guess=guess, tol=1e-10)
    assert residual_norm(prob, u) <= 1e-10 * (1 + 0)
    assert np.all(np.abs(average(u)) < 1e-12)


def test_quadratic_solve_guess_independent():
    rng = np.random.default_rng(9)
    psi = (1.0, 4.0)
    model = LinearSpring1D(psi)
    lat = chain_lattice(Fraction(1, 8), 2)
    fvals = rng.standard_normal((lat.n_sites, 1))
    fvals -= fvals.mean(axis=0)
    prob = EquilibriumProblem(lat, model, force=LatticeField(lat, fvals))
    u1 = solve_equilibrium(prob, tol=1e-12)
    guess = LatticeField(lat, rng.standard_normal((lat.n_sites, 1)))
    u2 = solve_equilibrium(prob, initial_guess=guess, tol=1e-12)
    assert np.allclose(u1.values, u2.values, atol=1e-11)


def test_nonzero_mean_force_rejected():
    model = LinearSpring1D((1.0,))
    lat = chain_lattice(Fraction(1, 4), 1)
    bad = LatticeField(lat, np.ones((lat.n_sites, 1)))
    with pytest.raises(ValueError):
        EquilibriumProblem(lat, model, force=bad)


def test_homogeneous_chain_eigenmode():
    # m=1 chain with constant psi and mass: smallest nonzero eigenvalue of the
    # periodic difference operator is 4 psi sin^2(pi eps) / (eps^2 M)
    psi = 2.0
    M = 1.5
    model = LinearSpring1D((psi,))
    lat = chain_lattice(Fraction(1, 16), 1)
    prob = EquilibriumProblem(lat, model, masses=np.full(lat.n_sites, M))
    u_eq = solve_equilibrium(prob)
    mode, lam = slowest_eigenmode(prob, u_eq)
    eps = lat.eps_float
    expected = 4 * psi * np.sin(np.pi * eps) ** 2 / (eps**2 * M)
    assert lam == pytest.approx(expected, rel=1e-10)
    assert l2_norm(mode) == pytest.approx(1.0)
    # mass-orthogonal to translations
    assert abs(np.sum(prob.masses * mode.values.ravel())) < 1e-8


def test_eigenmode_rayleigh_minimality():
    setup = make_dynamics_model()
    lat = chain_lattice(Fraction(1, 8), 2)
    prob = EquilibriumProblem(lat, setup.model, masses=setup.mass_field(lat))
    u_eq = solve_equilibrium(prob)
    mode, lam = slowest_eigenmode(prob, u_eq)
    H = np.asarray(energy_hessian(prob, u_eq).todense())
    M = np.diag(prob.masses)
    rng = np.random.default_rng(17)
    for _ in range(20):
        v = rng.standard_normal(lat.n_sites)
        v -= (prob.masses * v).sum() / prob.masses.sum()  # drop the translation
        rq = (v @ H @ v) / (v @ M @ v)
        assert lam <= rq + 1e-10
    assert lam > 0


def test_dynamics_equilibrium_stable():
    setup = make_dynamics_model()
    lat = chain_lattice(Fraction(1, 8), 2)
    prob = EquilibriumProblem(lat, setup.model, masses=setup.mass_field(lat))
    u_eq = solve_equilibrium(prob)
    _, lam = slowest_eigenmode(prob, u_eq)
    assert lam > 0
