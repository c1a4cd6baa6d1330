"""Site interaction potentials with analytic first and second derivatives.

Three material models are provided:

* ``LinearSpring1D``   -- nearest-neighbor quadratic springs on a 1D chain
  with m species per period, V(g) = psi * g^2 / 2 per bond.
* ``LennardJones1D``   -- finite-range Lennard-Jones chain with per-species
  strength/equilibrium-distance parameters.
* ``RandomBond2D``     -- 2D quadratic bond network with per-site random bond
  strengths on the offsets (1,0), (0,1), (1,1), (-1,1).

All models are pairwise: the site energy is a sum over the neighborhood of
per-bond terms, each a function of the single gap D_r u.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .lattice import (
    LatticeField,
    Multilattice,
    NeighborOffset,
    chain_lattice,
    square_lattice,
)


class PotentialError(ValueError):
    """Invalid model parameters or inadmissible bond configuration."""


# ------------------------------------------------------------------- bond laws


class SpringLaw:
    """Quadratic bond energy psi * |g|^2 / 2 with per-bond coefficient psi."""

    is_quadratic = True

    def __init__(self, psi: np.ndarray) -> None:
        self.psi = np.asarray(psi, dtype=float)

    def energy(self, gaps: np.ndarray, rvec: np.ndarray) -> np.ndarray:
        return 0.5 * self.psi * np.sum(gaps**2, axis=-1)

    def grad(self, gaps: np.ndarray, rvec: np.ndarray) -> np.ndarray:
        return self.psi[..., None] * gaps

    def hess(self, gaps: np.ndarray, rvec: np.ndarray) -> np.ndarray:
        d = gaps.shape[-1]
        out = np.zeros(gaps.shape[:-1] + (d, d))
        out[...] = np.eye(d)
        return self.psi[..., None, None] * out


class LennardJonesLaw:
    """Bond energy s * (-2 (b/l)^-6 + (b/l)^-12) with b = scale * |r + g|.

    ``scale`` converts the lattice-unit bond vector to the units in which the
    equilibrium distances ``ell`` are expressed (the finest inter-site spacing
    for a chain with m species, so the nearest-neighbor bond has b = 1).
    """

    is_quadratic = False

    def __init__(self, s: np.ndarray, ell: np.ndarray, scale: float = 1.0) -> None:
        self.s = np.asarray(s, dtype=float)
        self.ell = np.asarray(ell, dtype=float)
        self.scale = float(scale)

    def _bond_vectors(self, gaps: np.ndarray, rvec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vec = self.scale * (rvec + gaps)
        b = np.sqrt(np.sum(vec**2, axis=-1))
        if np.any(b <= 0.0):
            raise PotentialError("bond length collapsed to zero")
        return vec, b

    def energy(self, gaps: np.ndarray, rvec: np.ndarray) -> np.ndarray:
        _, b = self._bond_vectors(gaps, rvec)
        q = self.ell / b
        return self.s * (-2.0 * q**6 + q**12)

    def _phi_derivs(self, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        l6 = self.ell**6
        l12 = l6**2
        dphi = 12.0 * self.s * (l6 * b**-7 - l12 * b**-13)
        d2phi = self.s * (-84.0 * l6 * b**-8 + 156.0 * l12 * b**-14)
        return dphi, d2phi

    def grad(self, gaps: np.ndarray, rvec: np.ndarray) -> np.ndarray:
        vec, b = self._bond_vectors(gaps, rvec)
        dphi, _ = self._phi_derivs(b)
        # d/dg phi(|scale*(r+g)|) = phi'(b) * scale * n,  n the unit bond vector
        return (dphi * self.scale / b)[..., None] * vec

    def hess(self, gaps: np.ndarray, rvec: np.ndarray) -> np.ndarray:
        vec, b = self._bond_vectors(gaps, rvec)
        dphi, d2phi = self._phi_derivs(b)
        n = vec / b[..., None]
        d = gaps.shape[-1]
        eye = np.eye(d)
        nn = n[..., :, None] * n[..., None, :]
        radial = (d2phi * self.scale**2)[..., None, None] * nn
        tangential = (dphi * self.scale**2 / b)[..., None, None] * (eye - nn)
        return radial + tangential


# ----------------------------------------------------------------- bond specs


@dataclass(frozen=True)
class BondSpec:
    """One bond class of a species: an offset plus its (vectorized) bond law."""

    offset: NeighborOffset
    law: object


class InteractionModel:
    """Base class: species-resolved pairwise site potentials.

    Concrete models define ``bond_specs(alpha)``: the interaction neighborhood
    of species alpha together with one bond law per offset.  The site energy is
    the sum of the per-bond energies over the neighborhood; gradients and
    Hessians follow bond by bond (the Hessian is block diagonal in the offsets
    for pairwise interactions).
    """

    d: int
    m: int
    is_quadratic: bool

    def shifts(self) -> list:
        raise NotImplementedError

    def bond_specs(self, alpha: int, cell=0) -> list[BondSpec]:
        raise NotImplementedError

    def lattice(self, eps) -> Multilattice:
        return Multilattice(self.d, eps, self.shifts())

    def neighborhood(self, alpha: int) -> list[NeighborOffset]:
        return [spec.offset for spec in self.bond_specs(alpha)]

    # --- single-site evaluation (gaps: one vector per neighborhood offset) ---

    def _site_gaps(self, alpha: int, gaps) -> list[np.ndarray]:
        specs = self.bond_specs(alpha)
        gaps = [np.atleast_1d(np.asarray(g, dtype=float)) for g in gaps]
        if len(gaps) != len(specs):
            raise PotentialError(
                f"species {alpha} expects {len(specs)} gaps, got {len(gaps)}"
            )
        return gaps

    def site_energy(self, alpha: int, gaps, cell: int = 0) -> float:
        total = 0.0
        for spec, g in zip(self.bond_specs(alpha, cell), self._site_gaps(alpha, gaps)):
            total += float(spec.law.energy(g[None, :], spec.offset.r_float[None, :])[0])
        return total

    def site_gradient(self, alpha: int, gaps, cell: int = 0) -> list[np.ndarray]:
        out = []
        for spec, g in zip(self.bond_specs(alpha, cell), self._site_gaps(alpha, gaps)):
            out.append(spec.law.grad(g[None, :], spec.offset.r_float[None, :])[0])
        return out

    def site_hessian(self, alpha: int, gaps, cell: int = 0) -> list[list[np.ndarray]]:
        """Blocks V''_{r,rho}; off-diagonal blocks vanish for pairwise models."""
        specs = self.bond_specs(alpha, cell)
        gaps = self._site_gaps(alpha, gaps)
        k = len(specs)
        d = self.d
        blocks = [[np.zeros((d, d)) for _ in range(k)] for _ in range(k)]
        for j, (spec, g) in enumerate(zip(specs, gaps)):
            blocks[j][j] = spec.law.hess(g[None, :], spec.offset.r_float[None, :])[0]
        return blocks


class LinearSpring1D(InteractionModel):
    """1D chain of ideal springs, V(D_r u; x) = psi(x) (D_r u)^2 / 2, r = 1/m.

    ``psi[alpha]`` is the coefficient of the bond owned by species alpha (the
    bond from the site at eps*alpha/m to the next site to the right).
    """

    d = 1

    def __init__(self, psi: Sequence[float]) -> None:
        self.psi = tuple(float(p) for p in psi)
        if any(p <= 0 for p in self.psi):
            raise PotentialError("spring coefficients must be positive")
        self.m = len(self.psi)
        self.is_quadratic = True
        lat = chain_lattice(1, self.m)
        self._specs = [
            [BondSpec(lat.resolve_offset(alpha, Fraction(1, self.m)), SpringLaw(np.array(self.psi[alpha])))]
            for alpha in range(self.m)
        ]

    def shifts(self) -> list:
        return [(Fraction(k, self.m),) for k in range(self.m)]

    def bond_specs(self, alpha: int, cell: int = 0) -> list[BondSpec]:
        return self._specs[alpha]


@dataclass(frozen=True)
class LennardJonesParams:
    """Per-species Lennard-Jones parameters and the cutoff radius (lattice units)."""

    s: tuple[float, ...]
    ell: tuple[float, ...]
    cutoff: float

    def __post_init__(self) -> None:
        if any(x <= 0 for x in self.s) or any(x <= 0 for x in self.ell):
            raise PotentialError("LJ strength and equilibrium distance must be positive")
        if self.cutoff < 1:
            raise PotentialError("cutoff must be at least one lattice unit")


class LennardJones1D(InteractionModel):
    """Finite-range LJ chain with m species at the uniform shifts k/m.

    Bond parameters (s, ell) are keyed on the species of the site that owns
    the energy term.  Bond lengths are measured in units of the finest
    inter-site spacing eps/m, so the nearest neighbor sits at b = 1 in the
    undeformed state; the cutoff is expressed in lattice units.
    """

    d = 1

    def __init__(self, params: LennardJonesParams) -> None:
        self.params = params
        self.m = len(params.s)
        if len(params.ell) != self.m:
            raise PotentialError("s and ell must have one entry per species")
        self.is_quadratic = False
        lat = chain_lattice(1, self.m)
        step = Fraction(1, self.m)
        offsets = []
        k = 1
        while k * step <= Fraction(params.cutoff).limit_denominator(10**6):
            offsets.extend([k * step, -k * step])
            k += 1
        self._specs = []
        for alpha in range(self.m):
            specs = []
            for r in sorted(offsets):
                off = lat.resolve_offset(alpha, r)
                law = LennardJonesLaw(
                    np.array(params.s[alpha]), np.array(params.ell[alpha]), scale=float(self.m)
                )
                specs.append(BondSpec(off, law))
            self._specs.append(specs)

    def shifts(self) -> list:
        return [(Fraction(k, self.m),) for k in range(self.m)]

    def bond_specs(self, alpha: int, cell: int = 0) -> list[BondSpec]:
        return self._specs[alpha]


STOCHASTIC_OFFSETS = ((1, 0), (0, 1), (1, 1), (-1, 1))
AXIS_BOND_RANGE = (0.5, 10.0)
DIAGONAL_BOND_RANGE = (0.1, 5.0)


class RandomBond2D(InteractionModel):
    """2D quadratic bond network with per-site random strengths.

    Axis bonds (1,0), (0,1) draw uniformly from [0.5, 10], diagonal bonds
    (1,1), (-1,1) from [0.1, 5].  The strength field regenerates bit-identically
    from ``seed``; the stream order is site-major, then offset.
    """

    d = 2
    m = 1

    def __init__(self, n: int, seed: int) -> None:
        if n < 2:
            raise PotentialError("grid size must be at least 2")
        self.n = int(n)
        self.seed = int(seed)
        self.is_quadratic = True
        rng = np.random.Generator(np.random.Philox(self.seed))
        raw = rng.uniform(0.0, 1.0, size=(self.n * self.n, 4))
        lo = np.array([AXIS_BOND_RANGE[0]] * 2 + [DIAGONAL_BOND_RANGE[0]] * 2)
        hi = np.array([AXIS_BOND_RANGE[1]] * 2 + [DIAGONAL_BOND_RANGE[1]] * 2)
        self.psi = lo + (hi - lo) * raw  # (n_cells, 4), cells in C order
        lat = square_lattice(self.n)
        self._offsets = [lat.resolve_offset(0, r) for r in STOCHASTIC_OFFSETS]

    def shifts(self) -> list:
        return [(Fraction(0), Fraction(0))]

    def bond_specs(self, alpha: int, cell=0) -> list[BondSpec]:
        cells = np.atleast_1d(np.asarray(cell, dtype=int))
        return [
            BondSpec(off, SpringLaw(self.psi[cells, j]))
            for j, off in enumerate(self._offsets)
        ]

    def bond_strengths(self, j: int, cells: np.ndarray) -> np.ndarray:
        """Strength of the j-th offset's bonds at the given flat cell indices."""
        return self.psi[np.asarray(cells, dtype=int), j]


# ------------------------------------------------------------------ factories


@dataclass(frozen=True)
class DynamicsSetup:
    """Slow-dynamics material: LJ chain with two species plus per-species masses."""

    model: LennardJones1D
    species_masses: tuple[float, ...]

    def mass_field(self, lattice: Multilattice) -> np.ndarray:
        """Per-site masses M(x) on the given lattice, shape (n_sites,)."""
        masses = np.array(self.species_masses)
        return masses[lattice.site_species()]


def make_dynamics_model() -> DynamicsSetup:
    """Two-species LJ chain: integer sites carry (s, ell, M) = (1.6, 0.99, 2),
    half-integer sites (0.4, 1.01, 1); interaction cutoff 3 lattice units."""
    params = LennardJonesParams(s=(1.6, 0.4), ell=(0.99, 1.01), cutoff=3.0)
    return DynamicsSetup(model=LennardJones1D(params), species_masses=(2.0, 1.0))


def external_force_2d(points: np.ndarray) -> np.ndarray:
    """Smooth body force 10 e^{-cos^2(pi x1) - cos^2(pi x2)} (sin 2pi x1, sin 2pi x2),
    before mean subtraction."""
    x1, x2 = points[:, 0], points[:, 1]
    amp = 10.0 * np.exp(-np.cos(np.pi * x1) ** 2 - np.cos(np.pi * x2) ** 2)
    return amp[:, None] * np.stack([np.sin(2 * np.pi * x1), np.sin(2 * np.pi * x2)], axis=1)


def make_stochastic_model(n: int, seed: int) -> tuple[Multilattice, RandomBond2D, LatticeField]:
    """Random bond network on (1/n)Z^2 with the zero-mean smooth body force."""
    if n & (n - 1):
        raise PotentialError("grid size must be a power of two")
    lat = square_lattice(n)
    model = RandomBond2D(n, seed)
    f = external_force_2d(lat.site_positions())
    f = f - f.mean(axis=0)[None, :]
    return lat, model, LatticeField(lat, f)
