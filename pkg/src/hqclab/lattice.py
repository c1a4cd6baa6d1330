"""Periodic multilattice geometry and discrete vector calculus.

A multilattice is a union of m shifted copies of the Bravais lattice
eps*Z^d, restricted to the periodic unit cell Omega = [0,1)^d.  Sites are
indexed by (Bravais cell, species); adjacency is resolved with exact
rational arithmetic so that periodic wrap-around never suffers from
floating-point coincidence checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

#: relative tolerance used for "zero mean" and similar float coincidence checks
ZERO_MEAN_TOL = 1e-12


class LatticeError(ValueError):
    """Invalid lattice construction or an offset that leaves the lattice."""


def _as_fraction_vector(v, d: int) -> tuple[Fraction, ...]:
    if np.isscalar(v) or isinstance(v, Fraction):
        v = (v,)
    vec = tuple(Fraction(x).limit_denominator(10**12) if not isinstance(x, Fraction) else x for x in v)
    if len(vec) != d:
        raise LatticeError(f"expected a {d}-vector, got {v!r}")
    return vec


@dataclass(frozen=True)
class NeighborOffset:
    """Offset r (in lattice units: the neighbor of x sits at x + eps*r).

    ``species_target`` is the species of the neighbor and ``cell_shift`` the
    integer Bravais-cell displacement, i.e. p_source + r = cell_shift + p_target.
    """

    r: tuple[Fraction, ...]
    species_target: int
    cell_shift: tuple[int, ...]

    @property
    def r_float(self) -> np.ndarray:
        return np.array([float(x) for x in self.r])


class Multilattice:
    """Periodic multilattice eps*Z^d + eps*P on the unit cell [0,1)^d.

    Parameters
    ----------
    d : spatial dimension (1 or 2)
    eps : lattice parameter; 1/eps must be a positive integer
    shifts : species shift vectors p_0, ..., p_{m-1} in [0,1)^d, p_0 = 0
    """

    def __init__(self, d: int, eps, shifts: Sequence) -> None:
        if d not in (1, 2):
            raise LatticeError(f"dimension must be 1 or 2, got {d}")
        eps = Fraction(eps) if not isinstance(eps, Fraction) else eps
        if eps <= 0 or (1 / eps).denominator != 1:
            raise LatticeError(f"1/eps must be a positive integer, got eps={eps}")
        self.d = d
        self.eps = eps
        self.eps_float = float(eps)
        self.shifts: tuple[tuple[Fraction, ...], ...] = tuple(_as_fraction_vector(p, d) for p in shifts)
        if not self.shifts:
            raise LatticeError("at least one species shift is required")
        if any(x != 0 for x in self.shifts[0]):
            raise LatticeError("the first species shift must be zero")
        for p in self.shifts:
            if any(x < 0 or x >= 1 for x in p):
                raise LatticeError(f"species shift {p} outside [0,1)^d")
        if len(set(self.shifts)) != len(self.shifts):
            raise LatticeError("species shifts must be pairwise distinct")
        self.m = len(self.shifts)
        self.cells_per_dim = int(1 / eps)
        self.n_cells = self.cells_per_dim**d
        self.n_sites = self.m * self.n_cells
        # cell multi-indices in C order; cell_index[k] is the k-th cell
        grids = np.indices((self.cells_per_dim,) * d).reshape(d, -1).T
        self._cell_multi = grids  # (n_cells, d) int

    # ------------------------------------------------------------------ geometry

    def site_index(self, cell: Sequence[int], species: int) -> int:
        cell = np.mod(np.asarray(cell, dtype=int), self.cells_per_dim)
        flat = 0
        for c in cell:
            flat = flat * self.cells_per_dim + int(c)
        return flat * self.m + species

    def site_species(self) -> np.ndarray:
        return np.tile(np.arange(self.m), self.n_cells)

    def site_cells(self) -> np.ndarray:
        """Bravais cell multi-index of every site, shape (n_sites, d)."""
        return np.repeat(self._cell_multi, self.m, axis=0)

    def site_positions(self) -> np.ndarray:
        shifts = np.array([[float(x) for x in p] for p in self.shifts])
        pos = self._cell_multi[:, None, :] + shifts[None, :, :]
        return (self.eps_float * pos).reshape(self.n_sites, self.d)

    def resolve_offset(self, species: int, r) -> NeighborOffset:
        """Resolve offset r from a site of the given species to its target site.

        Raises LatticeError if x + eps*r is not a lattice site.
        """
        r = _as_fraction_vector(r, self.d)
        p = self.shifts[species]
        target = tuple(pi + ri for pi, ri in zip(p, r))
        frac = tuple(t % 1 for t in target)
        for beta, q in enumerate(self.shifts):
            if q == frac:
                shift = tuple(int(t - f) for t, f in zip(target, frac))
                return NeighborOffset(r=r, species_target=beta, cell_shift=shift)
        raise LatticeError(f"offset {r} from species {species} does not land on a lattice site")

    def neighbor_sites(self, species: int, offset: NeighborOffset) -> np.ndarray:
        """Flat site indices of x + eps*r for all sites x of ``species``, in cell order."""
        shifted = np.mod(self._cell_multi + np.asarray(offset.cell_shift, dtype=int), self.cells_per_dim)
        flat = np.zeros(self.n_cells, dtype=np.int64)
        for j in range(self.d):
            flat = flat * self.cells_per_dim + shifted[:, j]
        return flat * self.m + offset.species_target

    def species_sites(self, species: int) -> np.ndarray:
        return np.arange(self.n_cells, dtype=np.int64) * self.m + species


@dataclass
class LatticeField:
    """Periodic vector-valued function on the sites of a multilattice."""

    lattice: Multilattice
    values: np.ndarray  # (n_sites, d)

    def __post_init__(self) -> None:
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape == (1, self.lattice.n_sites) and self.lattice.d == 1:
            self.values = self.values.T
        if self.values.shape != (self.lattice.n_sites, self.lattice.d):
            raise LatticeError(
                f"field values must have shape {(self.lattice.n_sites, self.lattice.d)}, got {self.values.shape}"
            )

    def copy(self) -> "LatticeField":
        return LatticeField(self.lattice, self.values.copy())

    def __add__(self, other: "LatticeField") -> "LatticeField":
        _check_same_domain(self, other)
        return LatticeField(self.lattice, self.values + other.values)

    def __sub__(self, other: "LatticeField") -> "LatticeField":
        _check_same_domain(self, other)
        return LatticeField(self.lattice, self.values - other.values)

    def __mul__(self, scalar: float) -> "LatticeField":
        return LatticeField(self.lattice, self.values * scalar)

    __rmul__ = __mul__


def zeros_field(lattice: Multilattice) -> LatticeField:
    return LatticeField(lattice, np.zeros((lattice.n_sites, lattice.d)))


def field_from_function(lattice: Multilattice, fn) -> LatticeField:
    """Sample a callable fn(points (n,d)) -> (n,d) at all lattice sites."""
    vals = np.asarray(fn(lattice.site_positions()), dtype=float)
    return LatticeField(lattice, vals.reshape(lattice.n_sites, lattice.d))


def _check_same_domain(u: LatticeField, v: LatticeField) -> None:
    if u.lattice is not v.lattice and (
        u.lattice.d != v.lattice.d
        or u.lattice.eps != v.lattice.eps
        or u.lattice.shifts != v.lattice.shifts
    ):
        raise LatticeError("fields live on different lattices")


# ---------------------------------------------------------------------- calculus


def discrete_derivative(u: LatticeField, r) -> LatticeField:
    """Forward difference quotient D_r u(x) = (u(x + eps*r) - u(x)) / eps.

    The offset must land on a lattice site from every species present.
    """
    lat = u.lattice
    rvec = r.r if isinstance(r, NeighborOffset) else r
    out = np.empty_like(u.values)
    for alpha in range(lat.m):
        off = lat.resolve_offset(alpha, rvec)
        src = lat.species_sites(alpha)
        dst = lat.neighbor_sites(alpha, off)
        out[src] = (u.values[dst] - u.values[src]) / lat.eps_float
    return LatticeField(lat, out)


def translate(u: LatticeField, cells: Sequence[int]) -> LatticeField:
    """Periodic shift (T u)(x) = u(x + eps*cells) by an integer number of Bravais cells."""
    lat = u.lattice
    out = np.empty_like(u.values)
    shift = tuple(int(c) for c in np.atleast_1d(cells))
    for alpha in range(lat.m):
        off = NeighborOffset(r=tuple(Fraction(c) for c in shift), species_target=alpha, cell_shift=shift)
        src = lat.species_sites(alpha)
        out[src] = u.values[lat.neighbor_sites(alpha, off)]
    return LatticeField(lat, out)


def average(u: LatticeField) -> np.ndarray:
    """Site average <u>_S, a d-vector."""
    return u.values.mean(axis=0)


def inner_product(u: LatticeField, v: LatticeField) -> float:
    """Averaged inner product <u, v>_S = <u . v>_S."""
    _check_same_domain(u, v)
    return float(np.mean(np.sum(u.values * v.values, axis=1)))


def project_zero_mean(u: LatticeField) -> LatticeField:
    return LatticeField(u.lattice, u.values - average(u)[None, :])


def is_zero_mean(u: LatticeField) -> bool:
    scale = np.max(np.abs(u.values)) if u.values.size else 0.0
    return bool(np.all(np.abs(average(u)) <= ZERO_MEAN_TOL * max(scale, 1.0)))


def nearest_neighbor_offsets(lattice: Multilattice) -> list:
    """Offsets used by the discrete H1 seminorm.

    1D: one species step r = 1/m (requires the uniform chain shift structure);
    2D: the axis offsets (1,0) and (0,1).
    """
    if lattice.d == 1:
        return [Fraction(1, lattice.m)]
    return [(Fraction(1), Fraction(0)), (Fraction(0), Fraction(1))]


def discrete_norms(u: LatticeField) -> tuple[float, float]:
    """Discrete (L2, H1) norms: l2 = <|u|^2>^(1/2), h1 = (l2^2 + sum_r <|D_r u|^2>)^(1/2)."""
    l2sq = float(np.mean(np.sum(u.values**2, axis=1)))
    h1sq = l2sq
    for r in nearest_neighbor_offsets(u.lattice):
        du = discrete_derivative(u, r)
        h1sq += float(np.mean(np.sum(du.values**2, axis=1)))
    return np.sqrt(l2sq), np.sqrt(h1sq)


def l2_norm(u: LatticeField) -> float:
    return float(np.sqrt(np.mean(np.sum(u.values**2, axis=1))))


def build_multilattice(d: int, eps, shifts: Sequence) -> Multilattice:
    """Construct a multilattice with validated spacing and species shifts."""
    return Multilattice(d, eps, shifts)


def chain_lattice(eps, m: int) -> Multilattice:
    """1D multilattice with the uniform shifts P = (0, 1/m, ..., (m-1)/m)."""
    return Multilattice(1, eps, [(Fraction(k, m),) for k in range(m)])


def square_lattice(n: int) -> Multilattice:
    """Simple 2D lattice (1/n)*Z^2 on the unit cell."""
    return Multilattice(2, Fraction(1, n), [(Fraction(0), Fraction(0))])
