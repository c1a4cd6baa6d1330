"""Shared engine: periodic bond networks, their derivatives, and Newton solves.

Every equilibrium problem in the package reduces to the same shape: a torus of
sites, a list of bonds (src, dst, offset vector r, bond law), and an energy

    E(w; F) = (1/n_sites) * sum_bonds phi_b( F r_b + (w[dst_b] - w[src_b]) / gap_scale )

minimized over zero-mean periodic fields w.  The three uses are

* full atomistic statics:   gap_scale = eps, F = 0, w = displacement u;
* cell / micro problems:    gap_scale = 1,  F = macro gradient, w = corrector chi
  (the physical corrector is eps * chi);
* affine (Cauchy-Born) closures: w frozen at zero.

Gradients and Hessians are returned as Riesz representers with respect to the
site-averaged inner product <u, v> = (1/n) sum u(x).v(x), so that the gradient
of a translation-invariant energy has exactly zero mean and the Hessian carries
the constant fields in its kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import Multilattice
from .potential import InteractionModel, PotentialError

#: below this many degrees of freedom, linear solves go through dense LAPACK
DENSE_DOF_LIMIT = 600


class SolverError(RuntimeError):
    """Newton iteration failed to converge or hit a singular operator."""


class BondSystem:
    """Compiled bond list of an interaction model on a periodic site torus."""

    def __init__(
        self,
        n_sites: int,
        d: int,
        src: np.ndarray,
        dst: np.ndarray,
        rvec: np.ndarray,
        laws: list,
        law_slices: list[slice],
        gap_scale: float = 1.0,
    ) -> None:
        self.n_sites = n_sites
        self.d = d
        self.src = src
        self.dst = dst
        self.rvec = rvec
        self.laws = laws
        self.law_slices = law_slices
        self.gap_scale = float(gap_scale)
        self.n_dof = n_sites * d

    # ------------------------------------------------------------- evaluation

    def gaps(self, w: np.ndarray, F: np.ndarray | None = None) -> np.ndarray:
        g = (w[self.dst] - w[self.src]) / self.gap_scale
        if F is not None:
            g = g + self.rvec @ np.atleast_2d(F).T
        return g

    def _per_bond(self, fn: str, w: np.ndarray, F: np.ndarray | None):
        g = self.gaps(w, F)
        parts = []
        for law, sl in zip(self.laws, self.law_slices):
            parts.append(getattr(law, fn)(g[sl], self.rvec[sl]))
        return np.concatenate(parts, axis=0)

    def energy(self, w: np.ndarray, F: np.ndarray | None = None) -> float:
        return float(self._per_bond("energy", w, F).sum() / self.n_sites)

    def bond_forces(self, w: np.ndarray, F: np.ndarray | None = None) -> np.ndarray:
        """phi'_b per bond, shape (n_bonds, d)."""
        return self._per_bond("grad", w, F)

    def bond_stiffness(self, w: np.ndarray, F: np.ndarray | None = None) -> np.ndarray:
        """phi''_b per bond, shape (n_bonds, d, d)."""
        return self._per_bond("hess", w, F)

    def _scatter(self, per_bond: np.ndarray) -> np.ndarray:
        """Riesz gradient from per-bond forces: +phi' at dst, -phi' at src, / gap_scale."""
        out = np.zeros((self.n_sites, self.d))
        np.add.at(out, self.dst, per_bond)
        np.subtract.at(out, self.src, per_bond)
        return out / self.gap_scale

    def gradient(self, w: np.ndarray, F: np.ndarray | None = None) -> np.ndarray:
        return self._scatter(self.bond_forces(w, F))

    def stress(self, w: np.ndarray, F: np.ndarray | None = None) -> np.ndarray:
        """Averaged first Piola-type stress < sum_r phi'_r r^T >, a d x d matrix."""
        forces = self.bond_forces(w, F)
        return forces.T @ self.rvec / self.n_sites

    def affine_force(self, w: np.ndarray, F: np.ndarray | None, G: np.ndarray) -> np.ndarray:
        """Riesz representer of v -> < sum_r phi''_r (G r), D_r v >.

        This is the right-hand side of the sensitivity (tangent) problem for a
        perturbation of the imposed gradient in direction G.
        """
        k = self.bond_stiffness(w, F)
        gr = self.rvec @ np.atleast_2d(G).T
        return self._scatter(np.einsum("bij,bj->bi", k, gr))

    def hessian(self, w: np.ndarray, F: np.ndarray | None = None) -> sp.csr_matrix:
        """Riesz Hessian as a sparse (n_dof x n_dof) matrix."""
        k = self.bond_stiffness(w, F) / self.gap_scale**2
        d = self.d
        nb = len(self.src)
        src = self.src
        dst = self.dst
        ii, jj = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
        ii = ii.ravel()
        jj = jj.ravel()

        def block_rows(sites):
            return (sites[:, None] * d + ii[None, :]).ravel()

        def block_cols(sites):
            return (sites[:, None] * d + jj[None, :]).ravel()

        vals = k.reshape(nb, d * d)
        rows = np.concatenate([block_rows(src), block_rows(dst), block_rows(src), block_rows(dst)])
        cols = np.concatenate([block_cols(src), block_cols(dst), block_cols(dst), block_cols(src)])
        data = np.concatenate([vals, vals, -vals, -vals], axis=0).ravel()
        H = sp.coo_matrix((data, (rows, cols)), shape=(self.n_dof, self.n_dof))
        return H.tocsr()


def compile_system(lattice: Multilattice, model: InteractionModel, gap_scale: float,
                   parent_cells: np.ndarray | None = None) -> BondSystem:
    """Build the bond list of ``model`` on ``lattice``.

    ``parent_cells`` maps the torus cells to cells of a parent lattice and is
    used by models with site-dependent coefficients (random bond networks
    restricted to a sampling subgrid).
    """
    if model.d != lattice.d or model.m != lattice.m:
        raise PotentialError("model and lattice are incompatible")
    src_parts, dst_parts, r_parts, laws, slices = [], [], [], [], []
    start = 0
    cells = parent_cells if parent_cells is not None else np.arange(lattice.n_cells)
    for alpha in range(lattice.m):
        for spec in model.bond_specs(alpha, cells):
            src = lattice.species_sites(alpha)
            dst = lattice.neighbor_sites(alpha, lattice.resolve_offset(alpha, spec.offset.r))
            nb = len(src)
            src_parts.append(src)
            dst_parts.append(dst)
            r_parts.append(np.tile(spec.offset.r_float, (nb, 1)))
            laws.append(spec.law)
            slices.append(slice(start, start + nb))
            start += nb
    return BondSystem(
        n_sites=lattice.n_sites,
        d=lattice.d,
        src=np.concatenate(src_parts),
        dst=np.concatenate(dst_parts),
        rvec=np.concatenate(r_parts, axis=0),
        laws=laws,
        law_slices=slices,
        gap_scale=gap_scale,
    )


# ------------------------------------------------------------- linear algebra


def avg_norm(v: np.ndarray) -> float:
    """Discrete L2 norm sqrt(<|v|^2>) over sites."""
    return float(np.sqrt(np.mean(np.sum(np.atleast_2d(v) ** 2, axis=-1))))


def project_zero_mean_array(w: np.ndarray) -> np.ndarray:
    return w - w.mean(axis=0)[None, :]


class GaugeFixedOperator:
    """Linear solver for Riesz Hessians with the constant fields in the kernel.

    Small systems add a rank-d regularization on the constant modes; larger
    sparse systems pin the first site's degrees of freedom instead (an
    equivalent gauge choice that preserves sparsity).  Either way the returned
    increment is projected back to zero mean, so both paths produce the same
    zero-mean Newton step.
    """

    def __init__(self, H: sp.spmatrix, d: int) -> None:
        self.d = d
        self.n_dof = H.shape[0]
        self.n_sites = self.n_dof // d
        self._H = H.tocsr()
        if self.n_dof <= DENSE_DOF_LIMIT:
            A = np.asarray(H.todense())
            scale = max(np.abs(np.diag(A)).mean(), 1.0)
            for i in range(d):
                mode = np.zeros(self.n_dof)
                mode[i::d] = 1.0 / np.sqrt(self.n_sites)
                A = A + scale * np.outer(mode, mode)
            try:
                self._dense = np.linalg.inv(A)
            except np.linalg.LinAlgError as exc:
                raise SolverError("singular stiffness beyond the translation kernel") from exc
            self._lu = None
        else:
            keep = np.arange(d, self.n_dof)
            A = H.tocsr()[keep][:, keep].tocsc()
            try:
                self._lu = spla.splu(A)
            except RuntimeError as exc:
                raise SolverError("singular stiffness beyond the translation kernel") from exc
            self._dense = None
            self._keep = keep

    def _raw_solve(self, b: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            return self._dense @ b
        x = np.zeros(self.n_dof)
        x[self._keep] = self._lu.solve(b[self._keep])
        return x

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve H x = rhs (rhs shape (n_sites, d)); returns a zero-mean field.

        One step of iterative refinement keeps the step accurate when the
        stiffness entries are large (fine lattices scale like 1/eps^2).
        """
        b = rhs.ravel()
        x = self._raw_solve(b)
        x = project_zero_mean_array(x.reshape(self.n_sites, self.d)).ravel()
        r = b - self._H @ x
        x = x + self._raw_solve(r)
        x = x.reshape(self.n_sites, self.d)
        return project_zero_mean_array(x)


@dataclass
class NewtonResult:
    w: np.ndarray
    residual: float
    iterations: int
    converged: bool


def newton_zero_mean(
    system: BondSystem,
    F: np.ndarray | None = None,
    w0: np.ndarray | None = None,
    f_ext: np.ndarray | None = None,
    tol: float = 1e-12,
    ref: float = 0.0,
    max_iter: int = 50,
    require_convergence: bool = True,
) -> NewtonResult:
    """Find the zero-mean critical point of E(w; F) - <f_ext, w>.

    The residual is measured as sqrt(<|gradient|^2>) and convergence is
    declared at ``tol * (1 + ref)``.  Full Newton steps with halving line
    search on the objective; quadratic energies converge in one iteration.
    """
    n, d = system.n_sites, system.d
    w = np.zeros((n, d)) if w0 is None else project_zero_mean_array(np.array(w0, dtype=float))
    if n * d <= d:  # zero-mean space is trivial
        g = system.gradient(w, F) - (f_ext if f_ext is not None else 0.0)
        return NewtonResult(w, avg_norm(g), 0, True)

    def objective(x):
        e = system.energy(x, F)
        if f_ext is not None:
            e -= float(np.mean(np.sum(f_ext * x, axis=1)))
        return e

    threshold = tol * (1.0 + ref)
    res = np.inf
    for it in range(max_iter + 1):
        g = system.gradient(w, F)
        if f_ext is not None:
            g = g - f_ext
        res = avg_norm(g)
        if res <= threshold:
            return NewtonResult(w, res, it, True)
        if it == max_iter:
            break
        op = GaugeFixedOperator(system.hessian(w, F), d)
        step = op.solve(-g)
        lam = 1.0
        base = objective(w)
        while lam > 2.0**-30:
            try:
                trial = objective(project_zero_mean_array(w + lam * step))
            except PotentialError:
                trial = np.inf
            if trial <= base + 1e-14 * (1 + abs(base)):
                break
            lam *= 0.5
        else:
            raise SolverError("line search failed (bond collapse or ascent direction)")
        w = project_zero_mean_array(w + lam * step)
    if require_convergence:
        raise SolverError(f"Newton did not converge: residual {res:.3e} after {max_iter} iterations")
    return NewtonResult(w, res, max_iter, False)


