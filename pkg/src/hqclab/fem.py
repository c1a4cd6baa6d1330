"""Uniform periodic simplicial macro meshes and P1/P0 fields.

Meshes are structured: intervals in 1D, right triangles from a square grid in
2D (each cell split along its main diagonal).  Vertices are periodic; element
corner coordinates are stored unwrapped so that gradients never see the seam.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .lattice import LatticeField, discrete_norms


class MeshError(ValueError):
    """Invalid mesh construction or mesh/lattice misalignment."""


class MacroMesh:
    """Uniform periodic partition of [0,1)^d into simplices with leg size 1/n."""

    def __init__(self, d: int, n: int) -> None:
        if d not in (1, 2):
            raise MeshError("mesh dimension must be 1 or 2")
        if n < 1:
            raise MeshError("need at least one element per direction")
        self.d = d
        self.n = int(n)
        self.h = 1.0 / n
        if d == 1:
            self.vertices = np.arange(n)[:, None] / n
            self.elements = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
            coords = np.stack([np.arange(n), np.arange(n) + 1], axis=1)[:, :, None] / n
            self.el_coords = coords.astype(float)
        else:
            ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
            self.vertices = np.stack([ii.ravel(), jj.ravel()], axis=1) / n

            def vid(i, j):
                return (i % n) * n + (j % n)

            elements = []
            coords = []
            for i in range(n):
                for j in range(n):
                    # lower triangle (right angle at (i+1, j)), covers fx >= fy
                    elements.append([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)])
                    coords.append([[i, j], [i + 1, j], [i + 1, j + 1]])
                    # upper triangle (right angle at (i, j+1)), covers fx <= fy
                    elements.append([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)])
                    coords.append([[i, j], [i + 1, j + 1], [i, j + 1]])
            self.elements = np.array(elements, dtype=int)
            self.el_coords = np.array(coords, dtype=float) / n
        self.n_vertices = len(self.vertices)
        self.n_elements = len(self.elements)
        self.volumes = np.full(self.n_elements, 1.0 / self.n_elements)
        # gradients of the local P1 basis: (n_elements, d+1, d)
        self._grad_basis = np.empty((self.n_elements, d + 1, d))
        for t in range(self.n_elements):
            X = self.el_coords[t]
            G = (X[1:] - X[0]).T  # columns are the edge vectors from vertex 0
            Ginv = np.linalg.inv(G)
            # barycentric lambda(x) = Ginv (x - X0): grad of lambda_j is row j
            self._grad_basis[t, 1:] = Ginv
            self._grad_basis[t, 0] = -Ginv.sum(axis=0)

    def barycenters(self) -> np.ndarray:
        return self.el_coords.mean(axis=1)

    def grad_basis(self, t: int | None = None) -> np.ndarray:
        return self._grad_basis if t is None else self._grad_basis[t]

    def vertex_weights(self) -> np.ndarray:
        """Integrals of the nodal hat functions (uniform: 1/n_vertices each)."""
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.elements.ravel(), np.repeat(self.volumes / (self.d + 1), self.d + 1))
        return w


def build_mesh(d: int, n_elements: int) -> MacroMesh:
    """Uniform periodic mesh with n_elements per direction."""
    return MacroMesh(d, n_elements)


def check_alignment(mesh: MacroMesh, lattice) -> None:
    cells = Fraction(1) / lattice.eps
    if cells % mesh.n != 0:
        raise MeshError(f"mesh size {mesh.n} does not divide 1/eps = {cells}")


@dataclass
class P1Field:
    """Continuous piecewise-linear periodic field: one value per vertex."""

    mesh: MacroMesh
    values: np.ndarray  # (n_vertices, d)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).reshape(self.mesh.n_vertices, self.mesh.d)


@dataclass
class P0Field:
    """Piecewise-constant field: one value per element."""

    mesh: MacroMesh
    values: np.ndarray  # (n_elements, d)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).reshape(self.mesh.n_elements, self.mesh.d)


def zero_p1(mesh: MacroMesh) -> P1Field:
    return P1Field(mesh, np.zeros((mesh.n_vertices, mesh.d)))


def p1_zero_mean(u: P1Field) -> P1Field:
    # uniform meshes: the integral of u^h is the plain vertex average
    return P1Field(u.mesh, u.values - u.values.mean(axis=0)[None, :])


def element_vertex_values(u: P1Field, t: int) -> np.ndarray:
    return u.values[u.mesh.elements[t]]


def element_gradient(u: P1Field, t: int) -> np.ndarray:
    """Constant gradient of u^h on element t, F[i, j] = d u_i / d x_j."""
    U = element_vertex_values(u, t)  # (d+1, d)
    return U.T @ u.mesh.grad_basis(t)


def all_element_gradients(u: P1Field) -> np.ndarray:
    U = u.values[u.mesh.elements]  # (ne, d+1, d)
    return np.einsum("tlj,tli->tij", u.mesh.grad_basis(), U)


@dataclass(frozen=True)
class AffineMap:
    """Affine extension u(x) = value0 + F (x - x0) of an element restriction."""

    F: np.ndarray
    x0: np.ndarray
    value0: np.ndarray

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return self.value0[None, :] + (pts - self.x0[None, :]) @ self.F.T


def affine_extension(u: P1Field, t: int) -> AffineMap:
    """The affine map agreeing with u^h on element t, defined on all of R^d."""
    F = element_gradient(u, t)
    x0 = u.mesh.el_coords[t, 0]
    return AffineMap(F=F, x0=x0, value0=u.values[u.mesh.elements[t, 0]].copy())


def locate(mesh: MacroMesh, points: np.ndarray) -> np.ndarray:
    """Element index containing each point (ties broken deterministically)."""
    pts = np.atleast_2d(np.mod(points, 1.0))
    n = mesh.n
    scaled = pts * n
    cell = np.minimum(np.floor(scaled).astype(int), n - 1)
    frac = scaled - cell
    if mesh.d == 1:
        return cell[:, 0]
    base = 2 * (cell[:, 0] * n + cell[:, 1])
    upper = frac[:, 0] < frac[:, 1]
    return base + upper.astype(int)


def barycentric_weights(mesh: MacroMesh, points: np.ndarray, elems: np.ndarray) -> np.ndarray:
    """P1 nodal weights of each point within its element, shape (np, d+1)."""
    pts = np.atleast_2d(np.mod(points, 1.0))
    X0 = mesh.el_coords[elems, 0]
    rel = np.mod(pts - X0, 1.0)  # wrap to the element's unwrapped frame
    grads = mesh.grad_basis()[elems]  # (np, d+1, d)
    lam = np.einsum("pld,pd->pl", grads, rel)
    lam[:, 0] += 1.0
    return lam


def p1_eval(u: P1Field, points: np.ndarray) -> np.ndarray:
    """Evaluate the P1 field at arbitrary points of the periodic cell."""
    elems = locate(u.mesh, points)
    lam = barycentric_weights(u.mesh, points, elems)
    vals = u.values[u.mesh.elements[elems]]  # (np, d+1, d)
    return np.einsum("pl,pli->pi", lam, vals)


def p1_interpolate_lattice(mesh: MacroMesh, u: LatticeField) -> P1Field:
    """Nodal interpolation: sample the lattice field at the mesh vertices.

    Vertices must coincide with lattice sites (aligned meshes).
    """
    lat = u.lattice
    pos = lat.site_positions()
    vals = np.empty((mesh.n_vertices, mesh.d))
    scale = 1.0 / lat.eps_float
    for k, v in enumerate(mesh.vertices):
        rel = v * scale  # in cell units
        cell = np.round(rel).astype(int)
        if not np.allclose(rel, cell, atol=1e-9):
            raise MeshError("mesh vertex does not coincide with a Bravais site")
        vals[k] = u.values[lat.site_index(cell, 0)]
    return P1Field(mesh, vals)


def sample_on_lattice(u: P1Field, lattice) -> LatticeField:
    return LatticeField(lattice, p1_eval(u, lattice.site_positions()))


def lattice_error(u_lattice: LatticeField, approx) -> tuple[float, float]:
    """Discrete (L2, H1) norms of the difference on the lattice.

    ``approx`` may be another lattice field or a P1 field (sampled at sites).
    """
    if isinstance(approx, P1Field):
        approx = sample_on_lattice(approx, u_lattice.lattice)
    diff = LatticeField(u_lattice.lattice, approx.values - u_lattice.values)
    return discrete_norms(diff)


def load_from_lattice(mesh: MacroMesh, f: LatticeField) -> np.ndarray:
    """Load vector b[k, i] = <f_i phi_k>_M pairing the force with nodal hats."""
    lat = f.lattice
    pos = lat.site_positions()
    elems = locate(mesh, pos)
    lam = barycentric_weights(mesh, pos, elems)
    b = np.zeros((mesh.n_vertices, mesh.d))
    nodes = mesh.elements[elems]  # (ns, d+1)
    w = lam[:, :, None] * f.values[:, None, :] / lat.n_sites
    np.add.at(b, nodes.ravel(), w.reshape(-1, mesh.d))
    return b


def constant_tensor_stiffness(mesh: MacroMesh, A: np.ndarray) -> sp.csr_matrix:
    """P1 stiffness of the quadratic density (1/2) A[i,j,k,l] F[i,j] F[k,l].

    For d = 1 a scalar A is accepted (density A (u')^2 / 2).
    """
    d = mesh.d
    A = np.asarray(A, dtype=float).reshape(d, d, d, d)
    rows, cols, data = [], [], []
    for t in range(mesh.n_elements):
        grads = mesh.grad_basis(t)  # (d+1, d)
        nodes = mesh.elements[t]
        local = mesh.volumes[t] * np.einsum("lj,ijkm,pm->lipk", grads, A, grads)
        for l in range(d + 1):
            for p in range(d + 1):
                for i in range(d):
                    for k in range(d):
                        rows.append(nodes[l] * d + i)
                        cols.append(nodes[p] * d + k)
                        data.append(local[l, i, p, k])
    K = sp.coo_matrix((data, (rows, cols)), shape=(mesh.n_vertices * d,) * 2)
    return K.tocsr()
