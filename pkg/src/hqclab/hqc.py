"""Homogenized quasicontinuum solver: macro Newton over per-element microproblems.

Each macro element T carries a sampling domain (one lattice period for
crystals, an N_rep^d subgrid for random networks).  Constrained by the affine
extension of u^h on T, the microproblem relaxes a zero-mean periodic corrector
on the sampling domain; correctors are stored per unit macro length (chi
variables), so the physical corrector is eps * chi and the bond gaps are

    D_r R_T(u^h) = F r + chi[neighbor] - chi[site],   F = grad u^h|_T.

The element energy density, its stress, and the condensed tangent then feed a
standard P1 assembly.  Quadratic models shortcut through per-domain effective
tensors computed from unit-gradient correctors; the generic path runs a per
element Newton with warm starts.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .fem import (
    MacroMesh,
    P1Field,
    all_element_gradients,
    barycentric_weights,
    check_alignment,
    locate,
    p1_zero_mean,
)
from .lattice import LatticeField, Multilattice
from .network import (
    BondSystem,
    GaugeFixedOperator,
    avg_norm,
    compile_system,
    newton_zero_mean,
    project_zero_mean_array,
)
from .potential import InteractionModel

MICRO_TOL = 1e-12
BOUNDARY_SNAP_TOL = 1e-9


class HQCError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplingDomain:
    """Sampling domain of one macro element: a small periodic site torus."""

    element: int
    rep_cell: tuple[int, ...]       # Bravais cell of the representative site
    anchor: tuple[int, ...]         # parent cell mapped to torus cell (0, ..., 0)
    torus: Multilattice
    parent_cells: np.ndarray        # flat parent cell per torus cell
    parent_sites: np.ndarray        # flat parent site per torus site
    signature: tuple                # domains with equal signatures share systems


def _nearest_bravais_cell(bary: tuple[Fraction, ...], eps: Fraction, n_cells: int) -> tuple[int, ...]:
    # nearest site, exact ties resolved toward the smaller coordinate
    out = []
    for q in bary:
        ratio = q / eps + Fraction(1, 2)
        k = ratio.numerator // ratio.denominator  # floor
        if ratio == k:  # exact half distance: floor is the lexicographically smaller site
            k -= 1
        out.append(int(k) % n_cells)
    return tuple(out)


def _element_barycenter_exact(mesh: MacroMesh, t: int) -> tuple[Fraction, ...]:
    idx = np.round(mesh.el_coords[t] * mesh.n).astype(int)  # corner indices on the 1/n grid
    return tuple(Fraction(int(idx[:, j].sum()), mesh.n * (mesh.d + 1)) for j in range(mesh.d))


def place_sampling_domains(
    mesh: MacroMesh, lattice: Multilattice, n_rep: int | None = None
) -> list[SamplingDomain]:
    """One sampling domain per element, anchored at the Bravais site nearest the
    element barycenter (exact rational arithmetic, ties toward smaller coordinates).

    ``n_rep`` selects subgrid sampling of n_rep^d Bravais cells for simple
    lattices (random networks); the default is one lattice period (crystals).
    """
    check_alignment(mesh, lattice)
    if mesh.h < lattice.eps_float * (1 - 1e-12):
        raise HQCError("macro elements must be at least one lattice period wide (h >= eps)")
    d = lattice.d
    N = lattice.cells_per_dim
    if n_rep is None:
        torus = Multilattice(d, 1, lattice.shifts)
    else:
        if lattice.m != 1:
            raise HQCError("subgrid sampling domains require a simple lattice (m = 1)")
        if not 1 <= n_rep <= N:
            raise HQCError(f"n_rep must be between 1 and {N}")
        torus = Multilattice(d, Fraction(1, int(n_rep)), lattice.shifts)
    torus_cells = torus.cells_per_dim
    domains = []
    for t in range(mesh.n_elements):
        bary = _element_barycenter_exact(mesh, t)
        rep = _nearest_bravais_cell(bary, lattice.eps, N)
        if n_rep is None:
            anchor = rep
            parent_cells = np.array([_flat_cell(rep, N, d)])
            signature = ("period",)
        elif int(n_rep) == N:
            anchor = (0,) * d  # the subgrid is the whole lattice; placement is immaterial
            parent_cells = np.arange(lattice.n_cells)
            signature = ("full",)
        else:
            # one representative subsystem shared by all elements: its effective
            # response replaces the (unknown) full-sample tensor, so the error
            # floors at an n_rep-dependent level
            anchor = (0,) * d
            multi = torus._cell_multi
            flat = np.zeros(len(multi), dtype=np.int64)
            for j in range(d):
                flat = flat * N + multi[:, j]
            parent_cells = flat
            signature = ("sub", int(n_rep))
        m = lattice.m
        parent_sites = (np.repeat(parent_cells, m) * m + np.tile(np.arange(m), len(parent_cells)))
        domains.append(
            SamplingDomain(
                element=t,
                rep_cell=rep,
                anchor=anchor,
                torus=torus,
                parent_cells=parent_cells,
                parent_sites=parent_sites,
                signature=signature,
            )
        )
    return domains


def _flat_cell(cell: tuple[int, ...], N: int, d: int) -> int:
    flat = 0
    for c in cell:
        flat = flat * N + int(c)
    return flat


@dataclass
class MicroState:
    """Converged micro corrector of one element plus its tangent data."""

    domain: SamplingDomain
    F: np.ndarray
    chi: np.ndarray                     # zero-mean corrector per unit macro length
    residual: float
    converged: bool
    sensitivities: np.ndarray | None = None   # (d, d, n_sites, d) unit-gradient fields
    stable: bool | None = None

    def corrector(self, eps: float) -> np.ndarray:
        """Physical corrector R_T(u^h) - u^h_lin on the sampling sites."""
        return eps * self.chi

    def local_basis_sensitivities(self, grad_basis: np.ndarray) -> np.ndarray:
        """Zero-mean parts of dR_T w - w_lin for the (d+1)*d local nodal basis.

        Returns shape (d+1, d, n_sites, d): entry [l, i] is the sensitivity
        field for the basis function phi_l e_i, assembled by linearity from the
        unit-gradient solves.
        """
        if self.sensitivities is None:
            raise HQCError("sensitivities were not computed for this state")
        return np.einsum("lj,ijnx->linx", grad_basis, self.sensitivities)


def micro_solve(
    system: BondSystem,
    F: np.ndarray,
    guess: np.ndarray | None = None,
    tol: float = MICRO_TOL,
) -> tuple[np.ndarray, float]:
    """Zero-mean micro corrector under the imposed gradient F (chi variables)."""
    result = newton_zero_mean(system, F=F, w0=guess, tol=tol, ref=float(np.linalg.norm(F)))
    return result.w, result.residual


def micro_sensitivity(system: BondSystem, chi: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Unit-gradient sensitivity fields at a converged micro state.

    Solves the linearized microproblem for each unit imposed gradient E_ij;
    sensitivities for arbitrary macro basis functions follow by linearity.
    """
    d = system.d
    n = system.n_sites
    out = np.zeros((d, d, n, d))
    if n * d <= d:
        return out
    op = GaugeFixedOperator(system.hessian(chi, F), d)
    for i in range(d):
        for j in range(d):
            G = np.zeros((d, d))
            G[i, j] = 1.0
            out[i, j] = op.solve(-system.affine_force(chi, F, G))
    return out


def condensed_tangent(system: BondSystem, chi: np.ndarray, F: np.ndarray | None,
                      sens: np.ndarray | None) -> np.ndarray:
    """Element tangent A[i,j,k,l] = < (E_ij r + D S_ij) . V'' . (E_kl r + D S_kl) >.

    With ``sens=None`` the correction is dropped, which yields the Cauchy-Born
    (affine closure) tangent.
    """
    d = system.d
    k = system.bond_stiffness(chi, F)
    nb = len(system.src)
    gaps = np.zeros((d, d, nb, d))
    for i in range(d):
        for j in range(d):
            G = np.zeros((d, d))
            G[i, j] = 1.0
            g = system.rvec @ G.T
            if sens is not None:
                w = sens[i, j]
                g = g + (w[system.dst] - w[system.src]) / system.gap_scale
            gaps[i, j] = g
    return np.einsum("ijbx,bxy,klby->ijkl", gaps, k, gaps) / system.n_sites


class HQCOperator:
    """Macro energy, gradient, Hessian, and load assembly for the HQC method.

    ``relax=False`` freezes the correctors at zero (pure Cauchy-Born closure).
    Micro solves warm-start from the previous evaluation of each element.
    """

    def __init__(
        self,
        model: InteractionModel,
        lattice: Multilattice,
        mesh: MacroMesh,
        n_rep: int | None = None,
        relax: bool = True,
        micro_tol: float = MICRO_TOL,
        stability_check: bool = False,
    ) -> None:
        self.model = model
        self.lattice = lattice
        self.mesh = mesh
        self.relax = relax
        self.micro_tol = micro_tol
        self.stability_check = stability_check
        self.domains = place_sampling_domains(mesh, lattice, n_rep)
        self.systems: dict[tuple, BondSystem] = {}
        self._quad: dict[tuple, tuple[np.ndarray | None, np.ndarray]] = {}  # sig -> (sens, A)
        for dom in self.domains:
            if dom.signature not in self.systems:
                self.systems[dom.signature] = compile_system(
                    dom.torus, model, gap_scale=1.0, parent_cells=dom.parent_cells
                )
        self.warm_chi: dict[int, np.ndarray] = {}
        self.is_quadratic = bool(getattr(model, "is_quadratic", False))

    # ------------------------------------------------------------- micro layer

    def _quad_data(self, sig: tuple) -> tuple[np.ndarray | None, np.ndarray]:
        """Unit-gradient sensitivities and the effective tensor of a quadratic
        system (Cauchy-Born tensor when correctors are frozen)."""
        if sig not in self._quad:
            system = self.systems[sig]
            zero = np.zeros((system.n_sites, system.d))
            sens = micro_sensitivity(system, zero, None) if self.relax else None
            A = condensed_tangent(system, zero, None, sens)
            self._quad[sig] = (sens, A)
        return self._quad[sig]

    def element_chi(self, t: int, F: np.ndarray) -> tuple[np.ndarray, float, bool]:
        """Corrector of element t at gradient F (warm-started); returns
        (chi, residual, converged).  Residual -1 marks 'not evaluated here'
        (exact linear solves); element_states fills it in."""
        dom = self.domains[t]
        system = self.systems[dom.signature]
        if not self.relax:
            chi = np.zeros((system.n_sites, system.d))
            return chi, -1.0, True
        if self.is_quadratic:
            sens, _ = self._quad_data(dom.signature)
            chi = np.einsum("ij,ijnx->nx", F, sens)
            return chi, -1.0, True
        chi, res = micro_solve(system, F, guess=self.warm_chi.get(t), tol=self.micro_tol)
        self.warm_chi[t] = chi
        return chi, res, True

    def element_states(self, uh: P1Field, with_sensitivities: bool = False) -> list[MicroState]:
        grads = all_element_gradients(uh)
        states = []
        for t, dom in enumerate(self.domains):
            system = self.systems[dom.signature]
            F = grads[t]
            chi, res, ok = self.element_chi(t, F)
            if res < 0.0:
                res = avg_norm(system.gradient(chi, F))
            sens = None
            if with_sensitivities:
                if self.is_quadratic and self.relax:
                    sens, _ = self._quad_data(dom.signature)
                elif self.relax:
                    sens = micro_sensitivity(system, chi, F)
                else:
                    sens = np.zeros((system.d, system.d, system.n_sites, system.d))
            stable = None
            if self.stability_check:
                stable = self._micro_stable(system, chi, F)
            states.append(MicroState(dom, F.copy(), chi, res, ok, sens, stable))
        return states

    @staticmethod
    def _micro_stable(system: BondSystem, chi: np.ndarray, F: np.ndarray) -> bool:
        # constants are in the kernel, so positive semidefiniteness on the
        # zero-mean subspace is just a nonnegative spectrum overall
        eigs = np.linalg.eigvalsh(np.asarray(system.hessian(chi, F).todense()))
        return bool(eigs.min() > -1e-10 * max(1.0, abs(eigs.max())))

    # ------------------------------------------------------------- macro layer

    def energy(self, uh: P1Field) -> float:
        grads = all_element_gradients(uh)
        total = 0.0
        for t, dom in enumerate(self.domains):
            system = self.systems[dom.signature]
            F = grads[t]
            if self.is_quadratic:
                _, A = self._quad_data(dom.signature)
                e = 0.5 * float(np.einsum("ij,ijkl,kl->", F, A, F))
            else:
                chi, _, _ = self.element_chi(t, F)
                e = system.energy(chi, F)
            total += self.mesh.volumes[t] * e
        return total

    def gradient(self, uh: P1Field) -> np.ndarray:
        """Nodal residual of the macro energy (sensitivity-free stress form)."""
        grads = all_element_gradients(uh)
        out = np.zeros((self.mesh.n_vertices, self.mesh.d))
        for t, dom in enumerate(self.domains):
            system = self.systems[dom.signature]
            F = grads[t]
            if self.is_quadratic:
                _, A = self._quad_data(dom.signature)
                P = np.einsum("ijkl,kl->ij", A, F)
            else:
                chi, _, _ = self.element_chi(t, F)
                P = system.stress(chi, F)
            contrib = self.mesh.volumes[t] * (self.mesh.grad_basis(t) @ P.T)
            np.add.at(out, self.mesh.elements[t], contrib)
        return out

    def gradient_full(self, uh: P1Field) -> np.ndarray:
        """Nodal residual through the sensitivity fields (the unsimplified form)."""
        grads = all_element_gradients(uh)
        states = self.element_states(uh, with_sensitivities=True)
        d = self.mesh.d
        out = np.zeros((self.mesh.n_vertices, d))
        for t, dom in enumerate(self.domains):
            system = self.systems[dom.signature]
            st = states[t]
            forces = system.bond_forces(st.chi, grads[t])  # (nb, d)
            gb = self.mesh.grad_basis(t)
            nodes = self.mesh.elements[t]
            for l in range(d + 1):
                for i in range(d):
                    G = np.zeros((d, d))
                    G[i, :] = gb[l]
                    S = np.einsum("j,jnx->nx", gb[l], st.sensitivities[i])
                    g = system.rvec @ G.T + (S[system.dst] - S[system.src]) / system.gap_scale
                    val = float(np.sum(forces * g)) / system.n_sites
                    out[nodes[l], i] += self.mesh.volumes[t] * val
        return out

    def element_tangents(self, uh: P1Field) -> np.ndarray:
        grads = all_element_gradients(uh)
        d = self.mesh.d
        out = np.zeros((self.mesh.n_elements, d, d, d, d))
        for t, dom in enumerate(self.domains):
            system = self.systems[dom.signature]
            sig = dom.signature
            F = grads[t]
            if self.is_quadratic:
                _, A = self._quad_data(sig)
                out[t] = A
            elif not self.relax:
                chi = np.zeros((system.n_sites, d))
                out[t] = condensed_tangent(system, chi, F, None)
            else:
                chi, _, _ = self.element_chi(t, F)
                sens = micro_sensitivity(system, chi, F)
                out[t] = condensed_tangent(system, chi, F, sens)
        return out

    def hessian(self, uh: P1Field) -> sp.csr_matrix:
        d = self.mesh.d
        tangents = self.element_tangents(uh)
        rows, cols, data = [], [], []
        for t in range(self.mesh.n_elements):
            gb = self.mesh.grad_basis(t)
            local = self.mesh.volumes[t] * np.einsum("lj,ijkm,pm->lipk", gb, tangents[t], gb)
            nodes = self.mesh.elements[t]
            for l in range(d + 1):
                for p in range(d + 1):
                    for i in range(d):
                        for k in range(d):
                            rows.append(nodes[l] * d + i)
                            cols.append(nodes[p] * d + k)
                            data.append(local[l, i, p, k])
        n_dof = self.mesh.n_vertices * d
        return sp.coo_matrix((data, (rows, cols)), shape=(n_dof, n_dof)).tocsr()

    def rhs(self, f: LatticeField) -> np.ndarray:
        """Load vector F^hqc: per-element sampling-domain averages of f against hats."""
        mesh = self.mesh
        b = np.zeros((mesh.n_vertices, mesh.d))
        pos = self.lattice.site_positions()
        full_volume = 0.0
        for dom in self.domains:
            if dom.signature == ("full",):
                full_volume += mesh.volumes[dom.element]
                continue
            pts = pos[dom.parent_sites]
            fvals = f.values[dom.parent_sites]
            elems = locate(mesh, pts)
            lam = barycentric_weights(mesh, pts, elems)
            nodes = mesh.elements[elems]
            w = lam[:, :, None] * fvals[:, None, :] * (mesh.volumes[dom.element] / len(pts))
            np.add.at(b, nodes.ravel(), w.reshape(-1, mesh.d))
        if full_volume > 0.0:
            elems = locate(mesh, pos)
            lam = barycentric_weights(mesh, pos, elems)
            nodes = mesh.elements[elems]
            w = lam[:, :, None] * f.values[:, None, :] * (full_volume / self.lattice.n_sites)
            np.add.at(b, nodes.ravel(), w.reshape(-1, mesh.d))
        return b

    # ------------------------------------------------------------------ solve

    def solve(
        self,
        load: np.ndarray | None = None,
        u0: P1Field | None = None,
        tol: float = 1e-10,
        max_outer: int = 50,
    ) -> "HQCSolution":
        """Outer Newton on the macro residual; micro states warm-start across
        iterations.  The final macro field is projected to zero mean."""
        mesh = self.mesh
        d = mesh.d
        u = np.zeros((mesh.n_vertices, d)) if u0 is None else np.array(u0.values, dtype=float)
        b = np.zeros_like(u) if load is None else np.asarray(load, dtype=float)
        ref = float(np.linalg.norm(b))
        res = np.inf
        outer_iterations = 0
        for it in range(max_outer + 1):
            uh = P1Field(mesh, u)
            # the macro equation lives on zero-mean test functions: drop the
            # constant component of the assembled residual (the load's sampling
            # averages need not vanish domain by domain)
            g = project_zero_mean_array(self.gradient(uh) - b)
            res = float(np.linalg.norm(g))
            if res <= tol * (1.0 + ref):
                outer_iterations = it
                break
            if it == max_outer:
                raise HQCError(f"macro Newton did not converge (residual {res:.3e})")
            H = self.hessian(uh)
            op = GaugeFixedOperator(H, d)
            step = op.solve(-g)
            lam = 1.0
            base = self.energy(uh) - float(np.sum(b * u))
            while lam > 2.0**-30:
                trial_u = project_zero_mean_array(u + lam * step)
                trial = self.energy(P1Field(mesh, trial_u)) - float(np.sum(b * trial_u))
                if trial <= base + 1e-14 * (1 + abs(base)):
                    break
                lam *= 0.5
            else:
                raise HQCError("macro line search failed")
            u = project_zero_mean_array(u + lam * step)
        uh = p1_zero_mean(P1Field(mesh, u))
        return HQCSolution(macro=uh, operator=self, residual=res, iterations=outer_iterations)


@dataclass
class HQCSolution:
    """Converged macro field; micro states materialize on first access."""

    macro: P1Field
    operator: HQCOperator
    residual: float
    iterations: int = 0
    reconstructed: LatticeField | None = None
    _micro: dict[int, MicroState] | None = None

    @property
    def micro(self) -> dict[int, MicroState]:
        if self._micro is None:
            states = self.operator.element_states(self.macro)
            self._micro = {st.domain.element: st for st in states}
        return self._micro


# ------------------------------------------------------------- reconstruction


def owner_elements(mesh: MacroMesh, points: np.ndarray) -> np.ndarray:
    """Deterministic element ownership: interior points by location, boundary
    points by the containing element with lexicographically smallest barycenter."""
    pts = np.atleast_2d(np.mod(points, 1.0))
    owners = locate(mesh, pts)
    n = mesh.n
    scaled = pts * n
    frac = scaled - np.floor(scaled)
    on_axis = np.minimum(frac, 1.0 - frac) <= BOUNDARY_SNAP_TOL * n
    boundary = on_axis.any(axis=1)
    if mesh.d == 2:
        boundary |= np.abs(frac[:, 0] - frac[:, 1]) <= BOUNDARY_SNAP_TOL * n
    bary = mesh.barycenters()
    order = np.lexsort(bary.T[::-1])  # elements sorted by barycenter, lexicographically
    rank = np.empty(mesh.n_elements, dtype=int)
    rank[order] = np.arange(mesh.n_elements)
    for p in np.nonzero(boundary)[0]:
        candidates = _containing_elements(mesh, pts[p])
        owners[p] = min(candidates, key=lambda t: rank[t])
    return owners


def _containing_elements(mesh: MacroMesh, point: np.ndarray) -> list[int]:
    n = mesh.n
    base = np.floor(point * n).astype(int)
    cells = []
    for shift in np.ndindex(*(3,) * mesh.d):
        cells.append((base + np.array(shift) - 1) % n)
    candidates = set()
    for cell in cells:
        if mesh.d == 1:
            candidates.add(int(cell[0]))
        else:
            flat = 2 * (int(cell[0]) * n + int(cell[1]))
            candidates.update((flat, flat + 1))
    found = []
    for t in candidates:
        lam = barycentric_weights(mesh, point[None, :], np.array([t]))[0]
        # wrap distances: a point belongs to t if all barycentric weights are
        # in [0,1] up to snap tolerance within the element's periodic frame
        if np.all(lam >= -BOUNDARY_SNAP_TOL * n) and np.all(lam <= 1 + BOUNDARY_SNAP_TOL * n):
            found.append(t)
    return found if found else [int(locate(mesh, point[None, :])[0])]


def reconstruct(solution: HQCSolution) -> LatticeField:
    """Lattice-resolution field u^{h,c}: per element, the affine part plus the
    periodic tiling of the element's corrector over its interior sites."""
    op = solution.operator
    lat = op.lattice
    mesh = op.mesh
    pos = lat.site_positions()
    owners = owner_elements(mesh, pos)
    cells = lat.site_cells()
    species = lat.site_species()
    out = np.empty((lat.n_sites, lat.d))
    grads = all_element_gradients(solution.macro)
    for t in range(mesh.n_elements):
        mask = owners == t
        if not mask.any():
            continue
        st = solution.micro[t]
        dom = st.domain
        x0 = mesh.el_coords[t, 0]
        u0 = solution.macro.values[mesh.elements[t, 0]]
        rel = np.mod(pos[mask] - x0, 1.0)
        lin = u0[None, :] + rel @ grads[t].T
        tc = np.mod(cells[mask] - np.asarray(dom.anchor, dtype=int), dom.torus.cells_per_dim)
        flat = np.zeros(tc.shape[0], dtype=np.int64)
        for j in range(lat.d):
            flat = flat * dom.torus.cells_per_dim + tc[:, j]
        torus_sites = flat * lat.m + species[mask]
        out[mask] = lin + lat.eps_float * st.chi[torus_sites]
    result = LatticeField(lat, out)
    solution.reconstructed = result
    return result


# --------------------------------------------------------- module-level API


def hqc_energy(model, lattice, mesh, uh: P1Field, n_rep: int | None = None) -> float:
    return HQCOperator(model, lattice, mesh, n_rep=n_rep).energy(uh)


def affine_closure_energy(model, lattice, mesh, uh: P1Field, n_rep: int | None = None) -> float:
    """Cauchy-Born baseline: the HQC energy with correctors frozen at zero."""
    return HQCOperator(model, lattice, mesh, n_rep=n_rep, relax=False).energy(uh)


def hqc_rhs(model, lattice, mesh, f: LatticeField, n_rep: int | None = None) -> np.ndarray:
    return HQCOperator(model, lattice, mesh, n_rep=n_rep).rhs(f)


def solve_hqc(
    model,
    lattice,
    mesh,
    f: LatticeField | None = None,
    n_rep: int | None = None,
    tol: float = 1e-10,
    relax: bool = True,
) -> HQCSolution:
    op = HQCOperator(model, lattice, mesh, n_rep=n_rep, relax=relax,
                     micro_tol=min(MICRO_TOL, 0.01 * tol))
    load = op.rhs(f) if f is not None else None
    return op.solve(load=load, tol=tol)
