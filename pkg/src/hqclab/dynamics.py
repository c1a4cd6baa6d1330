"""Slow (zero-temperature) dynamics: velocity Verlet for the full atomistic
chain and for the HQC macro discretization with lumped masses.

The atomistic evolution solves M(x) u''(x) = -dE(u)(x) with the Riesz gradient
of the interaction energy; the macro evolution uses the averaged mass density
M0 = <M> lumped at the mesh nodes and the HQC nodal residual as the force.
Correctors are warm-started across time steps (no fast micro oscillations).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .atomistic import EquilibriumProblem, slowest_eigenmode, solve_equilibrium, total_energy
from .fem import MacroMesh, P1Field, p1_interpolate_lattice
from .hqc import HQCOperator, HQCSolution, reconstruct
from .lattice import LatticeField, Multilattice, discrete_derivative, nearest_neighbor_offsets


@dataclass
class DynamicState:
    """Displacement, velocity, and time of an evolving system."""

    u: np.ndarray
    v: np.ndarray
    t: float


def initial_condition(problem: EquilibriumProblem, amplitude: float = 0.01) -> LatticeField:
    """Equilibrium plus the slowest eigenmode, scaled so the mode's largest
    nearest-neighbor difference quotient equals ``amplitude``."""
    u_eq = solve_equilibrium(problem)
    mode, _ = slowest_eigenmode(problem, u_eq)
    dmax = 0.0
    for r in nearest_neighbor_offsets(problem.lattice):
        du = discrete_derivative(mode, r)
        dmax = max(dmax, float(np.max(np.abs(du.values))))
    return LatticeField(problem.lattice, u_eq.values + amplitude * mode.values / dmax)


def verlet_step(state: DynamicState, accel, tau: float) -> DynamicState:
    """One velocity-Verlet step: half kick, drift, force refresh, half kick."""
    a0 = accel(state.u)
    v_half = state.v + 0.5 * tau * a0
    u_new = state.u + tau * v_half
    a1 = accel(u_new)
    v_new = v_half + 0.5 * tau * a1
    return DynamicState(u=u_new, v=v_new, t=state.t + tau)


@dataclass
class Trajectory:
    times: np.ndarray
    displacements: list[np.ndarray]
    velocities: list[np.ndarray]
    energies: np.ndarray


def atomistic_accel(problem: EquilibriumProblem):
    masses = problem.masses
    if masses is None:
        masses = np.ones(problem.lattice.n_sites)
    system = problem.system

    def accel(u: np.ndarray) -> np.ndarray:
        return -system.gradient(u) / masses[:, None]

    return accel


def atomistic_total_energy(problem: EquilibriumProblem, state: DynamicState) -> float:
    """Kinetic plus interaction energy in the site-averaged convention."""
    masses = problem.masses if problem.masses is not None else np.ones(problem.lattice.n_sites)
    kinetic = 0.5 * float(np.mean(masses * np.sum(state.v**2, axis=1)))
    return kinetic + total_energy(problem, LatticeField(problem.lattice, state.u))


def run_atomistic_dynamics(
    problem: EquilibriumProblem,
    u0: LatticeField,
    t_final: float,
    tau: float,
    sample_every: int = 1,
) -> Trajectory:
    """Verlet evolution from rest; samples every ``sample_every``-th step.

    Raises if the total energy grows beyond a blow-up threshold (instability).
    """
    accel = atomistic_accel(problem)
    n_steps = int(round(t_final / tau))
    state = DynamicState(u=u0.values.copy(), v=np.zeros_like(u0.values), t=0.0)
    e0 = atomistic_total_energy(problem, state)
    scale = max(abs(e0), 1.0)
    times = [0.0]
    disp = [state.u.copy()]
    vel = [state.v.copy()]
    energies = [e0]
    for k in range(1, n_steps + 1):
        state = verlet_step(state, accel, tau)
        e = atomistic_total_energy(problem, state)
        if not np.isfinite(e) or abs(e - e0) > 1e3 * scale:
            raise RuntimeError(f"atomistic dynamics blew up at t = {state.t:.6g}")
        if k % sample_every == 0 or k == n_steps:
            times.append(state.t)
            disp.append(state.u.copy())
            vel.append(state.v.copy())
            energies.append(e)
    return Trajectory(np.array(times), disp, vel, np.array(energies))


def energy_drift(traj: Trajectory) -> float:
    e0 = traj.energies[0]
    return float(np.max(np.abs(traj.energies - e0)) / max(abs(e0), 1.0))


@dataclass
class MacroTrajectory:
    times: np.ndarray
    macro: list[np.ndarray]
    reconstructions: list[LatticeField]


def lumped_node_masses(mesh: MacroMesh, mass_density: float) -> np.ndarray:
    """Diagonal macro mass: averaged density times the nodal share of the domain."""
    return mass_density * mesh.vertex_weights()


def run_hqc_dynamics(
    model,
    lattice: Multilattice,
    mesh: MacroMesh,
    species_masses,
    u0_lattice: LatticeField,
    t_final: float,
    tau: float,
) -> MacroTrajectory:
    """HQC-discretized slow dynamics with lumped macro masses.

    The initial macro displacement interpolates the atomistic initial state at
    the mesh vertices; initial velocity is zero.  Reconstructions are stored at
    every macro step.
    """
    op = HQCOperator(model, lattice, mesh)
    m0 = float(np.mean(species_masses))
    node_mass = lumped_node_masses(mesh, m0)
    u_init = p1_interpolate_lattice(mesh, u0_lattice)

    def accel(u: np.ndarray) -> np.ndarray:
        g = op.gradient(P1Field(mesh, u))
        return -g / node_mass[:, None]

    n_steps = int(round(t_final / tau))
    state = DynamicState(u=u_init.values.copy(), v=np.zeros_like(u_init.values), t=0.0)
    times = [0.0]
    macro = [state.u.copy()]
    recon = [_reconstruct_now(op, mesh, state.u)]
    for _ in range(n_steps):
        state = verlet_step(state, accel, tau)
        times.append(state.t)
        macro.append(state.u.copy())
        recon.append(_reconstruct_now(op, mesh, state.u))
    return MacroTrajectory(np.array(times), macro, recon)


def _reconstruct_now(op: HQCOperator, mesh: MacroMesh, u: np.ndarray) -> LatticeField:
    sol = HQCSolution(macro=P1Field(mesh, u), operator=op, residual=0.0)
    return reconstruct(sol)


def export_trajectory_csv(path: str, times: np.ndarray, displacements: list[np.ndarray]) -> None:
    """Write trajectory snapshots as CSV rows (time, site, displacement components)."""
    d = displacements[0].shape[1]
    header = "time,site," + ",".join(f"u{i}" for i in range(d))
    lines = [header]
    for t, u in zip(times, displacements):
        for site in range(u.shape[0]):
            comps = ",".join(f"{u[site, i]:.17g}" for i in range(d))
            lines.append(f"{t:.17g},{site},{comps}")
    from pathlib import Path

    Path(path).write_text("\n".join(lines) + "\n")


def trajectory_error(
    times: np.ndarray,
    reference: list[LatticeField],
    approx: list[LatticeField],
) -> tuple[float, float]:
    """Space-time error norms between two sampled lattice trajectories.

    Returns (max-over-time L2 error, trapezoid-in-time H1 error); a single
    common sample reduces to the static (L2, H1) pair.
    """
    from .lattice import discrete_norms

    if len(reference) != len(approx) or len(reference) != len(times):
        raise ValueError("trajectories must share their sample times")
    l2s, h1s = [], []
    for ref, app in zip(reference, approx):
        diff = LatticeField(ref.lattice, app.values - ref.values)
        l2, h1 = discrete_norms(diff)
        l2s.append(l2)
        h1s.append(h1)
    linf_l2 = float(np.max(l2s))
    if len(times) == 1:
        return linf_l2, float(h1s[0])
    l2_h1 = float(np.sqrt(np.trapezoid(np.asarray(h1s) ** 2, np.asarray(times))))
    return linf_l2, l2_h1
