"""Time-domain solver for b u_tt + curl(a curl u) = f with u x nu = 0.

Newmark average acceleration (beta=1/4, gamma=1/2), implemented in the
algebraically identical one-solve trapezoidal velocity form

    (M + dt^2/4 K) v_{n+1} = (M - dt^2/4 K) v_n + dt (F_{n+1/2} - K u_n)
    u_{n+1} = u_n + dt/2 (v_n + v_{n+1})

which conserves the discrete energy E = 1/2 (v'Mv + u'Ku) exactly for f = 0.
All systems live on interior edge DOFs (boundary circulations eliminated).
"""

from dataclasses import dataclass, field
import struct

import numpy as np

from . import fem
from .coeffs import fine_callable
from .mesh import DomainMesh


class WaveSetupError(ValueError):
    pass


class Forcing:
    """Separable forcing theta(t) * F0(x); cheap because the load assembles once."""

    def __init__(self, space_fn, time_fn=None):
        self.space_fn = space_fn
        self.time_fn = time_fn or (lambda t: 1.0)


@dataclass
class WaveData:
    """Closed-form data and time parameters of one run.

    g0/g1: vectorized x -> (npts, d) (None means zero).  f: a Forcing, a plain
    callable f(t, pts) -> (npts, d), or None.  store_every thins the DOF
    snapshots kept on the trajectory; energies and probes are kept per step.
    """

    T: float
    dt: float
    g0: object = None
    g1: object = None
    f: object = None
    store_every: int = 1
    probe_edges: tuple = ()
    tol: float = 1e-12

    def __post_init__(self):
        if self.dt <= 0 or self.T < self.dt:
            raise WaveSetupError("need dt > 0 and T >= dt")
        if self.store_every < 1:
            raise WaveSetupError("store_every must be >= 1")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))


@dataclass
class WaveProblem:
    kind: str
    mesh: DomainMesh
    M: fem.SparseSymSystem
    K: fem.SparseSymSystem
    data: WaveData
    quad_rule: int = 2
    step_system: fem.SparseSymSystem = None
    f_load: np.ndarray = None   # static part of a separable forcing

    def __post_init__(self):
        dt = self.data.dt
        L = (self.M.A + (dt * dt / 4.0) * self.K.A).tocsr()
        self.step_system = fem.SparseSymSystem(self.M.n, L, nullspace="none")
        if isinstance(self.data.f, Forcing):
            self.f_load = fem.assemble_load(self.mesh, self.data.f.space_fn,
                                            rule=self.quad_rule)

    def load_at(self, t):
        if self.data.f is None:
            return None
        if isinstance(self.data.f, Forcing):
            return self.data.f.time_fn(t) * self.f_load
        return fem.assemble_load(self.mesh, self.data.f, rule=self.quad_rule, t=t)

    def interpolate_initial(self, fn, name):
        """Edge-interpolate closed-form data; enforce the zero tangential trace."""
        if fn is None:
            return np.zeros(self.mesh.n_interior_edges)
        full = fem.edge_interpolate(self.mesh, fn)
        bmask = self.mesh.boundary_edge_mask
        scale = np.abs(full).max() + 1e-300
        if np.abs(full[bmask]).max() > 1e-8 * scale:
            raise WaveSetupError(
                f"{name} has a nonzero tangential trace on the boundary "
                f"(max {np.abs(full[bmask]).max():.3e} vs field scale {scale:.3e})")
        return full[self.mesh.interior_edges]


@dataclass
class WaveTrajectory:
    """Per-step energies/probes plus thinned DOF snapshots of (u, du/dt)."""

    mesh: DomainMesh
    dt: float
    step_times: np.ndarray
    energies: np.ndarray
    probe_values: np.ndarray
    snap_times: np.ndarray
    snap_steps: np.ndarray
    U: np.ndarray          # (n_snaps, n_interior)
    V: np.ndarray
    kind: str = "fine"

    @property
    def n_snaps(self):
        return len(self.snap_times)


def _coefficient_callables(kind, mesh, spec=None, schedule=None, hom=None):
    if kind == "fine":
        if spec is None or schedule is None:
            raise WaveSetupError("fine runs need a coefficient spec and a schedule")
        eps_n = schedule.epsilons[-1]
        if mesh.h > eps_n / 4 + 1e-12:
            needed = int(np.ceil(4 * mesh.extent / eps_n))
            raise WaveSetupError(
                f"fine mesh under-resolves eps_n={eps_n:g}: h={mesh.h:g} > eps_n/4; "
                f"need N >= {needed}")
        return fine_callable(spec, schedule, "a"), fine_callable(spec, schedule, "b")
    if kind == "homogenized":
        if hom is None:
            raise WaveSetupError("homogenized runs need a HomogenizationResult")
        a0 = hom.a0_interp(mesh.extent)
        b0 = hom.b0_interp(mesh.extent)
        return a0, b0
    raise WaveSetupError(f"unknown problem kind {kind!r}")


def setup_problem(kind, mesh, data, spec=None, schedule=None, hom=None, quad_rule=2):
    """Assemble mass/stiffness for a fine or homogenized run.

    quad_rule is the per-axis Gauss order of the coefficient reduction on the
    domain mesh (2 by default, 3 for trigonometric-family coefficients).
    """
    a_fn, b_fn = _coefficient_callables(kind, mesh, spec, schedule, hom)
    K, _ = fem.assemble_curl_stiffness(mesh, a_fn, rule=quad_rule)
    M, _ = fem.assemble_vector_mass(mesh, b_fn, rule=quad_rule)
    return WaveProblem(kind, mesh, M, K, data, quad_rule)


def energy(problem, u, v):
    """Discrete energy 1/2 (v'Mv + u'Ku) >= 0 of an interior-DOF state."""
    return 0.5 * (v @ (problem.M.A @ v) + u @ (problem.K.A @ u))


def integrate(problem, u0=None, v0=None):
    """Run the time loop; u0/v0 override the interpolated initial data."""
    data = problem.data
    mesh = problem.mesh
    dt = data.dt
    nsteps = data.n_steps
    u = problem.interpolate_initial(data.g0, "g0") if u0 is None else np.asarray(u0, float).copy()
    v = problem.interpolate_initial(data.g1, "g1") if v0 is None else np.asarray(v0, float).copy()

    store = set(range(0, nsteps + 1, data.store_every))
    store.add(nsteps)
    probes = np.asarray(data.probe_edges, dtype=np.int64)
    step_times = np.arange(nsteps + 1) * dt
    energies = np.empty(nsteps + 1)
    probe_values = np.empty((nsteps + 1, len(probes)))
    snaps_u, snaps_v, snap_steps = [], [], []

    Fb = problem.load_at(0.0)
    for n in range(nsteps + 1):
        Ku = problem.K.A @ u
        Mv = problem.M.A @ v
        energies[n] = 0.5 * (v @ Mv + u @ Ku)
        probe_values[n] = u[probes] if len(probes) else ()
        if n in store:
            snaps_u.append(u.copy())
            snaps_v.append(v.copy())
            snap_steps.append(n)
        if n == nsteps:
            break
        t_next = (n + 1) * dt
        rhs = Mv - (dt * dt / 4.0) * (problem.K.A @ v) - dt * Ku
        if Fb is not None:
            Fnext = problem.load_at(t_next)
            rhs = rhs + (dt / 2.0) * (Fb + Fnext)
            Fb = Fnext
        v_new = fem.solve_spd(problem.step_system, rhs, rel_tol=data.tol, x0=v)
        u = u + (dt / 2.0) * (v + v_new)
        v = v_new

    return WaveTrajectory(
        mesh=mesh, dt=dt, step_times=step_times, energies=energies,
        probe_values=probe_values,
        snap_times=np.array(snap_steps, dtype=float) * dt,
        snap_steps=np.array(snap_steps, dtype=np.int64),
        U=np.array(snaps_u), V=np.array(snaps_v), kind=problem.kind)


# ---------------------------------------------------------------------------
# exports

def export_trajectory_csv(traj, path):
    """Per-step CSV: t, energy, probe edge values (17 significant digits)."""
    ncols = traj.probe_values.shape[1]
    header = "t,energy" + "".join(f",probe{i}" for i in range(ncols))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i, t in enumerate(traj.step_times):
            row = [f"{t:.17g}", f"{traj.energies[i]:.17g}"]
            row += [f"{v:.17g}" for v in traj.probe_values[i]]
            fh.write(",".join(row) + "\n")


_SNAP_MAGIC = b"MXHMSNP1"


def export_snapshots(traj, path):
    """Flat little-endian binary dump of the stored DOF snapshots.

    Layout: magic 'MXHMSNP1'; int64 d, N, n_interior, n_snaps; float64 extent,
    dt; then snap_times (n_snaps float64), U (n_snaps * n_interior float64,
    C order), V (same).
    """
    mesh = traj.mesh
    with open(path, "wb") as fh:
        fh.write(_SNAP_MAGIC)
        fh.write(struct.pack("<4q", mesh.d, mesh.N, traj.U.shape[1], traj.n_snaps))
        fh.write(struct.pack("<2d", mesh.extent, traj.dt))
        fh.write(traj.snap_times.astype("<f8").tobytes())
        fh.write(traj.U.astype("<f8").tobytes())
        fh.write(traj.V.astype("<f8").tobytes())


def read_snapshots(path):
    """Inverse of export_snapshots: returns a dict of arrays and parameters."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _SNAP_MAGIC:
            raise WaveSetupError("not a maxhom snapshot file")
        d, N, nint, nsnap = struct.unpack("<4q", fh.read(32))
        extent, dt = struct.unpack("<2d", fh.read(16))
        times = np.frombuffer(fh.read(8 * nsnap), dtype="<f8")
        U = np.frombuffer(fh.read(8 * nsnap * nint), dtype="<f8").reshape(nsnap, nint)
        V = np.frombuffer(fh.read(8 * nsnap * nint), dtype="<f8").reshape(nsnap, nint)
    return {"d": d, "N": N, "extent": extent, "dt": dt,
            "times": times, "U": U, "V": V}
