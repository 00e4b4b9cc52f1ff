"""Time grids, Brownian ensembles and forward simulation of the controlled
state equation, plus the two path-surgery operations (concatenation of a
path with a continuation, and pasting of controls on selected paths).

Randomness is counter-based: the increments of path ``p`` are the standard
normals of a Philox stream keyed ``(seed, p)``, reshaped to ``(n_steps, d)``
and scaled by ``sqrt(dt)``.  The draw for one path never depends on how many
other paths exist or in which order they are filled, so output is
bit-reproducible across platforms and any worker layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import GameProblem, NumericsError, ProblemError

__all__ = [
    "TimeGrid",
    "PathEnsemble",
    "StatePaths",
    "ControlPath",
    "simulate_brownian",
    "euler_forward",
    "concat_paths",
    "paste_controls",
    "constant_controls",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 = knots[0] < ... < knots[n_steps] = T."""

    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ProblemError("n_steps must be >= 1")
        if not self.T > self.t0:
            raise ProblemError(f"need T > t0, got t0={self.t0}, T={self.T}")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def knots(self) -> np.ndarray:
        return np.linspace(self.t0, self.T, self.n_steps + 1)

    def index_of(self, s, tol=1e-9) -> int:
        """Index of the knot equal to ``s`` (error if ``s`` is off-grid)."""
        idx = int(round((s - self.t0) / self.dt))
        if idx < 0 or idx > self.n_steps or abs(self.t0 + idx * self.dt - s) > tol:
            raise ProblemError(f"{s!r} is not a knot of {self}")
        return idx

    def restrict_from(self, s) -> "TimeGrid":
        """Sub-grid on [s, T] sharing the knots of this grid."""
        idx = self.index_of(s)
        if idx == self.n_steps:
            raise ProblemError("cannot restrict to the empty interval [T, T]")
        return TimeGrid(t0=float(self.knots[idx]), T=self.T, n_steps=self.n_steps - idx)


@dataclass
class PathEnsemble:
    """Brownian increments dW (n_paths, n_steps, d), variance dt each."""

    grid: TimeGrid
    n_paths: int
    d: int
    seed: int
    dW: np.ndarray

    def to_csv(self) -> str:
        return _paths_csv(self.dW)


@dataclass
class StatePaths:
    """Simulated states X (n_paths, n_steps + 1, k) with X[:, 0] = x0.

    ``ens`` keeps a reference to the driving ensemble so backward solvers
    can reuse the same increments.
    """

    grid: TimeGrid
    X: np.ndarray
    x0: np.ndarray
    ens: PathEnsemble = None

    def to_csv(self) -> str:
        return _paths_csv(self.X)


@dataclass
class ControlPath:
    """Per-path, per-step indices into a control grid, shape (n_paths, n_steps)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.ndim != 2:
            raise ProblemError("control path values must be (n_paths, n_steps)")
        if np.any(self.values < 0):
            raise ProblemError("control indices must be nonnegative")

    def check_range(self, grid_size: int):
        if np.any(self.values >= grid_size):
            raise ProblemError("control index out of range for the control grid")


def constant_controls(n_paths: int, n_steps: int, index: int = 0) -> ControlPath:
    return ControlPath(values=np.full((n_paths, n_steps), index, dtype=np.int64))


def _paths_csv(arr) -> str:
    """CSV dump with header path,step,coord,value."""
    lines = ["path,step,coord,value"]
    n_paths, n_steps, n_coord = arr.shape
    for ip in range(n_paths):
        for js in range(n_steps):
            for c in range(n_coord):
                lines.append(f"{ip},{js},{c},{arr[ip, js, c]:.17g}")
    return "\n".join(lines) + "\n"


def simulate_brownian(grid: TimeGrid, n_paths: int, d: int, seed: int) -> PathEnsemble:
    """Draw the Brownian increment array for ``n_paths`` independent paths."""
    if n_paths < 1:
        raise ProblemError("n_paths must be >= 1")
    if d < 1:
        raise ProblemError("d must be >= 1")
    scale = np.sqrt(grid.dt)
    key_hi = np.uint64(seed % (2 ** 64))
    dW = np.empty((n_paths, grid.n_steps, d))
    for ip in range(n_paths):
        bitgen = np.random.Philox(key=np.array([key_hi, ip], dtype=np.uint64))
        dW[ip] = np.random.Generator(bitgen).standard_normal((grid.n_steps, d))
    dW *= scale
    return PathEnsemble(grid=grid, n_paths=n_paths, d=d, seed=seed, dW=dW)


def euler_forward(p: GameProblem, ens: PathEnsemble, x0, mu: ControlPath,
                  nu: ControlPath) -> StatePaths:
    """Explicit forward step X_{j+1} = X_j + b dt + sigma dW_j along every path.

    Coefficients are evaluated in batches grouped by the control pair active
    at the step, so the per-step cost is one vectorised call per distinct
    (u, v) combination.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (p.state_dim,):
        raise ProblemError(f"x0 must have shape ({p.state_dim},)")
    n_paths, n_steps = ens.n_paths, ens.grid.n_steps
    if ens.d != p.noise_dim:
        raise ProblemError("ensemble noise dimension does not match the problem")
    for cp, grid in ((mu, p.u_grid), (nu, p.v_grid)):
        if cp.values.shape != (n_paths, n_steps):
            raise ProblemError("control path shape does not match the ensemble")
        cp.check_range(grid.size)

    dt = ens.grid.dt
    knots = ens.grid.knots
    X = np.empty((n_paths, n_steps + 1, p.state_dim))
    X[:, 0] = x0
    for j in range(n_steps):
        t = float(knots[j])
        xj = X[:, j]
        xn = X[:, j + 1]
        pair_codes = mu.values[:, j] * (np.max(nu.values[:, j]) + 1) + nu.values[:, j]
        for code in np.unique(pair_codes):
            idx = np.nonzero(pair_codes == code)[0]
            ui = int(mu.values[idx[0], j])
            vi = int(nu.values[idx[0], j])
            u = p.u_grid.point(ui)
            v = p.v_grid.point(vi)
            xb = xj[idx]
            bv = np.asarray(p.drift(t, xb, u, v), dtype=float)
            sv = np.asarray(p.diffusion(t, xb, u, v), dtype=float)
            xn[idx] = xb + bv * dt + np.einsum("mkd,md->mk", sv, ens.dW[idx, j])
        bad = ~np.isfinite(xn).all(axis=1)
        if bad.any():
            ip = int(np.nonzero(bad)[0][0])
            raise NumericsError(f"non-finite state at step {j + 1}, path {ip}")
    return StatePaths(grid=ens.grid, X=X, x0=x0, ens=ens)


def concat_paths(grid: TimeGrid, omega: np.ndarray, s, omega_tilde: np.ndarray) -> np.ndarray:
    """Concatenate a path on [t0, T] with a continuation on [s, T].

    The result equals ``omega`` before the knot ``s`` and ``omega(s) +
    omega_tilde(r)`` from ``s`` on; because the continuation starts at zero
    the spliced path has no jump at ``s``.
    """
    omega = np.asarray(omega, dtype=float)
    omega_tilde = np.asarray(omega_tilde, dtype=float)
    if omega.shape[0] != grid.n_steps + 1:
        raise ProblemError("omega does not live on the given grid")
    idx = grid.index_of(s)
    if omega_tilde.shape[0] != grid.n_steps + 1 - idx:
        raise ProblemError("omega_tilde does not live on the sub-grid from s to T")
    if omega_tilde.shape[1:] != omega.shape[1:]:
        raise ProblemError("coordinate dimensions of the two paths differ")
    if np.max(np.abs(omega_tilde[0])) > 1e-12:
        raise ProblemError("continuation path must start at 0")
    out = omega.copy()
    out[idx:] = omega[idx] + omega_tilde
    return out


def paste_controls(mu: ControlPath, replacements) -> ControlPath:
    """Swap in replacement controls from a knot onward on selected paths.

    ``replacements`` is a list of ``(path_indices, knot_index, values)``
    where ``values`` covers the steps ``knot_index .. n_steps - 1`` either
    as a single row (shared by the whole path set) or one row per path.
    Path sets must be disjoint; unlisted paths keep ``mu`` unchanged.
    """
    n_paths, n_steps = mu.values.shape
    out = mu.values.copy()
    seen = np.zeros(n_paths, dtype=bool)
    for path_set, knot, repl in replacements:
        idx = np.asarray(path_set, dtype=np.int64).ravel()
        if idx.size == 0:
            continue
        if np.any(idx < 0) or np.any(idx >= n_paths):
            raise ProblemError("path index out of range")
        if np.any(seen[idx]):
            raise ProblemError("replacement path sets overlap")
        seen[idx] = True
        knot = int(knot)
        if knot < 0 or knot > n_steps:
            raise ProblemError(f"knot index {knot} out of range")
        width = n_steps - knot
        vals = np.asarray(repl, dtype=np.int64)
        if vals.ndim == 1:
            if vals.shape[0] != width:
                raise ProblemError("replacement does not cover [knot, T]")
            out[idx, knot:] = vals[None, :]
        else:
            if vals.shape != (idx.size, width):
                raise ProblemError("replacement does not cover [knot, T]")
            out[idx, knot:] = vals
    return ControlPath(values=out)
