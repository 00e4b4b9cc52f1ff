"""Backward solvers for the discretised doubly reflected equation.

Both solvers run the same explicit recursion per retained point:

    E      = conditional expectation of the next-layer Y
    Z      = conditional expectation of (next-layer Y * dW) / dt
    y_hat  = E + f(t, x, E, Z, u, v) * dt
    Y      = clamp(y_hat) into [l_lo(t,x), l_hi(t,x)]
    dK_lo  = (l_lo - y_hat)^+ ,  dK_hi = (y_hat - l_hi)^+

so each pushing process increments exactly by the clamp overshoot and the
discrete flat-off sums vanish identically: wherever dK_lo > 0 the clamped Y
equals the lower barrier (same for the upper side).  The lattice solver
computes the expectations from the transition stencils; the Monte Carlo
solver replaces them with cross-sectional least-squares projections on
basis functions of the state.

The explicit treatment of the generator is stable because gamma * dt < 1 is
enforced at lattice construction; it also makes the one-step map monotone
in the terminal data, the obstacles and the generator, which turns the
comparison theorem into an exactly assertable property in lattice mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GameProblem, NumericsError, ProblemError
from .game import Lattice, lattice_occupancy
from .paths import StatePaths, TimeGrid

__all__ = [
    "DrbsdeSolution",
    "OrderingReport",
    "StabilityReport",
    "RegressionError",
    "solve_drbsde_lattice",
    "solve_drbsde_lsmc",
    "check_flat_off",
    "compare_drbsde",
    "stability_gap",
]


class RegressionError(NumericsError):
    """Cross-sectional regression cannot be formed (too few paths, bad data)."""


@dataclass
class DrbsdeSolution:
    """Discrete (Y, Z, K_lo, K_hi) fields over (time knot, node or path).

    K_lo and K_hi are cumulative from t0 (first row zero, nondecreasing);
    the increment attributed to knot j is K[j + 1] - K[j].
    """

    grid: TimeGrid
    Y: np.ndarray
    Z: np.ndarray
    K_lo: np.ndarray
    K_hi: np.ndarray
    mode: str
    se_root: float = None

    @property
    def root(self) -> float:
        return float(self.Y[0, 0]) if self.mode == "lsmc" else float(np.nan)

    def root_at(self, index: int) -> float:
        return float(self.Y[0, index])

    def to_csv(self) -> str:
        d = self.Z.shape[2]
        zcols = ",".join(f"Z{c}" for c in range(d))
        lines = [f"time,point,Y,{zcols},K_lo,K_hi"]
        knots = self.grid.knots
        for j in range(self.Y.shape[0]):
            for i in range(self.Y.shape[1]):
                zs = ",".join(f"{self.Z[j, i, c]:.17g}" for c in range(d))
                lines.append(
                    f"{knots[j]:.17g},{i},{self.Y[j, i]:.17g},{zs},"
                    f"{self.K_lo[j, i]:.17g},{self.K_hi[j, i]:.17g}"
                )
        return "\n".join(lines) + "\n"


def _check_terminal_sandwich(lo, y, hi, what):
    viol = max(float(np.max(lo - y)), float(np.max(y - hi)))
    if viol > 1e-12:
        raise ProblemError(
            f"obstacle violation at the terminal layer ({what}): "
            f"margin {viol:.3e}; the problem data are inconsistent"
        )


# ---------------------------------------------------------------------------
# lattice mode
# ---------------------------------------------------------------------------

def _lattice_controls(ctrl, n_steps, n_nodes, grid_size, name):
    if np.isscalar(ctrl) or isinstance(ctrl, (int, np.integer)):
        idx = int(ctrl)
        if not 0 <= idx < grid_size:
            raise ProblemError(f"{name} control index out of range")
        return None, idx
    arr = np.asarray(ctrl, dtype=np.int64)
    if arr.shape != (n_steps, n_nodes):
        raise ProblemError(
            f"{name} node-control assignment must be an index or an array "
            f"of shape ({n_steps}, {n_nodes})"
        )
    if arr.min() < 0 or arr.max() >= grid_size:
        raise ProblemError(f"{name} control index out of range")
    return arr, None


def solve_drbsde_lattice(p: GameProblem, lat: Lattice, mu=0, nu=0) -> DrbsdeSolution:
    """Backward clamp recursion on the lattice under fixed node controls.

    ``mu``/``nu`` are either a single grid index (control frozen everywhere)
    or (n_steps, n_nodes) index tables.
    """
    n_steps, n_u, n_v, n = lat.p_up.shape
    mu_tab, mu_c = _lattice_controls(mu, n_steps, n, p.u_grid.size, "mu")
    nu_tab, nu_c = _lattice_controls(nu, n_steps, n, p.v_grid.size, "nu")
    if p.u_grid.size > n_u or p.v_grid.size > n_v:
        raise ProblemError("lattice was built for a smaller control grid")

    dt = lat.grid.dt
    knots = lat.grid.knots
    xb = lat.x_nodes[:, None]
    Y = np.empty((n_steps + 1, n))
    Z = np.zeros((n_steps + 1, n, p.noise_dim))
    dK_lo = np.zeros((n_steps, n))
    dK_hi = np.zeros((n_steps, n))

    Y[-1] = np.asarray(p.terminal(xb), dtype=float)
    loT = np.asarray(p.lower_obstacle(p.horizon, xb), dtype=float)
    hiT = np.asarray(p.upper_obstacle(p.horizon, xb), dtype=float)
    _check_terminal_sandwich(loT, Y[-1], hiT, "lattice")

    nodes = np.arange(n)
    for j in range(n_steps - 1, -1, -1):
        t = float(knots[j])
        nxt = Y[j + 1]
        if mu_tab is None and nu_tab is None:
            e = lat.expectation(j, nxt, mu_c, nu_c)
            z = lat.z_moment(j, nxt, mu_c, nu_c)
            fv = np.asarray(p.generator(t, xb, e, z[:, None],
                                        p.u_grid.point(mu_c),
                                        p.v_grid.point(nu_c)), dtype=float)
        else:
            mrow = mu_tab[j] if mu_tab is not None else np.full(n, mu_c)
            nrow = nu_tab[j] if nu_tab is not None else np.full(n, nu_c)
            e = np.empty(n)
            z = np.empty(n)
            fv = np.empty(n)
            for ui in np.unique(mrow):
                for vi in np.unique(nrow):
                    sel = nodes[(mrow == ui) & (nrow == vi)]
                    if sel.size == 0:
                        continue
                    e_all = lat.expectation(j, nxt, ui, vi)
                    z_all = lat.z_moment(j, nxt, ui, vi)
                    e[sel] = e_all[sel]
                    z[sel] = z_all[sel]
                    fv[sel] = np.asarray(p.generator(
                        t, xb[sel], e[sel], z[sel][:, None],
                        p.u_grid.point(int(ui)), p.v_grid.point(int(vi))),
                        dtype=float)
        y_hat = e + dt * fv
        lo = np.asarray(p.lower_obstacle(t, xb), dtype=float)
        hi = np.asarray(p.upper_obstacle(t, xb), dtype=float)
        dK_lo[j] = np.maximum(lo - y_hat, 0.0)
        dK_hi[j] = np.maximum(y_hat - hi, 0.0)
        Y[j] = np.minimum(hi, np.maximum(lo, y_hat))
        Z[j, :, 0] = z
        if not np.all(np.isfinite(Y[j])):
            raise NumericsError(f"non-finite Y layer at time index {j}")

    K_lo = np.vstack([np.zeros((1, n)), np.cumsum(dK_lo, axis=0)])
    K_hi = np.vstack([np.zeros((1, n)), np.cumsum(dK_hi, axis=0)])
    return DrbsdeSolution(grid=lat.grid, Y=Y, Z=Z, K_lo=K_lo, K_hi=K_hi,
                          mode="lattice")


# ---------------------------------------------------------------------------
# least-squares Monte Carlo mode
# ---------------------------------------------------------------------------

def _basis_matrix(p, t, x, basis, degree, n_bins):
    """Design matrix for the cross-sectional projection at one time layer.

    ``poly``: intercept, per-coordinate monomials up to ``degree``, and the
    two obstacle values at (t, x) as extra regressors (they carry the kink
    of the value function near the barriers).  Collinear columns (constant
    obstacles, or a degenerate cross-section) are harmless: the projection
    is computed with a rank-revealing least-squares solve.

    ``bins``: scalar state only; indicator columns of ``n_bins`` quantile
    cells, i.e. a piecewise-constant conditional-mean estimate.
    """
    n, k = x.shape
    if basis == "poly":
        cols = [np.ones(n)]
        for c in range(k):
            for dgr in range(1, degree + 1):
                cols.append(x[:, c] ** dgr)
        cols.append(np.asarray(p.lower_obstacle(t, x), dtype=float))
        cols.append(np.asarray(p.upper_obstacle(t, x), dtype=float))
        return np.column_stack(cols)
    if basis == "bins":
        if k != 1:
            raise ProblemError("bins basis supports scalar states only")
        edges = np.quantile(x[:, 0], np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
        cell = np.digitize(x[:, 0], edges)
        design = np.zeros((n, n_bins))
        design[np.arange(n), cell] = 1.0
        return design
    raise ProblemError(f"unknown basis {basis!r}; use 'poly' or 'bins'")


def _project(design, targets, step):
    n, nb = design.shape
    if n < nb:
        raise RegressionError(
            f"rank-deficient regression at step {step}: {n} paths for "
            f"{nb} basis functions"
        )
    if not np.all(np.isfinite(design)):
        raise RegressionError(f"non-finite design matrix at step {step}")
    coef, _, rank, _ = np.linalg.lstsq(design, targets, rcond=None)
    if rank == 0:
        raise RegressionError(f"rank-deficient regression at step {step}")
    return design @ coef


def _lsmc_backward(p, X, dW, mu_vals, nu_vals, basis, degree, n_bins, knots, dt):
    n_paths, n_plus1, k = X.shape
    n_steps = n_plus1 - 1
    d = dW.shape[2]

    Y = np.empty((n_steps + 1, n_paths))
    Z = np.zeros((n_steps + 1, n_paths, d))
    dK_lo = np.zeros((n_steps, n_paths))
    dK_hi = np.zeros((n_steps, n_paths))

    xT = X[:, n_steps]
    Y[-1] = np.asarray(p.terminal(xT), dtype=float)
    loT = np.asarray(p.lower_obstacle(p.horizon, xT), dtype=float)
    hiT = np.asarray(p.upper_obstacle(p.horizon, xT), dtype=float)
    _check_terminal_sandwich(loT, Y[-1], hiT, "lsmc")

    for j in range(n_steps - 1, -1, -1):
        t = float(knots[j])
        xj = X[:, j]
        targets = np.column_stack([Y[j + 1]] +
                                  [Y[j + 1] * dW[:, j, c] for c in range(d)])
        design = _basis_matrix(p, t, xj, basis, degree, n_bins)
        fit = _project(design, targets, j)
        e = fit[:, 0]
        z = fit[:, 1:] / dt

        fv = np.empty(n_paths)
        pair = mu_vals[:, j] * (np.max(nu_vals[:, j]) + 1) + nu_vals[:, j]
        for code in np.unique(pair):
            sel = np.nonzero(pair == code)[0]
            ui = int(mu_vals[sel[0], j])
            vi = int(nu_vals[sel[0], j])
            fv[sel] = np.asarray(p.generator(
                t, xj[sel], e[sel], z[sel], p.u_grid.point(ui),
                p.v_grid.point(vi)), dtype=float)
        y_hat = e + dt * fv
        lo = np.asarray(p.lower_obstacle(t, xj), dtype=float)
        hi = np.asarray(p.upper_obstacle(t, xj), dtype=float)
        dK_lo[j] = np.maximum(lo - y_hat, 0.0)
        dK_hi[j] = np.maximum(y_hat - hi, 0.0)
        Y[j] = np.minimum(hi, np.maximum(lo, y_hat))
        Z[j] = z
        if not np.all(np.isfinite(Y[j])):
            raise NumericsError(f"non-finite Y layer at time index {j}")

    K_lo = np.vstack([np.zeros((1, n_paths)), np.cumsum(dK_lo, axis=0)])
    K_hi = np.vstack([np.zeros((1, n_paths)), np.cumsum(dK_hi, axis=0)])
    return Y, Z, K_lo, K_hi


def solve_drbsde_lsmc(p: GameProblem, states: StatePaths, mu, nu,
                      basis: str = "poly", degree: int = 3, n_bins: int = 25,
                      se_batches: int = 20) -> DrbsdeSolution:
    """Regression-based backward solve along simulated paths.

    Conditional expectations of Y_{j+1} (and of Y_{j+1} dW_j for Z) are
    least-squares projections on basis functions of X_j; clamping and the K
    increments proceed exactly as in lattice mode.  At the initial layer
    the cross-section is a point, so the projection degenerates to the
    plain sample mean, which is the correct conditional expectation there.

    ``se_batches > 0`` additionally reruns the recursion on that many
    disjoint path batches and stores the batch-means standard error of the
    root value in ``se_root`` (this captures regression noise that a naive
    per-path estimate would miss).
    """
    if states.ens is None:
        raise ProblemError("states must carry their driving ensemble "
                           "(produce them with euler_forward)")
    mu.check_range(p.u_grid.size)
    nu.check_range(p.v_grid.size)
    n_paths = states.X.shape[0]
    if mu.values.shape[0] != n_paths or nu.values.shape[0] != n_paths:
        raise ProblemError("control paths do not match the state paths")

    knots = states.grid.knots
    dt = states.grid.dt
    Y, Z, K_lo, K_hi = _lsmc_backward(
        p, states.X, states.ens.dW, mu.values, nu.values, basis, degree,
        n_bins, knots, dt)

    se_root = None
    if se_batches and se_batches > 1 and n_paths >= 2 * se_batches:
        bounds = np.linspace(0, n_paths, se_batches + 1, dtype=int)
        roots = np.empty(se_batches)
        for bi in range(se_batches):
            sl = slice(bounds[bi], bounds[bi + 1])
            Yb, _, _, _ = _lsmc_backward(
                p, states.X[sl], states.ens.dW[sl], mu.values[sl],
                nu.values[sl], basis, degree, n_bins, knots, dt)
            roots[bi] = Yb[0, 0]
        se_root = float(np.std(roots, ddof=1) / np.sqrt(se_batches))

    return DrbsdeSolution(grid=states.grid, Y=Y, Z=Z, K_lo=K_lo, K_hi=K_hi,
                          mode="lsmc", se_root=se_root)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def check_flat_off(sol: DrbsdeSolution, p: GameProblem, support):
    """Discrete flat-off residuals (max over points of the time sums).

    ``support`` supplies the state per (time, point): a Lattice in lattice
    mode, the StatePaths in Monte Carlo mode.  Both residuals vanish by
    construction because the K increments are defined as clamp overshoots.
    """
    n_time, n_pts = sol.Y.shape
    knots = sol.grid.knots
    s_lo = np.zeros(n_pts)
    s_hi = np.zeros(n_pts)
    for j in range(n_time - 1):
        t = float(knots[j])
        if isinstance(support, Lattice):
            xj = support.x_nodes[:, None]
        else:
            xj = support.X[:, j]
        lo = np.asarray(p.lower_obstacle(t, xj), dtype=float)
        hi = np.asarray(p.upper_obstacle(t, xj), dtype=float)
        s_lo += (sol.Y[j] - lo) * (sol.K_lo[j + 1] - sol.K_lo[j])
        s_hi += (hi - sol.Y[j]) * (sol.K_hi[j + 1] - sol.K_hi[j])
    return float(np.max(np.abs(s_lo))), float(np.max(np.abs(s_hi)))


@dataclass
class OrderingReport:
    max_violation: float
    terminal_violation: float
    mode: str


def compare_drbsde(sol1: DrbsdeSolution, sol2: DrbsdeSolution) -> OrderingReport:
    """Largest positive part of Y1 - Y2 over every retained point.

    The caller guarantees the data were ordered (terminal, obstacles and
    generator of the second dominating the first); the terminal layers are
    re-verified here since they are stored.  In lattice mode the monotone
    clamp recursion makes the reported violation exactly zero whenever the
    ordering hypothesis holds.
    """
    if sol1.Y.shape != sol2.Y.shape or sol1.grid != sol2.grid:
        raise ProblemError("solutions do not live on a common grid")
    if sol1.mode != sol2.mode:
        raise ProblemError("solutions were produced by different modes")
    diff = sol1.Y - sol2.Y
    return OrderingReport(
        max_violation=float(max(diff.max(), 0.0)),
        terminal_violation=float(max(diff[-1].max(), 0.0)),
        mode=sol1.mode,
    )


@dataclass
class StabilityReport:
    gap: float
    driver: float


def stability_gap(lat: Lattice, p1: GameProblem, sol1: DrbsdeSolution,
                  p2: GameProblem, sol2: DrbsdeSolution, varpi: float = 2.0,
                  mu=0, nu=0, root_index=None) -> StabilityReport:
    """Perturbation response of Y against the size of the data perturbation.

    ``gap`` is the largest (over time layers) occupancy-weighted mean of
    |Y1 - Y2|^varpi under the chain started at ``root_index``; ``driver``
    combines the terminal-data moment with the time-aggregated generator
    difference evaluated along the second solution, mirroring the a-priori
    bound this ratio is screened against.  Obstacles must agree between the
    two problems (checked on the grid).
    """
    if not 1.0 < varpi <= p1.holder_q:
        raise ProblemError(f"varpi must lie in (1, q], got {varpi}")
    if not (np.isscalar(mu) and np.isscalar(nu)):
        raise ProblemError("stability_gap supports frozen (scalar-index) controls")
    if sol1.Y.shape != sol2.Y.shape or sol1.grid != sol2.grid:
        raise ProblemError("solutions do not live on a common lattice grid")
    n_time, n = sol1.Y.shape
    knots = sol1.grid.knots
    xb = lat.x_nodes[:, None]
    for j in range(n_time):
        t = float(knots[j])
        if (np.max(np.abs(np.asarray(p1.lower_obstacle(t, xb)) -
                          np.asarray(p2.lower_obstacle(t, xb)))) > 1e-12 or
                np.max(np.abs(np.asarray(p1.upper_obstacle(t, xb)) -
                              np.asarray(p2.upper_obstacle(t, xb)))) > 1e-12):
            raise ProblemError("stability_gap requires identical obstacles")

    pi, _ = lattice_occupancy(lat, mu=mu, nu=nu, root_index=root_index)
    dY = np.abs(sol1.Y - sol2.Y) ** varpi
    gap = float(np.max(np.sum(pi * dY, axis=1)))

    term = float(np.sum(pi[-1] * np.abs(sol1.Y[-1] - sol2.Y[-1]) ** varpi))
    dt = sol1.grid.dt
    u_pt = p1.u_grid.point(int(mu))
    v_pt = p1.v_grid.point(int(nu))
    acc = 0.0
    for j in range(n_time - 1):
        t = float(knots[j])
        y2 = sol2.Y[j]
        z2 = sol2.Z[j]
        f1 = np.asarray(p1.generator(t, xb, y2, z2, u_pt, v_pt), dtype=float)
        f2 = np.asarray(p2.generator(t, xb, y2, z2, u_pt, v_pt), dtype=float)
        acc += dt * float(np.sum(pi[j] * np.abs(f1 - f2)))
    driver = term + acc ** varpi
    return StabilityReport(gap=gap, driver=driver)
