"""Lattice approximation of the controlled diffusion and game values by
backward induction.

The chain is the classical three-point construction on a uniform space
grid: from node x the state moves up/down by dx or stays, with

    p_up   = (sig^2 dt / dx^2 + b dt / dx) / 2
    p_dn   = (sig^2 dt / dx^2 - b dt / dx) / 2
    p_stay = 1 - sig^2 dt / dx^2

so the first and second local moments match b dt and sig^2 dt exactly.
Under the CFL conditions dt * max(sig^2) <= dx^2 and dt * max|b| <= dx the
weights are probabilities (up to the drift-dominance corner, which is
reported as an error).  At the two domain edges the weight of the missing
neighbour is folded into the node itself (reflecting truncation); the
folded fractions are kept so occupancy-weighted diagnostics can verify the
domain was wide enough.

Game values come from stepwise optimisation over the control grids:
``order='supinf'`` computes the lower value (outer sup over u of inner inf
over v), ``order='infsup'`` the upper value, and the result is clamped into
the obstacle corridor after every step.  With a vanishing generator and
singleton grids the same recursion is the optimal-stopping (Dynkin) value,
for which :func:`dynkin_brute_force` provides an independent oracle by
enumerating every adapted stopping-time pair on a small binary tree.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import ControlGrid, GameProblem, NumericsError, ProblemError
from .paths import TimeGrid

__all__ = [
    "CflError",
    "Lattice",
    "ValueSurface",
    "BinaryTree",
    "DppReport",
    "OracleCase",
    "build_lattice",
    "coefficient_tables",
    "value_backward_induction",
    "dynkin_value",
    "dynkin_brute_force",
    "dynkin_oracle_corpus",
    "enumerate_stopping_rules",
    "single_control_value",
    "dpp_check",
    "dpp_cross_resolution",
    "lattice_occupancy",
]

_ORDERS = ("supinf", "infsup")


class CflError(NumericsError):
    """Time step too large for the space step (non-monotone stencil)."""


@dataclass
class ValueSurface:
    """Value field W over (time knot, space node)."""

    grid: TimeGrid
    x_nodes: np.ndarray
    W: np.ndarray
    kind: str

    def root(self, x_index=None) -> float:
        if x_index is None:
            x_index = len(self.x_nodes) // 2
        return float(self.W[0, x_index])

    def to_csv(self) -> str:
        knots = self.grid.knots
        lines = ["time,x,value,kind"]
        for j in range(self.W.shape[0]):
            for i in range(self.W.shape[1]):
                lines.append(
                    f"{knots[j]:.17g},{self.x_nodes[i]:.17g},{self.W[j, i]:.17g},{self.kind}"
                )
        return "\n".join(lines) + "\n"


def coefficient_tables(p: GameProblem, tgrid: TimeGrid, x_nodes: np.ndarray):
    """Drift/diffusion evaluated on (time knot, u, v, node), plus CFL data.

    Only scalar-state problems are supported on lattices; the returned
    arrays have shape (n_steps, nU, nV, n_nodes).
    """
    if p.state_dim != 1 or p.noise_dim != 1:
        raise ProblemError("lattice and PDE solvers support state_dim = noise_dim = 1")
    n_steps = tgrid.n_steps
    n_nodes = len(x_nodes)
    nu, nv = p.u_grid.size, p.v_grid.size
    b_vals = np.empty((n_steps, nu, nv, n_nodes))
    s_vals = np.empty((n_steps, nu, nv, n_nodes))
    xb = np.asarray(x_nodes, dtype=float)[:, None]
    knots = tgrid.knots
    for j in range(n_steps):
        t = float(knots[j])
        for ui in range(nu):
            for vi in range(nv):
                u, v = p.u_grid.point(ui), p.v_grid.point(vi)
                b_vals[j, ui, vi] = np.asarray(p.drift(t, xb, u, v), dtype=float)[:, 0]
                s_vals[j, ui, vi] = np.asarray(
                    p.diffusion(t, xb, u, v), dtype=float)[:, 0, 0]
    if not (np.all(np.isfinite(b_vals)) and np.all(np.isfinite(s_vals))):
        raise NumericsError("non-finite coefficient on the lattice grid")
    return b_vals, s_vals


def _check_cfl(p: GameProblem, dt: float, dx: float, b_vals, s_vals):
    max_sig2 = float(np.max(s_vals ** 2))
    max_b = float(np.max(np.abs(b_vals)))
    if dt * max_sig2 > dx * dx * (1 + 1e-12):
        raise CflError(
            f"CFL violation: dt*max(sigma^2) = {dt * max_sig2:.6g} exceeds "
            f"dx^2 = {dx * dx:.6g}"
        )
    if dt * max_b > dx * (1 + 1e-12):
        raise CflError(
            f"CFL violation: dt*max|b| = {dt * max_b:.6g} exceeds dx = {dx:.6g}"
        )
    if p.lipschitz * dt >= 1.0:
        raise CflError(
            f"gamma*dt = {p.lipschitz * dt:.6g} must be < 1; shrink the time step"
        )


@dataclass
class Lattice:
    """Controlled Markov chain on a uniform space grid.

    Probability arrays have shape (n_steps, nU, nV, n_nodes); boundary
    folding is already applied (p_dn is zero on the first node, p_up on the
    last), with the folded amounts kept in fold_dn/fold_up for diagnostics.
    """

    grid: TimeGrid
    x_nodes: np.ndarray
    dx: float
    p_up: np.ndarray
    p_dn: np.ndarray
    p_stay: np.ndarray
    b_vals: np.ndarray
    sig_vals: np.ndarray
    fold_dn: np.ndarray
    fold_up: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.x_nodes)

    def expectation(self, j, vals, ui, vi):
        """One-step conditional expectation of next-layer values per node."""
        pu = self.p_up[j, ui, vi]
        pd = self.p_dn[j, ui, vi]
        ps = self.p_stay[j, ui, vi]
        out = ps * vals
        out[1:] += pd[1:] * vals[:-1]
        out[:-1] += pu[:-1] * vals[1:]
        return out

    def z_moment(self, j, vals, ui, vi):
        """Stencil moment E[next value * dW] / dt per node.

        dW is the Euler increment that produces each move, (x_target - x -
        b dt)/sig; the mass folded at a boundary behaves like a stay move.
        Nodes with vanishing diffusion report zero.
        """
        dt = self.grid.dt
        sig = self.sig_vals[j, ui, vi]
        b = self.b_vals[j, ui, vi]
        pu = self.p_up[j, ui, vi]
        pd = self.p_dn[j, ui, vi]
        ps = self.p_stay[j, ui, vi]
        safe = np.where(np.abs(sig) > 1e-14, sig, 1.0)
        w_up = (self.dx - b * dt) / safe
        w_st = (-b * dt) / safe
        w_dn = (-self.dx - b * dt) / safe
        acc = ps * vals * w_st
        acc[1:] += pd[1:] * vals[:-1] * w_dn[1:]
        acc[:-1] += pu[:-1] * vals[1:] * w_up[:-1]
        return np.where(np.abs(sig) > 1e-14, acc / dt, 0.0)

    def split(self, j_mid: int):
        """Head lattice on [t0, t_mid] and tail lattice on [t_mid, T]."""
        if not 0 < j_mid < self.grid.n_steps:
            raise ProblemError("split knot must be strictly interior")
        knots = self.grid.knots
        head_grid = TimeGrid(self.grid.t0, float(knots[j_mid]), j_mid)
        tail_grid = TimeGrid(float(knots[j_mid]), self.grid.T,
                             self.grid.n_steps - j_mid)
        head = replace(self, grid=head_grid,
                       p_up=self.p_up[:j_mid], p_dn=self.p_dn[:j_mid],
                       p_stay=self.p_stay[:j_mid], b_vals=self.b_vals[:j_mid],
                       sig_vals=self.sig_vals[:j_mid],
                       fold_dn=self.fold_dn[:j_mid], fold_up=self.fold_up[:j_mid])
        tail = replace(self, grid=tail_grid,
                       p_up=self.p_up[j_mid:], p_dn=self.p_dn[j_mid:],
                       p_stay=self.p_stay[j_mid:], b_vals=self.b_vals[j_mid:],
                       sig_vals=self.sig_vals[j_mid:],
                       fold_dn=self.fold_dn[j_mid:], fold_up=self.fold_up[j_mid:])
        return head, tail


def build_lattice(p: GameProblem, n_steps: int, x_min: float, x_max: float,
                  n_nodes: int, t0: float = 0.0) -> Lattice:
    """Bake the three-point transition stencils for every (t, node, u, v)."""
    if n_nodes < 3:
        raise ProblemError("need at least 3 space nodes")
    if not x_min < x_max:
        raise ProblemError("need x_min < x_max")
    tgrid = TimeGrid(t0, p.horizon, n_steps)
    x_nodes = np.linspace(x_min, x_max, n_nodes)
    dx = float(x_nodes[1] - x_nodes[0])
    dt = tgrid.dt

    b_vals, s_vals = coefficient_tables(p, tgrid, x_nodes)
    _check_cfl(p, dt, dx, b_vals, s_vals)

    A = s_vals ** 2 * dt / (dx * dx)
    B = b_vals * dt / dx
    p_up = 0.5 * (A + B)
    p_dn = 0.5 * (A - B)
    worst = min(float(p_up.min()), float(p_dn.min()))
    if worst < -1e-12:
        raise CflError(
            f"negative stencil probability {worst:.3e}: |b|*dx exceeds sigma^2 "
            "somewhere; widen sigma, shrink dx, or reduce the drift"
        )
    p_up = np.clip(p_up, 0.0, None)
    p_dn = np.clip(p_dn, 0.0, None)
    p_stay = 1.0 - p_up - p_dn
    if float(p_stay.min()) < -1e-12:
        raise CflError("stencil stay-probability went negative; tighten CFL")
    p_stay = np.clip(p_stay, 0.0, None)

    fold_dn = p_dn[:, :, :, 0].copy()
    fold_up = p_up[:, :, :, -1].copy()
    p_stay[:, :, :, 0] += p_dn[:, :, :, 0]
    p_dn[:, :, :, 0] = 0.0
    p_stay[:, :, :, -1] += p_up[:, :, :, -1]
    p_up[:, :, :, -1] = 0.0

    return Lattice(grid=tgrid, x_nodes=x_nodes, dx=dx, p_up=p_up, p_dn=p_dn,
                   p_stay=p_stay, b_vals=b_vals, sig_vals=s_vals,
                   fold_dn=fold_dn, fold_up=fold_up)


# ---------------------------------------------------------------------------
# backward induction
# ---------------------------------------------------------------------------

def _terminal_layer(p: GameProblem, lat: Lattice, terminal):
    if terminal is not None:
        vals = np.asarray(terminal, dtype=float)
        if vals.shape != (lat.n_nodes,):
            raise ProblemError("terminal override must have one value per node")
        return vals.copy()
    return np.asarray(p.terminal(lat.x_nodes[:, None]), dtype=float)


def value_backward_induction(p: GameProblem, lat: Lattice, order: str,
                             terminal=None, kind=None) -> ValueSurface:
    """Backward sup-inf (or inf-sup) induction with obstacle clamping.

    Per node and step, each control pair is scored by the one-step
    expectation plus the generator contribution f(t, x, E, Z) dt, where E is
    the stencil expectation itself and Z its dW-moment; the chosen order of
    optimisation then picks the saddle value, and the result is pulled back
    into [l_lo, l_hi].  Ties in the optimisation resolve to the first grid
    index, which numpy's min/max ordering provides.
    """
    if order not in _ORDERS:
        raise ProblemError(f"order must be one of {_ORDERS}")
    nu, nv = p.u_grid.size, p.v_grid.size
    n = lat.n_nodes
    dt = lat.grid.dt
    knots = lat.grid.knots
    xb = lat.x_nodes[:, None]

    W = np.empty((lat.grid.n_steps + 1, n))
    W[-1] = _terminal_layer(p, lat, terminal)
    scores = np.empty((nu, nv, n))
    for j in range(lat.grid.n_steps - 1, -1, -1):
        t = float(knots[j])
        nxt = W[j + 1]
        for ui in range(nu):
            for vi in range(nv):
                e = lat.expectation(j, nxt, ui, vi)
                z = lat.z_moment(j, nxt, ui, vi)
                fv = np.asarray(p.generator(
                    t, xb, e, z[:, None], p.u_grid.point(ui), p.v_grid.point(vi)),
                    dtype=float)
                scores[ui, vi] = e + dt * fv
        if order == "supinf":
            opt = scores.min(axis=1).max(axis=0)
        else:
            opt = scores.max(axis=0).min(axis=0)
        lo = np.asarray(p.lower_obstacle(t, xb), dtype=float)
        hi = np.asarray(p.upper_obstacle(t, xb), dtype=float)
        W[j] = np.minimum(hi, np.maximum(lo, opt))
        if not np.all(np.isfinite(W[j])):
            raise NumericsError(f"non-finite value layer at time index {j}")
    if kind is None:
        kind = "lower-game" if order == "supinf" else "upper-game"
    return ValueSurface(grid=lat.grid, x_nodes=lat.x_nodes.copy(), W=W, kind=kind)


def _assert_generator_vanishes(p: GameProblem, lat: Lattice):
    ts = [float(lat.grid.t0), float(0.5 * (lat.grid.t0 + lat.grid.T))]
    xb = lat.x_nodes[:: max(1, lat.n_nodes // 5)][:, None]
    m = xb.shape[0]
    probes = [(np.zeros(m), np.zeros((m, 1))), (np.ones(m), np.ones((m, 1)))]
    for t in ts:
        for ui in range(p.u_grid.size):
            for vi in range(p.v_grid.size):
                for y, z in probes:
                    fv = np.asarray(p.generator(
                        t, xb, y, z, p.u_grid.point(ui), p.v_grid.point(vi)))
                    if np.max(np.abs(fv)) > 1e-14:
                        raise ProblemError(
                            "dynkin_value requires a vanishing generator; "
                            f"got f = {float(np.max(np.abs(fv))):.3e} on samples"
                        )


def dynkin_value(p: GameProblem, lat: Lattice) -> ValueSurface:
    """Optimal-stopping value: clamp(one-step expectation) backward in time.

    Requires singleton control grids and f identically zero (checked on
    samples).  Identical to :func:`value_backward_induction` on the same
    input; kept as the named entry point the brute-force oracle is compared
    against.
    """
    if p.u_grid.size != 1 or p.v_grid.size != 1:
        raise ProblemError("dynkin_value requires singleton control grids")
    _assert_generator_vanishes(p, lat)
    surf = value_backward_induction(p, lat, order="supinf", kind="dynkin")
    return surf


def single_control_value(p: GameProblem, lat: Lattice) -> ValueSurface:
    """sup over the u-grid only (the opponent grid must be a singleton)."""
    if p.v_grid.size != 1:
        raise ProblemError("single_control_value requires a singleton v grid")
    return value_backward_induction(p, lat, order="supinf", kind="single-control")


# ---------------------------------------------------------------------------
# Dynkin brute force on a binary tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinaryTree:
    """Non-recombining binary tree: from x the state moves to x +/- dx.

    Leaf paths are indexed move-major (first move is the most significant
    bit), so the first half of the leaves is the down-subtree.
    """

    grid: TimeGrid
    x0: float
    dx: float
    p_up: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.p_up < 1.0:
            raise ProblemError("p_up must lie in (0, 1)")

    @property
    def depth(self) -> int:
        return self.grid.n_steps

    def leaf_states(self) -> np.ndarray:
        """X values per (leaf, level), shape (2**depth, depth + 1)."""
        N = self.depth
        n_leaves = 1 << N
        X = np.empty((n_leaves, N + 1))
        X[:, 0] = self.x0
        leaves = np.arange(n_leaves)
        for m in range(N):
            bit = (leaves >> (N - 1 - m)) & 1
            X[:, m + 1] = X[:, m] + self.dx * (2 * bit - 1)
        return X

    def leaf_weights(self) -> np.ndarray:
        N = self.depth
        leaves = np.arange(1 << N)
        ups = np.zeros(1 << N, dtype=np.int64)
        for m in range(N):
            ups += (leaves >> m) & 1
        return self.p_up ** ups * (1.0 - self.p_up) ** (N - ups)


def enumerate_stopping_rules(depth: int) -> np.ndarray:
    """All adapted stopping rules as stop levels per leaf, move-major order.

    A rule stops at a node depending only on the path so far; equivalently
    it assigns every leaf the level at which its path stops (``depth``
    meaning: not stopped before T, with any flag below an already-stopped
    ancestor ignored).  Row r, column leaf: that level for rule r.  Counts
    follow S(m) = 1 + S(m-1)^2 with S(0) = 1, i.e. 2, 5, 26, 677 for
    depths 1-4.
    """
    if depth == 0:
        return np.zeros((1, 1), dtype=np.int64)
    sub = enumerate_stopping_rules(depth - 1)
    n_sub, width = sub.shape
    rows = [np.zeros(2 * width, dtype=np.int64)]
    for a in range(n_sub):
        left = sub[a] + 1
        for b in range(n_sub):
            rows.append(np.concatenate([left, sub[b] + 1]))
    return np.stack(rows)


def dynkin_brute_force(tree: BinaryTree, l_lo, l_hi, h) -> float:
    """Exhaustive sup-inf value over all adapted stopping-time pairs.

    The maximiser collects l_lo where it stops first (ties included), the
    minimiser pays l_hi where it stops strictly first, and h(X_T) is paid
    when neither stops before T.  Asserts that sup-inf and inf-sup agree
    (the game has a saddle point when the barriers are separated) and
    returns the common value.
    """
    N = tree.depth
    if N > 4:
        raise ProblemError("brute-force enumeration is limited to depth <= 4")
    X = tree.leaf_states()
    wts = tree.leaf_weights()
    knots = tree.grid.knots
    n_leaves = X.shape[0]

    # payoff lookup per (leaf, maximiser stop level, minimiser stop level)
    P = np.empty((n_leaves, N + 1, N + 1))
    for ta in range(N + 1):
        for sb in range(N + 1):
            if min(ta, sb) == N:
                P[:, ta, sb] = h(X[:, [N]])
            elif ta <= sb:
                P[:, ta, sb] = l_lo(float(knots[ta]), X[:, [ta]])
            else:
                P[:, ta, sb] = l_hi(float(knots[sb]), X[:, [sb]])

    rules = enumerate_stopping_rules(N)
    n_rules = rules.shape[0]
    M = np.zeros((n_rules, n_rules))
    side = N + 1
    for leaf in range(n_leaves):
        flat = P[leaf].ravel()
        M += wts[leaf] * flat[rules[:, leaf][:, None] * side + rules[None, :, leaf]]

    v_lo = float(M.min(axis=1).max())
    v_hi = float(M.max(axis=0).min())
    scale = max(1.0, abs(v_lo), abs(v_hi))
    if abs(v_lo - v_hi) > 1e-12 * scale:
        raise NumericsError(
            f"stopping game has no saddle point: supinf={v_lo!r}, infsup={v_hi!r}"
        )
    return v_lo


@dataclass
class OracleCase:
    """One corpus entry: a tree plus the equivalent lattice stopping problem.

    The lattice reproduces the tree dynamics exactly (saturated stencil,
    domain wide enough that edge folding cannot reach the tree cone), so
    the recursion root at ``root_index`` must equal the brute-force value.
    """

    tree: BinaryTree
    problem: GameProblem
    lattice: Lattice
    root_index: int

    def recursion_value(self) -> float:
        surf = dynkin_value(self.problem, self.lattice)
        return float(surf.W[0, self.root_index])

    def brute_force_value(self) -> float:
        return dynkin_brute_force(self.tree, self.problem.lower_obstacle,
                                  self.problem.upper_obstacle,
                                  self.problem.terminal)


def _affine_obstacle_problem(T, sig, b0, slope, mid, gap_lo, gap_hi, theta):
    """f = 0 stopping problem with same-slope affine barriers.

    The terminal value is the convex combination theta * l_lo(T, .) +
    (1 - theta) * l_hi(T, .), which sits strictly inside the corridor.
    """

    def l_lo(t, x):
        return slope * x[..., 0] + mid - gap_lo

    def l_hi(t, x):
        return slope * x[..., 0] + mid + gap_hi

    def h(x):
        return slope * x[..., 0] + mid - theta * gap_lo + (1 - theta) * gap_hi

    def drift(t, x, u, v):
        return np.full_like(x, b0)

    def diffusion(t, x, u, v):
        return np.full(np.shape(x)[:-1] + (1, 1), sig)

    def gen(t, x, y, z, u, v):
        return np.zeros(np.shape(x)[:-1])

    gamma = max(1.0, abs(b0) + sig, abs(slope))
    return GameProblem(
        state_dim=1, noise_dim=1, horizon=T, drift=drift, diffusion=diffusion,
        generator=gen, terminal=h, lower_obstacle=l_lo, upper_obstacle=l_hi,
        lipschitz=gamma, holder_q=2.0,
        u_grid=ControlGrid.singleton(), v_grid=ControlGrid.singleton(),
        name="oracle-case",
    )


def dynkin_oracle_corpus(n_trees: int = 24, seed: int = 2024):
    """Deterministic corpus of small stopping games with varied barriers.

    Depths cycle through 1-4; slopes, gaps, step sizes, centres and the
    up-probability vary with the seed.  Each case couples a binary tree to
    a lattice built so the two backward recursions are algebraically the
    same: saturated second-moment stencil (sigma = dx/sqrt(dt)), drift
    matching the tree's up-probability, and a two-node safety margin to the
    domain edge.
    """
    if n_trees < 1:
        raise ProblemError("n_trees must be >= 1")
    rng = np.random.default_rng(seed)
    dt = 0.2
    cases = []
    for i in range(n_trees):
        depth = 1 + i % 4
        dx = float(rng.uniform(0.3, 1.2))
        x0 = float(rng.uniform(-1.0, 1.0))
        slope = float(rng.choice([0.0, 0.5, -0.5, 1.0]))
        mid = float(rng.uniform(-0.5, 0.5))
        gap_lo = float(rng.uniform(0.2, 1.2))
        gap_hi = float(rng.uniform(0.2, 1.2))
        theta = float(rng.uniform(0.0, 1.0))
        p_up = float(rng.choice([0.4, 0.5, 0.5, 0.6]))

        T = dt * depth
        sig = dx / np.sqrt(dt)
        b0 = (2.0 * p_up - 1.0) * dx / dt
        prob = _affine_obstacle_problem(T, sig, b0, slope, mid, gap_lo,
                                        gap_hi, theta)
        margin = depth + 2
        lat = build_lattice(prob, n_steps=depth, x_min=x0 - margin * dx,
                            x_max=x0 + margin * dx, n_nodes=2 * margin + 1)
        tree = BinaryTree(grid=lat.grid, x0=x0, dx=dx, p_up=p_up)
        cases.append(OracleCase(tree=tree, problem=prob, lattice=lat,
                                root_index=margin))
    return cases


# ---------------------------------------------------------------------------
# dynamic programming identity
# ---------------------------------------------------------------------------

@dataclass
class DppReport:
    direct: float
    composed: float
    gap: float


def dpp_check(p: GameProblem, lat: Lattice, t_mid: float, order: str,
              x_index=None) -> DppReport:
    """Solve-compose-compare at a deterministic intermediate knot.

    The direct route solves on [t0, T]; the composed route solves [t_mid, T]
    first and feeds W(t_mid, .) as terminal data to a solve on [t0, t_mid].
    On a shared lattice the two recursions perform the same arithmetic, so
    the reported gap is zero up to floating-point noise.
    """
    j_mid = lat.grid.index_of(t_mid)
    if not 0 < j_mid < lat.grid.n_steps:
        raise ProblemError("t_mid must be a strictly interior knot")
    if x_index is None:
        x_index = lat.n_nodes // 2
    full = value_backward_induction(p, lat, order)
    head, tail = lat.split(j_mid)
    tail_surf = value_backward_induction(p, tail, order)
    comp_surf = value_backward_induction(p, head, order, terminal=tail_surf.W[0])
    direct = float(full.W[0, x_index])
    composed = float(comp_surf.W[0, x_index])
    return DppReport(direct=direct, composed=composed, gap=abs(direct - composed))


def dpp_cross_resolution(p: GameProblem, lat: Lattice, t_mid: float, order: str,
                         refine: int = 2, x_index=None) -> DppReport:
    """Composed route with a (dx/refine, dt/refine^2) lattice on [t_mid, T].

    The fine continuation value is interpolated linearly onto the coarse
    nodes before the head solve, so the gap measures scheme consistency
    rather than an algebraic identity.
    """
    if refine < 2:
        raise ProblemError("refine must be >= 2")
    j_mid = lat.grid.index_of(t_mid)
    if not 0 < j_mid < lat.grid.n_steps:
        raise ProblemError("t_mid must be a strictly interior knot")
    if x_index is None:
        x_index = lat.n_nodes // 2
    full = value_backward_induction(p, lat, order)

    n_tail_fine = (lat.grid.n_steps - j_mid) * refine * refine
    n_nodes_fine = (lat.n_nodes - 1) * refine + 1
    fine_tail = build_lattice(p, n_tail_fine, float(lat.x_nodes[0]),
                              float(lat.x_nodes[-1]), n_nodes_fine, t0=float(t_mid))
    tail_surf = value_backward_induction(p, fine_tail, order)
    terminal = np.interp(lat.x_nodes, fine_tail.x_nodes, tail_surf.W[0])

    head, _ = lat.split(j_mid)
    comp_surf = value_backward_induction(p, head, order, terminal=terminal)
    direct = float(full.W[0, x_index])
    composed = float(comp_surf.W[0, x_index])
    return DppReport(direct=direct, composed=composed, gap=abs(direct - composed))


# ---------------------------------------------------------------------------
# occupancy
# ---------------------------------------------------------------------------

def _control_table(ctrl, n_steps, n_nodes, grid_size, name):
    if np.isscalar(ctrl) or isinstance(ctrl, (int, np.integer)):
        idx = int(ctrl)
        if not 0 <= idx < grid_size:
            raise ProblemError(f"{name} control index out of range")
        return None, idx
    arr = np.asarray(ctrl, dtype=np.int64)
    if arr.shape != (n_steps, n_nodes):
        raise ProblemError(f"{name} control table must be (n_steps, n_nodes)")
    if arr.min() < 0 or arr.max() >= grid_size:
        raise ProblemError(f"{name} control index out of range")
    return arr, None


def lattice_occupancy(lat: Lattice, mu=0, nu=0, root_index=None,
                      n_u=None, n_v=None):
    """Forward node-occupancy distribution from a root node.

    Returns (pi, folded_fraction): pi[j, i] is the chain probability of node
    i at knot j starting from the root, and folded_fraction is the total
    occupancy-weighted probability mass reflected at the domain edges (small
    when the domain is wide enough).
    """
    n_steps, nu_g, nv_g, n = lat.p_up.shape
    mu_tab, mu_c = _control_table(mu, n_steps, n, nu_g, "mu")
    nu_tab, nu_c = _control_table(nu, n_steps, n, nv_g, "nu")
    if root_index is None:
        root_index = n // 2
    pi = np.zeros((n_steps + 1, n))
    pi[0, root_index] = 1.0
    folded = 0.0
    nodes = np.arange(n)
    for j in range(n_steps):
        if mu_tab is None and nu_tab is None:
            pu = lat.p_up[j, mu_c, nu_c]
            pd = lat.p_dn[j, mu_c, nu_c]
            ps = lat.p_stay[j, mu_c, nu_c]
            fd = lat.fold_dn[j, mu_c, nu_c]
            fu = lat.fold_up[j, mu_c, nu_c]
        else:
            mrow = mu_tab[j] if mu_tab is not None else np.full(n, mu_c)
            nrow = nu_tab[j] if nu_tab is not None else np.full(n, nu_c)
            pu = lat.p_up[j, mrow, nrow, nodes]
            pd = lat.p_dn[j, mrow, nrow, nodes]
            ps = lat.p_stay[j, mrow, nrow, nodes]
            fd = lat.fold_dn[j, mrow[0], nrow[0]]
            fu = lat.fold_up[j, mrow[-1], nrow[-1]]
        cur = pi[j]
        nxt = pi[j + 1]
        nxt += cur * ps
        nxt[1:] += (cur * pu)[:-1]
        nxt[:-1] += (cur * pd)[1:]
        folded += cur[0] * fd + cur[-1] * fu
    return pi, float(folded)
