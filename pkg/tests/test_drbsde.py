import numpy as np
import pytest

from drgame import (ProblemError, RegressionError, TimeGrid, build_lattice,
                    check_flat_off, compare_drbsde, constant_controls,
                    euler_forward, make_preset, simulate_brownian,
                    solve_drbsde_lattice, solve_drbsde_lsmc, stability_gap)
from drgame.model import ControlGrid, GameProblem

BIG = 1e6


def scalar_problem(T=1.0, b0=0.0, sig=1.0, h=None, l_lo=None, l_hi=None,
                   f=None, gamma=None):
    h = h or (lambda x: x[..., 0])
    l_lo = l_lo or (lambda t, x: np.full(np.shape(x)[:-1], -BIG))
    l_hi = l_hi or (lambda t, x: np.full(np.shape(x)[:-1], BIG))
    f = f or (lambda t, x, y, z, u, v: np.zeros(np.shape(x)[:-1]))
    return GameProblem(
        state_dim=1, noise_dim=1, horizon=T,
        drift=lambda t, x, u, v: np.full_like(x, b0),
        diffusion=lambda t, x, u, v: np.full(np.shape(x)[:-1] + (1, 1), sig),
        generator=f, terminal=h, lower_obstacle=l_lo, upper_obstacle=l_hi,
        lipschitz=gamma or max(1.0, abs(b0) + sig), holder_q=2.0,
        u_grid=ControlGrid.singleton(), v_grid=ControlGrid.singleton())


def simulate(p, n_paths, n_steps, seed, x0=0.0):
    grid = TimeGrid(0.0, p.horizon, n_steps)
    ens = simulate_brownian(grid, n_paths, p.noise_dim, seed)
    mu = constant_controls(n_paths, n_steps)
    nu = constant_controls(n_paths, n_steps)
    st = euler_forward(p, ens, [x0], mu, nu)
    return st, mu, nu


class TestLatticeSolver:
    def test_martingale_case(self):
        # f = 0, inactive obstacles, h(x) = x on a driftless chain: Y = x, K = 0
        p = scalar_problem(T=0.09)
        lat = build_lattice(p, 9, -2, 2, 41)  # walk cone stays interior
        sol = solve_drbsde_lattice(p, lat)
        center = 20
        assert abs(sol.Y[0, center]) <= 1e-14
        assert np.all(sol.K_lo == 0.0) and np.all(sol.K_hi == 0.0)

    def test_dynkin_flat_zero_everywhere(self):
        p = make_preset("dynkin-flat", {})
        lat = build_lattice(p, 100, -4, 4, 41)
        sol = solve_drbsde_lattice(p, lat)
        assert np.max(np.abs(sol.Y)) == 0.0

    def test_two_step_binomial_matches_stopping_oracle(self):
        from drgame import BinaryTree, dynkin_brute_force
        p = scalar_problem(T=0.4, sig=1.0 / np.sqrt(0.2),
                           l_lo=lambda t, x: x[..., 0] - 0.5, gamma=3.0)
        lat = build_lattice(p, 2, -4, 4, 9)
        sol = solve_drbsde_lattice(p, lat)
        tree = BinaryTree(grid=lat.grid, x0=0.0, dx=1.0)
        bf = dynkin_brute_force(tree, p.lower_obstacle, p.upper_obstacle,
                                p.terminal)
        assert abs(sol.Y[0, 4] - bf) <= 1e-12

    def test_terminal_obstacle_violation_detected(self):
        p = scalar_problem(h=lambda x: np.full(np.shape(x)[:-1], 5.0),
                           l_hi=lambda t, x: np.full(np.shape(x)[:-1], 1.0))
        lat = build_lattice(p, 25, -2, 2, 21)
        with pytest.raises(ProblemError, match="terminal"):
            solve_drbsde_lattice(p, lat)

    def test_k_cumulative_nondecreasing_from_zero(self):
        p = scalar_problem(b0=-0.5, l_lo=lambda t, x: x[..., 0] - 0.3)
        lat = build_lattice(p, 100, -4, 4, 41)
        sol = solve_drbsde_lattice(p, lat)
        assert np.all(sol.K_lo[0] == 0.0) and np.all(sol.K_hi[0] == 0.0)
        assert np.min(np.diff(sol.K_lo, axis=0)) >= 0.0
        assert sol.K_lo[-1].max() > 0.0  # the drift makes the barrier bind

    def test_z_field_is_the_stencil_gradient_moment(self):
        # one step from a quadratic terminal layer with b = 0 the dW-moment
        # collapses to sigma * central difference: Z = 2 sigma x exactly
        sig = 1.3
        p = scalar_problem(sig=sig, h=lambda x: x[..., 0] ** 2, gamma=2.0)
        lat = build_lattice(p, 200, -4, 4, 41)
        sol = solve_drbsde_lattice(p, lat)
        x = lat.x_nodes[1:-1]
        assert np.max(np.abs(sol.Z[-2, 1:-1, 0] - 2.0 * sig * x)) < 1e-12

    def test_node_control_table_matches_frozen_fast_path(self):
        p = make_preset("uncertain-volatility", {"h": "square"})
        lat = build_lattice(p, 256, -6, 6, 49)
        frozen = solve_drbsde_lattice(p, lat, mu=1, nu=0)
        table = np.full((256, 49), 1, dtype=np.int64)
        tabled = solve_drbsde_lattice(p, lat, mu=table, nu=0)
        assert np.array_equal(frozen.Y, tabled.Y)

    def test_mixed_node_controls_sit_between_frozen_regimes(self):
        p = make_preset("uncertain-volatility", {"h": "square"})
        lat = build_lattice(p, 256, -6, 6, 49)
        low = solve_drbsde_lattice(p, lat, mu=0)
        high = solve_drbsde_lattice(p, lat, mu=1)
        mixed_tab = np.zeros((256, 49), dtype=np.int64)
        mixed_tab[:, 24:] = 1  # high volatility on the right half only
        mixed = solve_drbsde_lattice(p, lat, mu=mixed_tab)
        # convex data: value is monotone in the volatility assignment away
        # from the folded edges (the fold reverses the effect there)
        win = np.abs(lat.x_nodes) <= 3.0
        assert np.all(mixed.Y[:, win] >= low.Y[:, win] - 1e-12)
        assert np.all(mixed.Y[:, win] <= high.Y[:, win] + 1e-12)

    def test_obstacle_sandwich_everywhere(self):
        p = make_preset("dynkin-flat", {"l_lo": -0.2, "l_hi": 0.25, "h": 0.0})
        lat = build_lattice(p, 100, -4, 4, 41)
        sol = solve_drbsde_lattice(p, lat)
        knots = lat.grid.knots
        xb = lat.x_nodes[:, None]
        for j in range(sol.Y.shape[0]):
            lo = p.lower_obstacle(float(knots[j]), xb)
            hi = p.upper_obstacle(float(knots[j]), xb)
            assert np.all(sol.Y[j] >= lo) and np.all(sol.Y[j] <= hi)


class TestFlatOff:
    def test_lattice_residuals_vanish(self):
        p = scalar_problem(b0=-0.5, l_lo=lambda t, x: x[..., 0] - 0.3)
        lat = build_lattice(p, 100, -4, 4, 41)
        sol = solve_drbsde_lattice(p, lat)
        res_lo, res_hi = check_flat_off(sol, p, lat)
        assert res_lo == 0.0 and res_hi == 0.0

    def test_inactive_obstacles_give_zero_k(self):
        p = scalar_problem()
        lat = build_lattice(p, 25, -3, 3, 31)
        sol = solve_drbsde_lattice(p, lat)
        assert check_flat_off(sol, p, lat) == (0.0, 0.0)

    def test_corrupted_solution_is_flagged(self):
        p = scalar_problem(b0=-0.5, l_lo=lambda t, x: x[..., 0] - 0.3)
        lat = build_lattice(p, 100, -4, 4, 41)
        sol = solve_drbsde_lattice(p, lat)
        dk = np.diff(sol.K_lo, axis=0)
        j, i = np.unravel_index(np.argmax(dk), dk.shape)
        assert dk[j, i] > 0.0
        sol.Y[j, i] += 0.1
        res_lo, _ = check_flat_off(sol, p, lat)
        assert res_lo >= 0.1 * dk[j, i] - 1e-15


class TestComparison:
    def test_identical_inputs(self):
        p = make_preset("dynkin-flat", {})
        lat = build_lattice(p, 50, -3, 3, 31)
        sol = solve_drbsde_lattice(p, lat)
        rep = compare_drbsde(sol, sol)
        assert rep.max_violation == 0.0

    def test_shifted_terminal_orders_everywhere(self):
        base = scalar_problem(h=lambda x: np.sin(x[..., 0]),
                              l_lo=lambda t, x: np.full(np.shape(x)[:-1], -2.0),
                              l_hi=lambda t, x: np.full(np.shape(x)[:-1], 2.0))
        lifted = scalar_problem(h=lambda x: np.sin(x[..., 0]) + 1.0,
                                l_lo=lambda t, x: np.full(np.shape(x)[:-1], -2.0),
                                l_hi=lambda t, x: np.full(np.shape(x)[:-1], 3.0))
        lat = build_lattice(base, 100, -4, 4, 41)
        s1 = solve_drbsde_lattice(base, lat)
        s2 = solve_drbsde_lattice(lifted, lat)
        rep = compare_drbsde(s1, s2)
        assert rep.max_violation == 0.0
        assert np.all(s2.Y >= s1.Y)

    def test_constant_generator_offset_integrates_exactly(self):
        # f2 = f1 + 0.5 with inactive obstacles: Y2 - Y1 = 0.5 (T - t)
        f1 = lambda t, x, y, z, u, v: np.zeros(np.shape(x)[:-1])
        f2 = lambda t, x, y, z, u, v: np.full(np.shape(x)[:-1], 0.5)
        p1 = scalar_problem(f=f1)
        p2 = scalar_problem(f=f2)
        lat = build_lattice(p1, 100, -4, 4, 41)
        s1 = solve_drbsde_lattice(p1, lat)
        s2 = solve_drbsde_lattice(p2, lat)
        T = 1.0
        knots = lat.grid.knots
        for j in (0, 50, 100):
            expect = 0.5 * (T - knots[j])
            assert np.max(np.abs((s2.Y[j] - s1.Y[j]) - expect)) < 1e-12

    def test_grid_mismatch_rejected(self):
        p = make_preset("dynkin-flat", {})
        s1 = solve_drbsde_lattice(p, build_lattice(p, 50, -3, 3, 31))
        s2 = solve_drbsde_lattice(p, build_lattice(p, 25, -3, 3, 31))
        with pytest.raises(ProblemError):
            compare_drbsde(s1, s2)

    def test_randomized_ordered_pairs_never_violate(self):
        rng = np.random.default_rng(17)
        for _ in range(12):
            b0 = float(rng.uniform(-0.4, 0.4))
            sig = float(rng.uniform(0.6, 1.4))
            c_y = float(rng.uniform(0.0, 0.5))
            d_xi = float(rng.uniform(0.0, 0.5))
            d_f = float(rng.uniform(0.0, 0.5))
            d_lo = float(rng.uniform(0.0, 0.3))
            d_hi = float(rng.uniform(0.0, 0.3))

            def mk(shift_h, shift_f, shift_lo, shift_hi):
                return scalar_problem(
                    b0=b0, sig=sig,
                    h=lambda x: np.sin(x[..., 0]) + shift_h,
                    l_lo=lambda t, x: np.full(np.shape(x)[:-1], -2.0 + shift_lo),
                    l_hi=lambda t, x: np.full(np.shape(x)[:-1], 2.0 + shift_hi),
                    f=lambda t, x, y, z, u, v: c_y * y + 0.2 * np.cos(x[..., 0]) + shift_f,
                    gamma=2.0)

            p1 = mk(0.0, 0.0, 0.0, 0.0)
            p2 = mk(d_xi, d_f, d_lo, d_hi)
            lat = build_lattice(p1, 100, -4, 4, 41)
            rep = compare_drbsde(solve_drbsde_lattice(p1, lat),
                                 solve_drbsde_lattice(p2, lat))
            assert rep.max_violation == 0.0


class TestStability:
    def test_zero_perturbation(self):
        p = make_preset("dynkin-flat", {})
        lat = build_lattice(p, 50, -3, 3, 31)
        sol = solve_drbsde_lattice(p, lat)
        rep = stability_gap(lat, p, sol, p, sol, varpi=2.0)
        assert rep.gap == 0.0 and rep.driver == 0.0

    def test_uniform_terminal_shift_is_exact(self):
        eps = 0.25
        p1 = scalar_problem(h=lambda x: np.cos(x[..., 0]))
        p2 = scalar_problem(h=lambda x: np.cos(x[..., 0]) + eps)
        lat = build_lattice(p1, 50, -4, 4, 41)
        s1 = solve_drbsde_lattice(p1, lat)
        s2 = solve_drbsde_lattice(p2, lat)
        rep = stability_gap(lat, p1, s1, p2, s2, varpi=2.0)
        assert abs(rep.gap - eps ** 2) < 1e-12
        assert abs(rep.driver - eps ** 2) < 1e-12

    def test_clamping_contracts_the_gap(self):
        eps = 0.2
        p1 = make_preset("dynkin-flat", {"h": 0.0})
        p2 = make_preset("dynkin-flat", {"h": eps})
        lat = build_lattice(p1, 50, -3, 3, 31)
        s1 = solve_drbsde_lattice(p1, lat)
        s2 = solve_drbsde_lattice(p2, lat)
        rep = stability_gap(lat, p1, s1, p2, s2, varpi=2.0)
        assert rep.gap <= eps ** 2 + 1e-15
        assert abs(rep.driver - eps ** 2) < 1e-12

    def test_one_lipschitz_terminal_stability(self):
        # sup|Y1 - Y2| <= (1 + gamma dt)^N * delta for a terminal sup-shift
        delta = 0.3
        c_y = 0.5
        f = lambda t, x, y, z, u, v: c_y * y
        p1 = scalar_problem(h=lambda x: np.sin(x[..., 0]), f=f, gamma=1.0)
        p2 = scalar_problem(h=lambda x: np.sin(x[..., 0]) + delta, f=f, gamma=1.0)
        lat = build_lattice(p1, 100, -4, 4, 41)
        s1 = solve_drbsde_lattice(p1, lat)
        s2 = solve_drbsde_lattice(p2, lat)
        bound = (1.0 + p1.lipschitz * lat.grid.dt) ** 100 * delta
        assert np.max(np.abs(s1.Y - s2.Y)) <= bound + 1e-12

    def test_varpi_range_enforced(self):
        p = make_preset("dynkin-flat", {})
        lat = build_lattice(p, 50, -3, 3, 31)
        sol = solve_drbsde_lattice(p, lat)
        with pytest.raises(ProblemError):
            stability_gap(lat, p, sol, p, sol, varpi=3.0)

    def test_obstacles_must_match(self):
        p1 = make_preset("dynkin-flat", {"l_lo": -1.0})
        p2 = make_preset("dynkin-flat", {"l_lo": -0.5})
        lat = build_lattice(p1, 50, -3, 3, 31)
        s1 = solve_drbsde_lattice(p1, lat)
        s2 = solve_drbsde_lattice(p2, lat)
        with pytest.raises(ProblemError, match="identical obstacles"):
            stability_gap(lat, p1, s1, p2, s2, varpi=2.0)


class TestLsmc:
    def test_martingale_root_near_zero(self):
        p = scalar_problem()
        st, mu, nu = simulate(p, 20_000, 25, seed=21)
        sol = solve_drbsde_lsmc(p, st, mu, nu)
        assert abs(sol.root) <= 3.0 * sol.se_root + 1e-12

    def test_linear_generator_reproduces_discrete_recursion(self):
        rho = 0.5
        N = 40
        p = scalar_problem(h=lambda x: np.full(np.shape(x)[:-1], 1.0),
                           f=lambda t, x, y, z, u, v: -rho * y, gamma=1.0)
        st, mu, nu = simulate(p, 5_000, N, seed=22)
        sol = solve_drbsde_lsmc(p, st, mu, nu)
        exact = (1.0 - rho * st.grid.dt) ** N
        assert abs(sol.root - exact) <= 3.0 * sol.se_root + 1e-10

    def test_dynkin_flat_root(self):
        p = make_preset("dynkin-flat", {})
        st, mu, nu = simulate(p, 5_000, 25, seed=23)
        sol = solve_drbsde_lsmc(p, st, mu, nu)
        assert abs(sol.root) <= 3.0 * sol.se_root + 1e-12

    def test_flat_off_residuals_vanish_along_paths(self):
        p = scalar_problem(b0=-0.5, l_lo=lambda t, x: x[..., 0] - 0.3)
        st, mu, nu = simulate(p, 4_000, 25, seed=24)
        sol = solve_drbsde_lsmc(p, st, mu, nu)
        assert sol.K_lo[-1].max() > 0.0
        assert check_flat_off(sol, p, st) == (0.0, 0.0)

    def test_bins_basis(self):
        p = scalar_problem()
        st, mu, nu = simulate(p, 4_000, 10, seed=25)
        sol = solve_drbsde_lsmc(p, st, mu, nu, basis="bins", n_bins=20)
        assert abs(sol.root) <= 3.0 * sol.se_root + 0.05

    def test_insufficient_paths_raise(self):
        p = scalar_problem()
        st, mu, nu = simulate(p, 5, 4, seed=26)
        with pytest.raises(RegressionError, match="step"):
            solve_drbsde_lsmc(p, st, mu, nu, se_batches=0)

    def test_states_must_carry_ensemble(self):
        p = scalar_problem()
        st, mu, nu = simulate(p, 50, 4, seed=27)
        st.ens = None
        with pytest.raises(ProblemError, match="ensemble"):
            solve_drbsde_lsmc(p, st, mu, nu)

    def test_lattice_consistency_on_binding_problem(self):
        # drift pushes Y onto the lower barrier at the root: both routes exact
        p = scalar_problem(b0=-0.5, l_lo=lambda t, x: x[..., 0] - 0.3)
        lat = build_lattice(p, 64, -4, 4, 33)
        lat_root = solve_drbsde_lattice(p, lat).root_at(16)
        st, mu, nu = simulate(p, 20_000, 64, seed=28)
        sol = solve_drbsde_lsmc(p, st, mu, nu)
        assert abs(sol.root - lat_root) <= 3.0 * sol.se_root + 1e-10
