import logging
import re

import numpy as np
import pytest

from fpimaging.binning import FrameSequence
from fpimaging.fields import Domain, Grid2D, ScalarField
from fpimaging.fokker_planck import FpConfig, SolverTrajectory, neumann_laplacian, solve_forward
from fpimaging.inverse import (
    H1Preconditioner,
    InverseConfig,
    compute_gradient,
    h1_gradient,
    l2_gradient,
    ncg_minimize,
    objective,
)

DOMAIN = Domain()


def smooth_potential(grid, scale=0.2):
    xx, yy = grid.meshgrid()
    return ScalarField(grid, scale * np.sin(xx) * np.cos(yy) + 0.1 * np.cos(0.5 * xx + 0.7 * yy))


def random_data(grid, n_frames, frame_dt, seed=0):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.5, 1.5, size=(n_frames, grid.ny, grid.nx))
    raw /= raw.sum(axis=(1, 2), keepdims=True) * grid.cell_area
    return FrameSequence(grid, raw, frame_dt)


def uniform_field(grid):
    return ScalarField.full(grid, 1.0 / (grid.domain.width * grid.domain.height))


def blob_field(grid):
    xx, yy = grid.meshgrid()
    b = np.exp(-(xx**2 + yy**2))
    return ScalarField(grid, b / (b.sum() * grid.cell_area))


def self_consistent_data(grid, fp_cfg, every=1):
    """Frames produced by the zero-potential evolution itself."""
    traj = solve_forward(blob_field(grid), ScalarField.zeros(grid), fp_cfg)
    frames = np.clip(traj.states[::every], 0.0, None)
    return FrameSequence(grid, frames, fp_cfg.dt * every)


class TestObjective:
    def setup_method(self):
        self.grid = Grid2D(DOMAIN, 12, 12)
        self.fp = FpConfig(sigma_fp=0.7, grid=self.grid, dt=0.05, n_steps=8)
        self.inv = InverseConfig(alpha=1e-4, xi=1.0)

    def test_perfect_uniform_fit_is_zero(self):
        f0 = uniform_field(self.grid)
        fd = FrameSequence(self.grid, np.repeat(f0.values[None], 3, axis=0), self.fp.t_final / 2)
        J = objective(ScalarField.zeros(self.grid), f0, fd, self.inv, self.fp)
        assert J == pytest.approx(0.0, abs=1e-25)

    def test_constant_potential_adds_exact_regularizer(self):
        f0 = uniform_field(self.grid)
        fd = FrameSequence(self.grid, np.repeat(f0.values[None], 3, axis=0), self.fp.t_final / 2)
        c = 0.7
        J0 = objective(ScalarField.zeros(self.grid), f0, fd, self.inv, self.fp)
        Jc = objective(ScalarField.full(self.grid, c), f0, fd, self.inv, self.fp)
        assert Jc - J0 == pytest.approx(0.5 * self.inv.alpha * c**2 * 36.0, rel=1e-12)

    def test_matches_explicit_summation_oracle(self):
        # re-derive J with plain loops: trapezoid in time, midpoint in space,
        # face differences for the gradient penalty
        grid, fp, inv = self.grid, self.fp, self.inv
        U = smooth_potential(grid)
        fd = random_data(grid, 3, fp.t_final / 2, seed=5)
        f0 = fd.frame(0)
        J = objective(U, f0, fd, inv, fp)

        traj = solve_forward(f0, U, fp)
        area = grid.cell_area
        running = 0.0
        for n in range(fp.n_steps + 1):
            t = n * fp.dt
            frame = min(int(np.floor(t / fd.dt + 1e-9)), fd.n_frames - 1)
            diff = traj.states[n] - fd.values[frame]
            weight = 0.5 if n in (0, fp.n_steps) else 1.0
            running += weight * fp.dt * (diff**2).sum() * area
        terminal_diff = traj.states[-1] - fd.values[-1]
        terminal = (terminal_diff**2).sum() * area
        u = U.values
        grad_sq = (np.diff(u, axis=1) ** 2 / grid.hx**2).sum() + (
            np.diff(u, axis=0) ** 2 / grid.hy**2
        ).sum()
        reg = (u**2).sum() + grad_sq
        expected = 0.5 * running + 0.5 * inv.xi * terminal + 0.5 * inv.alpha * reg * area
        assert J == pytest.approx(expected, rel=1e-12)

    def test_traj_shortcut_matches(self):
        U = smooth_potential(self.grid)
        fd = random_data(self.grid, 3, self.fp.t_final / 2, seed=6)
        f0 = fd.frame(0)
        traj = solve_forward(f0, U, self.fp)
        assert objective(U, f0, fd, self.inv, self.fp, traj=traj) == objective(
            U, f0, fd, self.inv, self.fp
        )


class TestL2Gradient:
    def setup_method(self):
        self.grid = Grid2D(DOMAIN, 10, 10)
        self.fp = FpConfig(sigma_fp=0.7, grid=self.grid, dt=0.05, n_steps=6)

    def zero_adjoint(self):
        shape = (self.fp.n_steps + 1, self.grid.ny, self.grid.nx)
        return SolverTrajectory(self.grid, np.zeros(shape), self.fp.dt)

    def forward(self, U):
        return solve_forward(uniform_field(self.grid), U, self.fp)

    def test_zero_adjoint_zero_potential(self):
        U = ScalarField.zeros(self.grid)
        g = l2_gradient(U, self.forward(U), self.zero_adjoint(), alpha=1e-4)
        assert np.abs(g.values).max() == 0.0

    def test_zero_adjoint_constant_potential(self):
        c, alpha = 0.8, 1e-3
        U = ScalarField.full(self.grid, c)
        g = l2_gradient(U, self.forward(U), self.zero_adjoint(), alpha=alpha)
        np.testing.assert_allclose(g.values, alpha * c, rtol=1e-12)

    def test_alpha_linearity_of_regularizer_part(self):
        U = smooth_potential(self.grid)
        traj = self.forward(U)
        p = self.zero_adjoint()
        alpha = 2.5e-4
        g1 = l2_gradient(U, traj, p, alpha=alpha)
        g2 = l2_gradient(U, traj, p, alpha=2 * alpha)
        lap = neumann_laplacian(self.grid)
        expected = alpha * (U.values.ravel() - lap @ U.values.ravel())
        np.testing.assert_allclose(
            (g2.values - g1.values).ravel(), expected, rtol=1e-10, atol=1e-16
        )


class TestH1Gradient:
    def setup_method(self):
        self.grid = Grid2D(DOMAIN, 14, 11)

    def test_constant_passes_through(self):
        g = h1_gradient(ScalarField.full(self.grid, 3.7))
        np.testing.assert_allclose(g.values, 3.7, rtol=1e-12)

    def test_zero_maps_to_zero(self):
        g = h1_gradient(ScalarField.zeros(self.grid))
        assert np.abs(g.values).max() == 0.0

    def test_helmholtz_residual(self):
        rng = np.random.default_rng(0)
        g_l2 = ScalarField(self.grid, rng.normal(size=self.grid.shape))
        g_h1 = h1_gradient(g_l2)
        op = np.eye(self.grid.n_cells) - neumann_laplacian(self.grid).toarray()
        resid = op @ g_h1.values.ravel() - g_l2.values.ravel()
        assert np.abs(resid).max() < 1e-10

    def test_inner_product_identity(self):
        # (g_h1, v)_H1 = (g_l2, v)_L2 by the defining equation
        rng = np.random.default_rng(1)
        pre = H1Preconditioner(self.grid)
        g_l2 = rng.normal(size=self.grid.n_cells)
        g_h1 = pre.solve(g_l2)
        for _ in range(5):
            v = rng.normal(size=self.grid.n_cells)
            lhs = pre.inner(g_h1, v)
            rhs = (g_l2 * v).sum() * self.grid.cell_area
            assert lhs == pytest.approx(rhs, rel=1e-10)


class TestComputeGradient:
    def setup_method(self):
        self.grid = Grid2D(DOMAIN, 16, 16)
        self.fp = FpConfig(sigma_fp=0.7, grid=self.grid, dt=0.03, n_steps=20)
        self.inv = InverseConfig(alpha=1e-4, xi=1.0)

    def test_zero_data_fixed_point(self):
        fd = self_consistent_data(self.grid, self.fp)
        g = compute_gradient(ScalarField.zeros(self.grid), fd.frame(0), fd, self.inv, self.fp)
        assert np.abs(g.values).max() < 1e-12

    def test_directional_derivatives_match_finite_differences(self):
        U = smooth_potential(self.grid)
        fd = random_data(self.grid, 5, self.fp.t_final / 4, seed=0)
        f0 = fd.frame(0)
        pre = H1Preconditioner(self.grid)
        g = compute_gradient(U, f0, fd, self.inv, self.fp, pre=pre)
        rng = np.random.default_rng(1)
        eps = 1e-5
        for _ in range(10):
            d = rng.normal(size=self.grid.shape)
            d /= np.abs(d).max()
            predicted = pre.inner(g.values.ravel(), d.ravel())
            Jp = objective(ScalarField(self.grid, U.values + eps * d), f0, fd, self.inv, self.fp)
            Jm = objective(ScalarField(self.grid, U.values - eps * d), f0, fd, self.inv, self.fp)
            fd_value = (Jp - Jm) / (2 * eps)
            assert predicted == pytest.approx(fd_value, rel=1e-3)

    def test_sampled_route_consistent_as_dt_shrinks(self):
        # the continuous-adjoint route carries an O(dt) quadrature layer;
        # its gap to the transposed-march gradient must shrink with dt
        grid = Grid2D(DOMAIN, 12, 12)
        U = smooth_potential(grid)
        T = 0.6
        fd = random_data(grid, 4, T / 3, seed=0)
        f0 = fd.frame(0)
        gaps = {}
        for n in (10, 40):
            fp = FpConfig(sigma_fp=0.7, grid=grid, dt=T / n, n_steps=n)
            ge = compute_gradient(U, f0, fd, self.inv, fp, method="exact")
            gs = compute_gradient(U, f0, fd, self.inv, fp, method="sampled")
            gaps[n] = np.abs(ge.values - gs.values).max() / np.abs(ge.values).max()
        assert gaps[40] < 0.5 * gaps[10]

    def test_unknown_method_rejected(self):
        fd = random_data(self.grid, 2, self.fp.t_final, seed=2)
        with pytest.raises(ValueError):
            compute_gradient(
                ScalarField.zeros(self.grid), fd.frame(0), fd, self.inv, self.fp, method="magic"
            )


class TestNcgMinimize:
    def setup_method(self):
        self.grid = Grid2D(DOMAIN, 16, 16)
        self.fp = FpConfig(sigma_fp=0.7, grid=self.grid, dt=0.03, n_steps=20)

    def test_zero_drift_data_returns_near_zero_potential(self):
        fd = self_consistent_data(self.grid, self.fp)
        inv = InverseConfig(alpha=1e-4, xi=1.0, tol=0.5, n_max=20)
        U_hat, report = ncg_minimize(fd.frame(0), fd, inv, self.fp)
        assert np.abs(U_hat.values).max() <= 1e-2

    def test_monotone_descent_and_positive_dy_denominators(self):
        fd = self_consistent_data(self.grid, self.fp, every=5)
        inv = InverseConfig(alpha=1e-4, xi=1.0, tol=1e-6, n_max=12)
        _, report = ncg_minimize(fd.frame(0), fd, inv, self.fp)
        objectives = [r.objective for r in report.iterates]
        assert all(b <= a for a, b in zip(objectives, objectives[1:]))
        assert all(r.dy_denominator > 0 for r in report.iterates if r.beta > 0)
        assert report.n_iter == 12

    def test_pure_tikhonov_contracts_toward_zero(self):
        fd = self_consistent_data(self.grid, self.fp, every=10)
        inv = InverseConfig(alpha=0.05, xi=1.0, tol=1e-8, n_max=10, data_weight=0.0)
        u0 = smooth_potential(self.grid, scale=0.5)
        U_hat, report = ncg_minimize(fd.frame(0), fd, inv, self.fp, u0=u0)
        objectives = [r.objective for r in report.iterates]
        assert all(b < a for a, b in zip(objectives, objectives[1:]))
        assert np.abs(U_hat.values).max() < np.abs(u0.values).max()

    def test_steepest_descent_also_converges_on_zero_drift_data(self):
        fd = self_consistent_data(self.grid, self.fp)
        inv = InverseConfig(alpha=1e-4, xi=1.0, tol=0.5, n_max=20, direction="steepest")
        U_hat, report = ncg_minimize(fd.frame(0), fd, inv, self.fp)
        assert np.abs(U_hat.values).max() <= 1e-2
        assert all(r.beta == 0.0 for r in report.iterates)

    def test_iteration_log_is_tab_separated(self, caplog):
        fd = self_consistent_data(self.grid, self.fp, every=5)
        inv = InverseConfig(alpha=1e-4, xi=1.0, tol=1e-6, n_max=3)
        with caplog.at_level(logging.INFO, logger="fpimaging.inverse"):
            ncg_minimize(fd.frame(0), fd, inv, self.fp)
        lines = [r.getMessage() for r in caplog.records if "\t" in r.getMessage()]
        assert len(lines) == 3
        pattern = re.compile(r"^\d+\t[\d.e+-]+\t[\d.e+-]+\t[\d.e+-]+\t\d+$")
        for line in lines:
            assert pattern.match(line), line

    def test_report_bookkeeping(self):
        fd = self_consistent_data(self.grid, self.fp, every=5)
        inv = InverseConfig(alpha=1e-4, xi=1.0, tol=1e-6, n_max=4)
        U_hat, report = ncg_minimize(fd.frame(0), fd, inv, self.fp)
        assert np.array_equal(report.final_potential.values, U_hat.values)
        assert report.n_iter == len(report.iterates) == 4
        assert report.threshold == pytest.approx(1e-6 * report.initial_grad_norm)
        assert report.final_objective == report.iterates[-1].objective
