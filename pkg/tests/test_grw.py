import numpy as np
import pytest

from collapsesim.core import Hamiltonian, SpatialGrid, cat_state, gaussian_packet, product_state
from collapsesim.errors import DomainError, NumericalCollapseError, ResolutionError
from collapsesim.grw import (
    GrwParams,
    apply_jump,
    gaussian_effect,
    next_event_time,
    run_grw_trajectory,
    sample_outcome,
    state_digest,
)
from collapsesim.kick import KickParams, run_kick_trajectory


@pytest.fixture
def big_grid():
    return SpatialGrid(-20.0, 20.0, 400)


class TestEffect:
    def test_squared_effect_is_normalized_gaussian(self, big_grid):
        e = gaussian_effect(big_grid, 1.0, 0.7)
        assert np.sum(e**2) * big_grid.dx == pytest.approx(1.0, abs=1e-12)

    def test_completeness_over_outcomes(self, big_grid):
        # integral over outcomes of G(x - o) is 1 at every x
        outcomes = np.linspace(-30, 30, 6001)
        x = big_grid.x[::40]
        G = np.array([gaussian_effect(big_grid, o, 0.7)[::40] ** 2 for o in outcomes])
        total = np.trapezoid(G, outcomes, axis=0) if hasattr(np, "trapezoid") else np.trapz(G, outcomes, axis=0)
        inner = np.abs(x) < 10
        assert np.allclose(total[inner], 1.0, atol=1e-9)

    def test_resolution(self, grid):
        with pytest.raises(ResolutionError):
            gaussian_effect(grid, 0.0, 0.3)


class TestJump:
    def test_posterior_width(self, big_grid):
        # pdf std s and effect std sigma combine as 1/v = 1/s^2 + 1/sigma^2
        s, sigma = 1.5, 0.8
        psi = gaussian_packet(big_grid, 0.0, s)
        out = apply_jump(psi, 0, 0.6, sigma)
        v = 1.0 / (1 / s**2 + 1 / sigma**2)
        assert out.position_variance() == pytest.approx(v, rel=1e-9)
        assert out.mean_position() == pytest.approx(0.6 * v / sigma**2, abs=1e-9)
        assert out.norm() == pytest.approx(1.0, abs=1e-12)

    def test_cat_collapses_to_branch(self, cat):
        out = apply_jump(cat, 0, 2.0, 0.5)
        # what survives of the left branch is its product with the effect,
        # peaked midway at relative amplitude ~exp(-8), so infidelity ~exp(-16)
        right = apply_jump(gaussian_packet(cat.grid, 2.0, 0.5), 0, 2.0, 0.5)
        assert 1 - abs(out.overlap(right)) ** 2 < 1e-6

    def test_negligible_outcome(self, grid):
        psi = gaussian_packet(grid, -6.0, 0.5)
        with pytest.raises(NumericalCollapseError):
            apply_jump(psi, 0, 7.5, 0.5)

    def test_particle_index_checked(self, cat):
        with pytest.raises(DomainError):
            apply_jump(cat, 1, 0.0, 0.5)

    def test_two_particle_jump_acts_on_one_axis(self, grid):
        a, b = gaussian_packet(grid, -2, 1.0), gaussian_packet(grid, 2, 1.0)
        out = apply_jump(product_state(a, b), 1, 2.5, 0.5)
        assert np.allclose(out.marginal_pdf(0), a.pdf())
        assert np.allclose(out.marginal_pdf(1), apply_jump(b, 0, 2.5, 0.5).pdf())


class TestSampling:
    def test_outcome_moments(self, big_grid):
        s, sigma = 1.0, 0.7
        psi = gaussian_packet(big_grid, 0.5, s)
        rng = np.random.default_rng(3)
        draws = np.array([sample_outcome(psi, 0, sigma, rng) for _ in range(40000)])
        assert draws.mean() == pytest.approx(0.5, abs=0.02)
        assert draws.var() == pytest.approx(s**2 + sigma**2 + big_grid.dx**2 / 12, rel=0.03)

    def test_born_rule_for_cat(self, cat):
        rng = np.random.default_rng(4)
        draws = np.array([sample_outcome(cat, 0, 0.5, rng) for _ in range(20000)])
        assert np.mean(draws > 0) == pytest.approx(0.5, abs=0.015)

    def test_waiting_time_mean(self):
        rng = np.random.default_rng(1)
        waits = [next_event_time(4.0, rng) for _ in range(20000)]
        assert np.mean(waits) == pytest.approx(0.25, rel=0.03)

    def test_zero_rate_has_no_clock(self):
        with pytest.raises(DomainError):
            next_event_time(0.0, np.random.default_rng())


class TestTrajectory:
    def test_reproducible(self, cat, H0):
        p = GrwParams(2.0, 0.5)
        a = run_grw_trajectory(cat, H0, p, 3.0, (1.0, 3.0), seed=11)
        b = run_grw_trajectory(cat, H0, p, 3.0, (1.0, 3.0), seed=11)
        assert [e.to_dict() for e in a.events] == [e.to_dict() for e in b.events]
        assert np.array_equal(a.final_state.amplitudes, b.final_state.amplitudes)

    def test_event_count_is_poisson(self, cat, H0):
        p = GrwParams(3.0, 0.5)
        counts = [len(run_grw_trajectory(cat, H0, p, 2.0, seed=s).events) for s in range(400)]
        assert np.mean(counts) == pytest.approx(6.0, abs=0.4)
        assert np.var(counts) == pytest.approx(6.0, rel=0.25)

    def test_zero_rate_leaves_state(self, cat, H0):
        rec = run_grw_trajectory(cat, H0, GrwParams(0.0, 0.5), 1.0, (1.0,), seed=1)
        assert rec.events == []
        assert np.array_equal(rec.final_state.amplitudes, cat.amplitudes)

    def test_snapshots_match_times(self, cat, H0):
        rec = run_grw_trajectory(cat, H0, GrwParams(1.0, 0.5), 2.0, (0.0, 0.5, 2.0), seed=2)
        assert len(rec.snapshots) == 3
        assert np.array_equal(rec.snapshots[0].amplitudes, cat.amplitudes)

    def test_unsorted_snapshots_rejected(self, cat, H0):
        with pytest.raises(DomainError):
            run_grw_trajectory(cat, H0, GrwParams(1.0, 0.5), 2.0, (1.0, 0.5))

    def test_events_ordered_and_logged(self, cat, H0):
        rec = run_grw_trajectory(cat, H0, GrwParams(5.0, 0.5), 2.0, seed=3)
        t = rec.event_times()
        assert np.all(np.diff(t) > 0) and t[-1] <= 2.0
        assert set(rec.events[0].to_dict()) == {"time", "index", "outcome"}

    def test_rigid_mode_rate(self):
        p = GrwParams(0.5, 0.5, com_rigid=True, com_N=40)
        assert p.total_rate == 20.0
        with pytest.raises(DomainError):
            GrwParams(0.5, 0.5, com_N=0)

    def test_two_particle_channels(self, grid, H0):
        a, b = gaussian_packet(grid, -2, 0.8), gaussian_packet(grid, 2, 0.8)
        rec = run_grw_trajectory(product_state(a, b), H0, GrwParams(5.0, 0.5, 2), 10.0, seed=5)
        idx = np.array([e.particle_index for e in rec.events])
        assert len(idx) == pytest.approx(100, abs=35)
        assert 0.3 < idx.mean() < 0.7

    def test_particle_count_checked(self, cat, H0):
        with pytest.raises(DomainError):
            run_grw_trajectory(cat, H0, GrwParams(1.0, 0.5, 2), 1.0)

    def test_shares_clock_with_kicks(self, cat, H0):
        grw = run_grw_trajectory(cat, H0, GrwParams(3.0, 0.5), 2.0, seed=9)
        kick = run_kick_trajectory(cat, H0, KickParams(3.0, 0.5), 2.0, seed=9)
        assert np.array_equal(grw.event_times(), kick.event_times())

    def test_with_dynamics(self, H0):
        g = SpatialGrid(-12.0, 12.0, 96)
        psi = cat_state(g, 4.0, 0.7)
        rec = run_grw_trajectory(psi, Hamiltonian("harmonic", frequency=0.5), GrwParams(1.0, 0.5), 1.0, (1.0,), seed=4)
        assert rec.final_state.norm() == pytest.approx(1.0, abs=1e-12)

    def test_record_names_setup(self, cat, H0):
        rec = run_grw_trajectory(cat, H0, GrwParams(1.0, 0.5), 1.0, seed=1)
        assert rec.params["model"] == "grw"
        assert rec.params["psi0_digest"] == state_digest(cat)
        assert rec.seed == 1
