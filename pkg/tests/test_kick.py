import numpy as np
import pytest

from collapsesim.core import gaussian_packet, product_state
from collapsesim.errors import DomainError
from collapsesim.kick import (
    KickParams,
    apply_kick,
    kick_kernel,
    kick_variance,
    run_kick_trajectory,
    sample_kick,
)
from collapsesim.master import grw_kernel


def test_matched_variance():
    assert kick_variance(0.5) == pytest.approx(1.0)
    assert kick_variance(0.5, "strong") == pytest.approx(4.0)
    with pytest.raises(DomainError):
        kick_variance(0.5, "other")


def test_kernel_reproduces_grw_factor():
    d = np.linspace(0, 10, 101)
    assert np.allclose(1 - kick_kernel(d, 0.5), grw_kernel(d, 1.0, 0.5), atol=1e-15, rtol=0)


def test_strong_kernel_is_narrower():
    d = np.linspace(0.1, 3, 30)
    assert np.all(kick_kernel(d, 0.5, "strong") < kick_kernel(d, 0.5))
    assert np.allclose(kick_kernel(d, 0.5, "strong"), np.exp(-(d**2) / (2 * 0.25)))


def test_sampled_phase_average_matches_kernel():
    rng = np.random.default_rng(0)
    k = np.array([sample_kick(0.5, rng) for _ in range(50000)])
    for d in (0.5, 1.0, 2.0):
        assert np.mean(np.exp(1j * k * d)).real == pytest.approx(float(kick_kernel(d, 0.5)), abs=0.01)


def test_kick_is_unitary_and_shifts_momentum(grid):
    psi = gaussian_packet(grid, 0.0, 1.0)
    out = apply_kick(psi, 0, 1.5)
    assert out.norm() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(out.pdf(), psi.pdf(), rtol=1e-14, atol=0)
    assert out.mean_momentum() == pytest.approx(1.5, abs=1e-6)


def test_kick_on_second_particle(grid):
    a, b = gaussian_packet(grid, -2, 1.0), gaussian_packet(grid, 2, 1.0)
    out = apply_kick(product_state(a, b), 1, 0.75)
    assert out.mean_momentum(0) == pytest.approx(0.0, abs=1e-8)
    assert out.mean_momentum(1) == pytest.approx(0.75, abs=1e-6)


def test_trajectory_keeps_density(cat, H0):
    # with H = 0 kicks change phases only
    rec = run_kick_trajectory(cat, H0, KickParams(5.0, 0.5), 2.0, (2.0,), seed=3)
    assert len(rec.events) > 0
    assert np.allclose(rec.final_state.pdf(), cat.pdf())
    assert set(rec.events[0].to_dict()) == {"time", "index", "k"}
    assert rec.params["model"] == "kick"


def test_bad_mode_rejected():
    with pytest.raises(DomainError):
        KickParams(1.0, 0.5, variance_mode="wide")
