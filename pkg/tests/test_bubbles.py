import numpy as np
import pytest

from heisenvar.bubbles import (BubbleTrack, PSSpec, RecoverySpec, background_cutoff, cutoff_arrays,
                               dE_residual, energy_E_lambda, energy_E_star, psi_profile, recovery_glued,
                               recovery_pair, recovery_single, synth_ps_sequence, xn_approximation)
from heisenvar.errors import ValidationError
from heisenvar.grid import DomainMask, Field, Grid, quadrature_lp
from heisenvar.group import GroupPoint
from heisenvar.hdiff import dirichlet_energy
from heisenvar.measures import XPair

P = GroupPoint.from_xyt


@pytest.fixture
def ladder_grid():
    g = Grid.box((1.0, 1.0, 1.0), (49, 49, 97))
    return g, DomainMask.full(g)


def test_psi_profile_values():
    s = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    assert psi_profile(s) == pytest.approx([1, 1, 1, 0.75**3, 0, 0])
    assert cutoff_arrays(P(0.1, 0, 0), 0.5, np.array(0.1), np.array(0.0), np.array(0.0)) == 1.0


def test_recovery_single_unit_energy(ladder_grid):
    g, m = ladder_grid
    for eps in (0.2, 0.1):
        u = recovery_single(P(0.1, 0.0, 0.05), eps, 0.4, g, m)
        assert dirichlet_energy(u) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValidationError):
        recovery_single(GroupPoint.identity(), 0.0, 0.4, g, m)


def test_recovery_spec_validation():
    with pytest.raises(ValidationError):
        RecoverySpec([(0.6, P(0, 0, -1)), (0.5, P(0, 0, 1))], 0.1)
    with pytest.raises(ValidationError):
        RecoverySpec([(0.3, P(0, 0, 0)), (0.3, P(0.1, 0, 0))], 0.1)
    with pytest.raises(ValidationError):
        RecoverySpec([(0.3, P(0, 0, 0))], 0.1, eps_ladder=(0.1, 0.2))


def test_glued_energy_is_sum_of_weights(ladder_grid):
    g, m = ladder_grid
    rho = 0.2
    tau = 8 * rho**2 + 0.02
    spec = RecoverySpec([(0.3, P(0, 0, -tau)), (0.4, P(0, 0, tau))], rho)
    u = recovery_glued(spec, 0.05, g, m)
    assert dirichlet_energy(u) == pytest.approx(0.7, abs=1e-12)


def test_recovery_pair_with_background(ladder_grid):
    g, m = ladder_grid
    rho = 0.3
    tau = 8 * rho**2 + 0.02
    X, Y, T = g.mesh
    bg = Field(m, np.broadcast_to(0.1 * np.cos(np.pi * X / 2) * np.cos(np.pi * Y / 2) * np.cos(np.pi * T / 2), g.shape))
    spec = RecoverySpec([(0.2, P(0, 0, -tau)), (0.2, P(0, 0, tau))], rho, background=bg, singular_mass=0.01)
    pair = recovery_pair(spec, 0.05, g, m, bubble_fraction=0.3)
    assert isinstance(pair, XPair)
    phi = background_cutoff(spec, g)
    assert phi.min() == 0.0 and phi.max() == 1.0
    assert pair.mass <= 1.0
    assert pair.mu.residual_mass == 0.01
    small = xn_approximation(pair, 0, 0.5)
    assert small.mass == pytest.approx(0.25 * pair.mass)
    with pytest.raises(ValidationError):
        xn_approximation(pair, 1, 1.5)


def test_energy_functionals_hand_values(small_ball, rng):
    g, m = small_ball
    u = Field(m, rng.standard_normal(g.shape))
    d, l2, l4 = dirichlet_energy(u), quadrature_lp(u, 2), quadrature_lp(u, 4)
    assert energy_E_lambda(u, 3.0) == pytest.approx(0.5 * d - 1.5 * l2 - 0.25 * l4, rel=1e-12)
    assert energy_E_star(u) == pytest.approx(0.5 * d - 0.25 * l4, rel=1e-12)


def test_residual_linear_regime(small_ball, rng):
    # for tiny u the cubic term is negligible and the dual norm of L u is sqrt(energy)
    g, m = small_ball
    u = Field(m, 1e-5 * rng.standard_normal(g.shape))
    rep = dE_residual(u, 0.0, dual=True)
    assert rep.dual == pytest.approx(np.sqrt(dirichlet_energy(u)), rel=1e-6)
    zero = dE_residual(Field.zeros(m), 2.0, dual=True)
    assert zero.bank == zero.l2 == zero.dual == 0.0


def test_synth_ps_sequence(small_ball):
    g, m = small_ball
    c = P(0.0, 0.0, 0.0)
    spec = PSSpec([BubbleTrack(0.4, 2.0, c)], (0, 2))
    seq = synth_ps_sequence(spec, g, m)
    assert len(seq) == 3
    for k, u in enumerate(seq):
        assert u.values[8, 8, 8] == pytest.approx(2.0 / (0.4 * 2.0**-k))
    with pytest.raises(ValidationError):
        BubbleTrack(0.4, 1.0)
    with pytest.raises(ValidationError):
        synth_ps_sequence(PSSpec([BubbleTrack(0.4, 2.0, P(0.99, 0, 0))]), g, m)
    noisy = synth_ps_sequence(PSSpec([BubbleTrack(0.4, 2.0, c)], (0, 0), noise=0.01, seed=7), g, m)
    again = synth_ps_sequence(PSSpec([BubbleTrack(0.4, 2.0, c)], (0, 0), noise=0.01, seed=7), g, m)
    assert np.array_equal(noisy[0].values, again[0].values)
