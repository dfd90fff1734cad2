import csv
import io

import numpy as np
import pytest
from scipy.sparse.linalg import eigsh

from heisenvar.errors import ValidationError
from heisenvar.hdiff import dirichlet_energy, stiffness_matrix
from heisenvar.subcrit import (SWEEP_COLUMNS, SubcritConfig, eigen_oracle, epsilon_sweep, holder_bound,
                               solve_subcritical, sweep_csv)


def test_config_validation():
    for bad in (0.0, 2.0, -1.0):
        with pytest.raises(ValidationError):
            SubcritConfig(bad)
    assert SubcritConfig(0.5).p == 3.5


def test_holder_bound_arithmetic():
    assert holder_bound(1 / 16, 16.0, 2.0) == pytest.approx(1.0)
    assert holder_bound(0.3, 5.0, 0.0) == pytest.approx(0.3)
    assert holder_bound(0.5, 1.0, 1.0) == pytest.approx(0.5**0.75)


def test_eigen_oracle_matches_eigsh(small_ball):
    g, m = small_ball
    lam = eigen_oracle(g, m)
    ref = eigsh(stiffness_matrix(m), k=1, sigma=0, which="LM")[0][0]
    assert lam == pytest.approx(ref, rel=1e-8)


def test_p_to_two_limit(small_ball):
    # at p = 2 the supremum of int u^2 at unit energy is 1 / lambda_1
    g, m = small_ball
    inv = 1.0 / eigen_oracle(g, m)
    rep = solve_subcritical(SubcritConfig(1.999), g, m)
    assert rep.converged
    assert rep.s_eps == pytest.approx(inv, rel=5e-3)


def test_solution_properties(small_ball):
    g, m = small_ball
    rep = solve_subcritical(SubcritConfig(0.5), g, m)
    assert rep.converged
    assert dirichlet_energy(rep.maximizer) == pytest.approx(1.0, rel=1e-9)
    assert rep.el_residual < 1e-5
    assert rep.max_descent <= 1e-12
    assert np.all(np.diff(rep.history) >= -1e-12 * rep.history[-1])
    cold = solve_subcritical(SubcritConfig(0.5, init="random", seed=3), g, m)
    assert cold.s_eps == pytest.approx(rep.s_eps, rel=1e-6)


def test_sweep_and_csv(small_ball, s_star):
    g, m = small_ball
    rows = epsilon_sweep([1.0, 0.5], g, m)
    assert [r.epsilon for r in rows] == [1.0, 0.5]
    assert all(r.converged for r in rows)
    for r in rows:
        assert r.s_eps <= holder_bound(s_star, m.volume, r.epsilon) * 1.05
    text = sweep_csv(rows, header_lines=["seed=0"])
    lines = text.splitlines()
    assert lines[0] == "# seed=0"
    table = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    assert tuple(table[0]) == SWEEP_COLUMNS
    assert len(table) == 3
    assert float(table[1][1]) == rows[0].s_eps
    with pytest.raises(ValidationError):
        epsilon_sweep([0.5, 1.0], g, m)
