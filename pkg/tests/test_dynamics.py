from fractions import Fraction

import numpy as np
import pytest

from dualfields.core_model import DualConfig, ModelSpec, Torus, nearest_neighbor_kernel, nu_sample
from dualfields.dynamics import (
    DualStateSpace, StateSpaceTooLarge, detailed_balance_check, exact_semigroup, replica_seed,
    simulate, simulate_coord, simulate_dual,
)
from dualfields.orthopoly import ProductDuality, default_table
from dualfields.dynamics import check_duality_pointwise

from conftest import IRW, SEP2, SIP1

SEP1 = ModelSpec(-1, 1, Fraction(1, 2))
NN = nearest_neighbor_kernel(1)


def test_replica_seeds_are_stable_and_distinct():
    assert replica_seed(7, 3) == replica_seed(7, 3)
    seeds = {replica_seed(7, r, 16, 2) for r in range(1000)}
    assert len(seeds) == 1000
    assert replica_seed(7, 0, 16) != replica_seed(7, 0, 32)
    assert 0 <= replica_seed(2**40, 5) < 2**63


def test_empty_configuration_has_no_events():
    traj = simulate(SIP1, NN, Torus(1, 8), np.zeros(8, dtype=int), 5.0, 1, 1)
    assert len(traj) == 0


def test_same_seed_same_trajectory(tmp_path):
    t = Torus(1, 10)
    eta = nu_sample(SIP1, t, 2)
    a = simulate(SIP1, NN, t, eta, 1.0, 2, 99)
    b = simulate(SIP1, NN, t, eta, 1.0, 2, 99)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.to_sites, b.to_sites)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_exclusion_never_exceeds_cap():
    t = Torus(1, 12)
    eta = np.array([1, 0] * 6)
    traj = simulate(SEP1, NN, t, eta, 20.0, 1, 5)
    assert len(traj) > 50
    traj.validate(SEP1)
    assert traj.replay().sum() == 6


def test_particle_number_conserved_and_times_macroscopic():
    t = Torus(1, 16)
    eta = nu_sample(IRW, t, 4)
    traj = simulate(IRW, NN, t, eta, 0.5, 16, 8)
    assert traj.times.max() <= 0.5
    # rate per particle is 1 on the microscopic clock n^2 t
    assert len(traj) == pytest.approx(eta.sum() * 0.5 * 256, rel=0.2)
    assert traj.replay().sum() == eta.sum()


def test_pointwise_duality_trivial_and_degree_one():
    t = Torus(1, 5)
    pd = ProductDuality(default_table(SIP1))
    eta = [0, 2, 1, 0, 3]
    assert check_duality_pointwise(SIP1, NN, t, DualConfig(), eta, pd) == 0
    assert check_duality_pointwise(SIP1, NN, t, DualConfig.from_sites([2]), eta, pd) == 0


@pytest.mark.parametrize("spec", [IRW, SEP2, SIP1], ids=lambda s: s.name)
def test_detailed_balance(spec):
    t = Torus(1, 4)
    assert detailed_balance_check(spec, NN, t, "nu", cap=2) == 0
    assert detailed_balance_check(spec, NN, t, "Lambda", k=3) == 0
    assert detailed_balance_check(spec, NN, t, "Pi", k=2) == 0


def test_detailed_balance_detector_fires():
    assert detailed_balance_check(SIP1, NN, Torus(1, 4), "Lambda", k=2, perturb=Fraction(1, 10)) != 0
    assert detailed_balance_check(SIP1, NN, Torus(1, 4), "Lambda", k=3, reading="printed") != 0


def test_exact_semigroup_is_stochastic_and_reversible():
    space = DualStateSpace(SIP1, NN, Torus(1, 5), 2)
    assert space.self_adjointness_defect() == 0
    P = exact_semigroup(space, 0.3, 4.0)
    assert np.allclose(P.sum(axis=1), 1, atol=1e-12)
    lam = np.array([float(v) for v in space.Lambda])
    assert np.allclose(lam[:, None] * P, (lam[:, None] * P).T, atol=1e-12)
    assert np.allclose(exact_semigroup(space, 0.0), np.eye(len(space)))


def test_state_space_guard():
    with pytest.raises(StateSpaceTooLarge):
        DualStateSpace(SIP1, NN, Torus(1, 200), 3)


def test_dual_walk_matches_semigroup_single_particle():
    t = Torus(1, 5)
    space = DualStateSpace(IRW, NN, t, 1)
    P = exact_semigroup(space, 0.4)
    start = DualConfig.from_sites([0])
    hits = 0
    reps = 3000
    for r in range(reps):
        traj = simulate_dual(IRW, NN, t, start, 0.4, replica_seed(3, r))
        hits += traj.state_at(0.4) == start
    p = P[space.index[start], space.index[start]]
    assert abs(hits / reps - p) < 4 * np.sqrt(p * (1 - p) / reps)


def test_coordinate_walk_runs():
    traj = simulate_coord(SEP2, NN, Torus(1, 6), (0, 0, 3), 1.0, 1)
    for state in traj.states:
        assert len(state) == 3
