import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from feedcap import channels
from feedcap.codefunctions import iid_input, random_input
from feedcap.errors import CapExceeded, CaseMismatch, FlagUnsupported, NotConverged, NotErgodic
from feedcap.kernels import MarkovChannelSpec, binary_entropy, mutual_information
from feedcap.mdp import (
    BeliefGrid,
    PolicyRule,
    acoe_capacity,
    build_instance,
    check_mixing,
    closed_form_noisi_csi,
    cost,
    dynamics,
    grid_size,
    make_state_space,
    policy_to_input,
    reduce_input_to_belief,
    resolve_case,
    simplex_grid,
    snap,
    solve_acoe,
)
from feedcap.verify import decomposition_sides

BSC_CAP = 1 - binary_entropy(0.1)
CSI_CAP = 0.5 * BSC_CAP + 0.5 * (1 - binary_entropy(0.4))


# -- grids -----------------------------------------------------------------

@pytest.mark.parametrize("dim,res", [(2, 4), (3, 5), (4, 3)])
def test_grid_count_and_idempotent_snap(dim, res):
    g = BeliefGrid(dim, res)
    assert len(g) == math.comb(res + dim - 1, dim - 1) == grid_size(dim, res)
    idx, disp = snap(g.points, g.points)
    np.testing.assert_array_equal(idx, np.arange(len(g)))
    assert np.all(disp == 0)


def test_snap_ties_lowest_index():
    pts = simplex_grid(2, 2)  # (1,0), (.5,.5), (0,1)
    k, d = snap(pts, [0.75, 0.25])
    assert k == 0 and d == pytest.approx(0.5)


@given(st.integers(0, 10**6))
def test_snap_is_nearest(seed):
    rng = np.random.default_rng(seed)
    pts = simplex_grid(3, 6)
    x = rng.dirichlet(np.ones(3))
    k, d = snap(pts, x)
    assert d <= np.abs(pts - x).sum(axis=1).min() + 1e-12


# -- cost ------------------------------------------------------------------

def test_cost_dirac_zero():
    R = channels.random_markov(np.random.default_rng(0)).emission
    u = np.zeros((2, 2))
    u[1, 0] = 1.0
    assert cost(R, u) == pytest.approx(0.0, abs=1e-15)


def test_cost_noiseless_one_bit():
    assert cost(np.eye(2)[None], np.array([[0.5, 0.5]])) == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
def test_cost_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    spec = channels.random_markov(rng)
    atoms = simplex_grid(2, 8)
    R = np.einsum("js,sab->jab", atoms, spec.emission)
    u = rng.dirichlet(np.ones(atoms.shape[0] * 2)).reshape(-1, 2)
    joint = np.zeros((len(atoms) * 2, 2))
    for j in range(len(atoms)):
        for a in range(2):
            for b in range(2):
                joint[2 * j + a, b] = u[j, a] * sum(atoms[j, s] * spec.emission[s, a, b] for s in range(2))
    pb = joint.sum(axis=0)
    brute = sum(joint[i, b] * math.log2(joint[i, b] / (joint[i].sum() * pb[b]))
                for i in range(len(joint)) for b in range(2) if joint[i, b] > 0)
    assert cost(R, u) == pytest.approx(brute, abs=1e-12)


# -- dynamics --------------------------------------------------------------

def test_dynamics_single_state():
    space = make_state_space(channels.bsc(0.2))
    tr = dynamics(space, 0, [[0.3, 0.7]])
    np.testing.assert_allclose(tr.distribution, [1.0])


def test_dynamics_csi_independent_of_action():
    space = make_state_space(channels.csi_switching(), "csi")
    for row in ([1.0, 0.0], [0.5, 0.5], [0.2, 0.8]):
        np.testing.assert_allclose(dynamics(space, 0, [row]).distribution, [0.9, 0.1], atol=1e-12)


def test_dynamics_state_from_output_hand_expansion():
    spec = channels.output_memory((0.05, 0.25))
    space = make_state_space(spec, "state_out")
    u = np.array([0.3, 0.7])
    tr = dynamics(space, 1, [u])
    # next state = b; mass of b = sum_a p(b | s=1, a) u(a)
    expected = u @ spec.emission[1]
    np.testing.assert_allclose(tr.distribution, expected, atol=1e-15)


def test_dynamics_case_mismatch():
    space = make_state_space(channels.bsc(0.2))
    with pytest.raises(CaseMismatch):
        dynamics(space, 0, [[0.5, 0.3, 0.2]])


# -- instances -------------------------------------------------------------

def test_instance_single_state_costs_are_mutual_information():
    spec = channels.bsc(0.1)
    inst = build_instance(spec, action_grid=8)
    assert inst.n_states == 1 and inst.n_actions == 9
    for k, row in enumerate(inst.rows[0][:, 0]):
        assert inst.cost[k] == pytest.approx(mutual_information(row[:, None] * spec.emission[0]), abs=1e-12)


def test_instance_state_from_output_shape():
    inst = build_instance(channels.output_memory(), "state_out", action_grid=4)
    assert inst.n_states == 2 and inst.n_actions == 2 * 5


def test_instance_state_from_io_dimensions_and_constraint():
    spec = channels.io_memory()
    m = 4
    inst = build_instance(spec, "state_io", grid=m, action_grid=2)
    assert inst.n_states == math.comb(m + 3, 3)
    rng = np.random.default_rng(0)
    for i in rng.choice(inst.n_states, 10, replace=False):
        sl = inst.state_slice(i)
        for k in range(sl.stop - sl.start):
            u = inst.joint_action(i, k)
            np.testing.assert_allclose(u.sum(axis=1), inst.space.states[i], atol=1e-15)


def test_instance_invariants():
    inst = build_instance(channels.trapdoor(), "state_io", grid=8, action_grid=8)
    np.testing.assert_allclose(inst.next_rows().sum(axis=1), 1.0, atol=1e-10)
    assert inst.cost.min() >= -1e-12 and inst.cost.max() <= 1.0 + 1e-12


def test_flag_unsupported():
    with pytest.raises(FlagUnsupported):
        resolve_case(channels.gilbert_elliott(), "auto")
    with pytest.raises(FlagUnsupported):
        resolve_case(channels.gilbert_elliott(), "general")
    assert resolve_case(channels.gilbert_elliott(), "auto", experimental=True) == "general"
    with pytest.raises(FlagUnsupported):
        make_state_space(channels.random_markov(np.random.default_rng(0), nS=3), "general", experimental=True)


def test_action_cap():
    with pytest.raises(CapExceeded):
        build_instance(channels.io_memory(), "state_io", grid=8, action_grid=32, cap=10**6)


# -- solving ---------------------------------------------------------------

def test_acoe_bsc():
    run = acoe_capacity(channels.bsc(0.1), action_grid=64)
    assert run.solution.V_star == pytest.approx(BSC_CAP, abs=1e-3)
    assert run.solution.converged and run.solution.residual <= 1e-8


def test_acoe_noiseless():
    run = acoe_capacity(channels.noiseless(), action_grid=32)
    assert run.solution.V_star == pytest.approx(1.0, abs=1e-9)


def test_acoe_csi():
    run = acoe_capacity(channels.csi_switching(), "csi", action_grid=32)
    assert run.solution.V_star == pytest.approx(CSI_CAP, abs=1e-3)


def test_not_converged_carries_result():
    inst = build_instance(channels.trapdoor(), "state_io", grid=8, action_grid=4)
    with pytest.raises(NotConverged) as exc:
        solve_acoe(inst, eps=1e-15, max_iters=3)
    assert exc.value.result.iterations == 3


def test_closed_form_csi():
    res = closed_form_noisi_csi(channels.csi_switching())
    assert res.V_star == pytest.approx(0.280026, abs=1e-4)
    np.testing.assert_allclose(res.stationary, [0.5, 0.5], atol=1e-10)


def test_closed_form_identical_states():
    spec = channels.csi_switching((0.2, 0.2), stay=0.7)
    assert closed_form_noisi_csi(spec).V_star == pytest.approx(1 - binary_entropy(0.2), abs=1e-9)


def test_closed_form_not_ergodic():
    spec = channels.csi_switching(stay=1.0)
    with pytest.raises(NotErgodic):
        closed_form_noisi_csi(spec)


def test_closed_form_requires_flags():
    with pytest.raises(FlagUnsupported):
        closed_form_noisi_csi(channels.gilbert_elliott())


# -- mixing and stationarity ----------------------------------------------

def test_mixing_single_state():
    assert check_mixing(build_instance(channels.bsc(0.1), action_grid=8)).alpha == 0.0


def test_mixing_csi():
    rep = check_mixing(build_instance(channels.csi_switching(), "csi", action_grid=8))
    assert rep.alpha == pytest.approx(0.8, abs=1e-12) and rep.holds


def test_mixing_deterministic_output_memory():
    rep = check_mixing(build_instance(channels.noiseless(), action_grid=4))
    assert rep.alpha == 0.0
    spec = MarkovChannelSpec(2, 2, 2, [1, 0], channels.output_memory().transition, np.stack([np.eye(2)] * 2),
                             frozenset({"state_from_output"}))
    rep = check_mixing(build_instance(spec, "state_out", action_grid=4))
    assert rep.alpha == 1.0 and not rep.holds


def test_stationary_single_state_and_csi():
    run = acoe_capacity(channels.bsc(0.1), action_grid=16)
    np.testing.assert_allclose(run.stationary.distribution, [1.0])
    run = acoe_capacity(channels.csi_switching(), "csi", action_grid=16)
    np.testing.assert_allclose(run.stationary.distribution, [0.5, 0.5], atol=1e-9)
    assert run.stationary.average_cost == pytest.approx(run.solution.V_star, abs=2e-3)


@pytest.mark.parametrize("make,case", [(channels.trapdoor, "state_io"), (channels.output_memory, "state_out")])
def test_stationary_cost_matches_value(make, case):
    run = acoe_capacity(make(), case, grid=16, action_grid=16)
    assert run.stationary is not None
    assert run.stationary.average_cost == pytest.approx(run.solution.V_star, abs=2e-3)


# -- export ----------------------------------------------------------------

def test_export_bsc_uniform(tmp_path):
    run = acoe_capacity(channels.bsc(0.1), action_grid=32)
    rule = run.rule
    assert len(rule.rows) == 1
    np.testing.assert_allclose(rule.rows[0][0], [0.5, 0.5], atol=1 / 32)
    rule.save(tmp_path / "p.json")
    back = PolicyRule.load(tmp_path / "p.json")
    np.testing.assert_array_equal(back.dense_rows(), rule.dense_rows())


def test_export_belief_from_output_rows_only():
    om = channels.output_memory()
    spec = MarkovChannelSpec(om.S, om.A, om.B, om.initial, om.transition, om.emission,
                             frozenset({"state_from_output", "belief_from_output"}))
    inst = build_instance(spec, "belief_out", grid=4, action_grid=8)
    rule = policy_to_input(inst, solve_acoe(inst))
    assert rule.case == "belief_from_output"
    assert all(r.shape == (1, 2) for r in rule.rows)


# -- reductions and identities --------------------------------------------

def test_reduction_identity_for_belief_form_input():
    spec = channels.bsc(0.2)
    inp = iid_input([0.3, 0.7], 3, 2)
    red = reduce_input_to_belief(spec, inp)
    for a, b in zip(red.input.steps, inp.steps):
        np.testing.assert_allclose(a, b, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_reduction_random_two_state(seed):
    rng = np.random.default_rng(seed)
    red = reduce_input_to_belief(channels.random_markov(rng), random_input(rng, 2, 2, 2))
    assert red.max_deviation <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_decomposition_identity_state_from_io(seed):
    rng = np.random.default_rng(seed)
    spec = channels.io_memory()
    u = rng.dirichlet(np.ones(8)).reshape(4, 2)
    lhs, rhs = decomposition_sides(spec, u)
    assert abs(lhs - rhs) <= 1e-10


def test_state_from_output_identity():
    # with Dirac states the instance cost is I(A; B | S = s)
    spec = channels.output_memory()
    inst = build_instance(spec, "state_out", action_grid=8)
    for i in range(2):
        sl = inst.state_slice(i)
        for k, row in enumerate(inst.rows[i][:, 0]):
            assert inst.cost[sl][k] == pytest.approx(mutual_information(row[:, None] * spec.emission[i]), abs=1e-10)
