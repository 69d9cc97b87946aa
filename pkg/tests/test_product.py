import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcrl.automaton import REJECTED
from lcrl.environments import KripkeStructure, load_grid
from lcrl.product import ProductRuntime, ProductState, RewardParams, reward_of, rollout, success_rate

from conftest import automaton

GRID = "grid: 3\n. . t\n. . .\nu . .\nslip: 0\ninitial: (0,1)"
UP, RIGHT, DOWN, STAY = 2, 1, 3, 4


@pytest.fixture
def rt(reach_avoid):
    return ProductRuntime(load_grid(GRID), reach_avoid, seed=0)


def test_reset_state_and_frontier(rt):
    ps = rt.reset()
    assert ps == ProductState((0, 1), 0, None)
    assert rt.frontier == 0b1


def test_reset_with_clock(reach_avoid):
    K = KripkeStructure(cells=((1, 1), (1, 2), (2, 1), (2, 2)))
    rt = ProductRuntime(load_grid(GRID), reach_avoid, K)
    assert rt.reset() == ProductState((0, 1), 0, 0)


def test_actions_include_epsilon_moves(guess_ab):
    rt = ProductRuntime(load_grid(GRID), guess_ab)
    assert rt.available_actions(ProductState((0, 0), 1)) == [0, 1, 2, 3, 4, 5 + 2, 5 + 3]
    assert rt.available_actions(ProductState((0, 0), 2)) == [0, 1, 2, 3, 4]
    assert rt.available_actions(ProductState((0, 0), REJECTED)) == []


def test_epsilon_move_keeps_environment(guess_ab):
    env = load_grid("grid: 2\na . \n. .\nslip: 0\ninitial: (0,1)")
    rt = ProductRuntime(env, guess_ab)
    rt.reset(q=1)
    nxt, r, flags = rt.step(5 + 3)
    assert nxt == ProductState((0, 1), 3)
    assert r == 1.0  # q3 lies in the second accepting set
    with pytest.raises(ValueError):
        rt.step(5 + 1)


def test_entering_target_pays_and_refills(rt):
    rt.reset((1, 2))
    nxt, r, flags = rt.step(RIGHT)
    assert nxt.q == 1 and r == 1.0
    assert flags.reset and flags.accepting and not flags.sink
    assert rt.frontier == 0b1


def test_entering_unsafe_cell_hits_sink(rt):
    rt.reset((0, 1))
    nxt, r, flags = rt.step(DOWN)
    assert nxt.q == 2 and r == 0.0 and flags.sink


def test_reward_noise_range(reach_avoid):
    rng = np.random.default_rng(0)
    params = RewardParams(M=1.0, m=0.05, y=1)
    vals = [reward_of(reach_avoid, 1, 0b1, params, rng) for _ in range(1000)]
    assert all(1.0 < v < 1.05 for v in vals)
    assert reward_of(reach_avoid, 1, 0b1, RewardParams(), rng) == 1.0


@pytest.mark.parametrize("kw", [dict(M=0), dict(m=2.0), dict(y=2)])
def test_reward_params_validated(kw):
    with pytest.raises(ValueError):
        RewardParams(**kw)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.integers(0, 4), max_size=40), st.sampled_from([0, 1]))
def test_reward_bounded_and_state_valid(seed, actions, y):
    rt = ProductRuntime(load_grid(GRID.replace("slip: 0", "slip: 0.3")), automaton("reach_avoid.ldba"),
                        reward=RewardParams(y=y), seed=seed)
    ps = rt.reset()
    for a in actions:
        if ps.q == REJECTED:
            break
        ps, r, _ = rt.step(a)
        assert 0.0 <= r <= rt.reward.bound
        assert rt.frontier != 0
        assert rt.env.in_bounds(ps.env)


def test_same_seed_same_trajectory(rt):
    env = load_grid(GRID.replace("slip: 0", "slip: 0.5"))
    runs = []
    for _ in range(2):
        r = ProductRuntime(env, automaton("reach_avoid.ldba"), seed=7)
        runs.append(rollout(r, lambda ps: UP, 50, record=True).trajectory)
    assert runs[0] == runs[1]


def test_rollout_outcomes(rt):
    go = {(0, 1): UP, (0, 2): RIGHT, (1, 2): RIGHT}
    policy = lambda ps: go.get(ps.env, STAY)
    assert success_rate(rt, policy, horizon=1000, rollouts=100) == 1.0
    res = rollout(rt, policy, horizon=0)
    assert not res.success and res.steps == 0
    res = rollout(rt, lambda ps: DOWN, horizon=10)
    assert res.sink and not res.success and res.steps == 1


def test_random_policy_rarely_succeeds_on_narrow_path(reach_avoid):
    # target at the end of a corridor lined with unsafe cells
    env = load_grid("grid: 5\nu u u u u\nu u u u u\n. . . . t\nu u u u u\nu u u u u\n"
                    "slip: 0\ninitial: (0,2)")
    rt = ProductRuntime(env, reach_avoid, seed=0)
    rng = np.random.default_rng(0)
    rate = success_rate(rt, lambda ps: int(rng.integers(5)), horizon=200, rollouts=300)
    assert rate < 0.1


def test_step_outcome_depends_only_on_current_product_state():
    """Replay each (state, frontier, action) met along random histories under a fixed draw."""
    env = load_grid("grid: 3\na . b\n. . .\nb . a\nslip: 0.4")
    rt = ProductRuntime(env, automaton("recurrence_ab.ldba"), seed=0)
    probe = ProductRuntime(env, automaton("recurrence_ab.ldba"))
    rng = np.random.default_rng(0)
    seen = {}
    for _ in range(200):
        ps = rt.reset()
        for _ in range(rng.integers(1, 30)):
            a = int(rng.integers(5))
            key = (ps, rt.frontier, a)
            probe.reseed(99)
            probe.frontier = rt.frontier
            nxt, r, flags = probe.step(a, ps)
            outcome = (nxt, r, flags, probe.frontier)
            assert seen.setdefault(key, outcome) == outcome
            ps, _, _ = rt.step(a)
    assert len(seen) > 50
