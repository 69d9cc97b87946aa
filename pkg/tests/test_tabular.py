import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcrl.certify import build_explicit_product, oracle_psp, policy_satisfaction
from lcrl.product import ProductRuntime, ProductState
from lcrl.tabular import (
    Counts, Hyperparams, PspVector, QTable, action_lister, count_update, effective_gamma,
    first_success_episode, lcql_train, psp_from_counts, psp_local_update, q_update, transfer_update,
)

from conftest import automaton, environment, kripke

S, T1, T2 = (ProductState(i, 0) for i in range(3))


def test_counts_first_and_second_observation():
    c = Counts()
    count_update(c, S, 0, T1)
    assert c.Psi[(S, 0)] == 2 and c.psi[(S, 0)][T1] == 2
    assert c.kernel(S, 0) == {T1: 1.0}
    count_update(c, S, 0, T2)
    assert c.Psi[(S, 0)] == 3
    assert c.kernel(S, 0) == pytest.approx({T1: 2 / 3, T2: 1 / 3})


def test_counts_converge_to_kernel():
    c = Counts()
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        count_update(c, S, 0, T1 if rng.random() < 0.85 else T2)
    k = c.kernel(S, 0)
    assert abs(k[T1] - 0.85) < 0.02 and abs(k[T2] - 0.15) < 0.02


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=60))
def test_empirical_kernel_is_a_distribution(outcomes):
    c = Counts()
    for o in outcomes:
        count_update(c, S, 0, ProductState(o, 0))
    k = c.kernel(S, 0)
    assert sum(k.values()) == pytest.approx(1.0)
    assert all(0 < p <= 1 for p in k.values())


def test_q_update_constant_and_state_dependent_discount():
    Q = QTable(2)
    Q.row(T1)[:] = [0.5, 1.0]
    hp = Hyperparams(mu=0.5, gamma=0.9)
    assert q_update(Q, S, 0, 0.0, T1, [0, 1], hp) == pytest.approx(0.45)
    hp = Hyperparams(mu=1.0, eta=0.8)
    assert effective_gamma(1.0, hp) == 0.8 and effective_gamma(0.0, hp) == 1.0
    assert q_update(Q, S, 1, 1.0, T1, [0, 1], hp) == pytest.approx(1.8)


def test_q_update_terminal_has_no_bootstrap():
    Q = QTable(2)
    assert q_update(Q, S, 0, 0.0, T1, [], Hyperparams(mu=1.0)) == 0.0


def test_transfer_update_takes_max_across_clock():
    Q = QTable(3)
    here, there = ProductState((1, 1), 0, 0), ProductState((1, 1), 0, 1)
    Q.row(here)[2] = 0.5
    Q.row(there)[2] = 0.2
    transfer_update(Q, here, 2, n_clock=3)
    assert Q.get(there, 2) == 0.5
    assert Q.get(ProductState((1, 1), 0, 2), 2) == 0.5
    Q.row(there)[1] = 0.9
    transfer_update(Q, here, 1, n_clock=3)
    assert Q.get(there, 1) == 0.9


def test_psp_local_update_and_sinks():
    psp = PspVector(sinks={2})
    c = Counts()
    bad = ProductState(9, 2)
    count_update(c, S, 0, bad)
    count_update(c, S, 0, T1)
    count_update(c, S, 0, T1)
    assert psp_local_update(psp, S, c, [0, 1]) == pytest.approx(0.5)
    assert psp.get(bad) == 0.0
    assert psp.get(T2) == 1.0


def test_hyperparams_validation():
    for kw in (dict(mu=0), dict(gamma=1.5), dict(eta=1.0), dict(episodes=-1)):
        with pytest.raises(ValueError):
            Hyperparams(**kw)
    hp = Hyperparams(episodes=100, eps_decay_frac=0.5)
    assert hp.epsilon(0) == 1.0 and hp.epsilon(50) == hp.eps_end


def test_continuous_env_rejected():
    rt = ProductRuntime(environment("single_target.world"), automaton("reach_avoid.ldba"))
    with pytest.raises(ValueError, match="finite"):
        lcql_train(rt, Hyperparams(episodes=1))


def _comparison():
    env = environment("comparison_5.grid")
    A = automaton("recurrence_ab_avoid_c.ldba")
    return env, A


def test_psp_matches_oracle_on_small_grid():
    env, A = _comparison()
    rt = ProductRuntime(env, A, seed=0)
    res = lcql_train(rt, Hyperparams(episodes=1000, it_threshold=200, seed=0))
    assert res.steps >= 50_000
    psp = psp_from_counts(res.counts, rt.sinks, action_lister(rt))
    p = build_explicit_product(env, A)
    x = oracle_psp(p)
    err = max(abs(v - x[p.index[ps]]) for ps, v in psp.values.items())
    assert err < 0.05


def test_learned_policy_optimal_on_small_grid():
    env, A = _comparison()
    rt = ProductRuntime(env, A, seed=1)
    res = lcql_train(rt, Hyperparams(episodes=1000, it_threshold=200, seed=1))
    p = build_explicit_product(env, A)
    assert oracle_psp(p)[p.initial] - policy_satisfaction(p, res.policy(rt)) <= 0.02


def test_training_is_bitwise_reproducible():
    env, A = _comparison()
    out = []
    for _ in range(2):
        rt = ProductRuntime(env, A, seed=3)
        res = lcql_train(rt, Hyperparams(episodes=50, it_threshold=100, seed=3))
        out.append((sorted((repr(k), v.tobytes()) for k, v in res.Q.values.items()),
                    [(r.steps, r.total_reward) for r in res.curve]))
    assert out[0] == out[1]


def test_checkpoints_and_first_success():
    env, A = _comparison()
    seen = []
    rt = ProductRuntime(env, A, seed=0)
    res = lcql_train(rt, Hyperparams(episodes=40, it_threshold=100, seed=0),
                     checkpoint=lambda ep, r: seen.append(ep), checkpoint_every=10)
    assert seen == [10, 20, 30, 40]
    first = first_success_episode(res.curve)
    assert first is None or res.curve[first].frontier_resets > 0


def test_transfer_runs_with_clock():
    env = environment("corridor.grid")
    K = kripke("corridor.kripke")
    rt = ProductRuntime(env, automaton("reach_avoid_g.ldba"), K, seed=0)
    res = lcql_train(rt, Hyperparams(episodes=20, it_threshold=50, transfer=True, seed=0))
    ks = {ps.k for ps in res.Q.values}
    assert ks == set(range(K.n_states))
