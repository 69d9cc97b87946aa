import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcrl.automaton import REJECTED
from lcrl.continuous.fvi import (
    CountingSampler, FviParams, KernelValueFn, expected_samples, fvi_greedy, fvi_run, grid_centres,
    kernel_weights,
)
from lcrl.continuous.lcnfq import (
    HybridQ, LcnfqParams, consistent_starts, dump_hybridq, explore_collect, hybridq_greedy, lcnfq_train,
    load_hybridq, uniform_starts,
)
from lcrl.continuous.mlp import Mlp, RpropState, mlp_gradient, mlp_loss, rprop_fit, rprop_step
from lcrl.continuous.voronoi import VoronoiCodebook, VqParams, codebook_rows, vq_greedy, vq_train
from lcrl.environments import STAY, KripkeStructure, load_continuous
from lcrl.product import ProductRuntime, ProductState

from conftest import automaton, environment


# ---------------------------------------------------------------- MLP and Rprop

@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    net = Mlp(4, 6, rng)
    X = rng.normal(size=(8, 4))
    y = rng.normal(size=8)
    grads = mlp_gradient(net, X, y)
    h = 1e-5
    for p, g in zip(net.params(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = mlp_loss(net, X, y)
            p[idx] = old - h
            down = mlp_loss(net, X, y)
            p[idx] = old
            fd = (up - down) / (2 * h)
            assert abs(fd - g[idx]) <= 1e-4 * max(1.0, abs(fd))


def test_rprop_steps_grow_on_agreement():
    net = Mlp(1, 1)
    state = RpropState.for_net(net)
    before = net.b2.copy()
    moves = []
    for _ in range(3):
        rprop_step(net, state, [np.zeros_like(p) for p in net.params()[:3]] + [np.array([1.0])])
        moves.append(float(before[0] - net.b2[0]))
        before = net.b2.copy()
    assert moves == pytest.approx([0.1, 0.12, 0.144])


def test_rprop_zero_gradient_and_sign_flip():
    net = Mlp(1, 1)
    state = RpropState.for_net(net)
    snapshot = [p.copy() for p in net.params()]
    rprop_step(net, state, [np.zeros_like(p) for p in net.params()])
    assert all(np.array_equal(a, b) for a, b in zip(snapshot, net.params()))
    g = [np.zeros_like(p) for p in net.params()]
    g[3] = np.array([1.0])
    rprop_step(net, state, g)
    g[3] = np.array([-1.0])
    b2 = net.b2.copy()
    rprop_step(net, state, g)
    assert state.steps[3][0] == pytest.approx(0.05)
    assert net.b2[0] == b2[0]          # no move on the flip


def test_rprop_fits_simple_function():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(64, 1))
    y = np.sin(2 * X[:, 0])
    net = Mlp(1, 8, rng)
    start = mlp_loss(net, X, y)
    rprop_fit(net, X, y, 300)
    assert mlp_loss(net, X, y) < 0.01 * start


# ---------------------------------------------------------------- kernel averager

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 2.0))
def test_kernel_weights_are_convex(seed, h):
    rng = np.random.default_rng(seed)
    C = grid_centres(25)
    pts = rng.uniform(-0.5, 1.5, size=(10, 2))
    W = kernel_weights(C, pts, h)
    assert np.all(W >= 0)
    assert np.allclose(W.sum(axis=1), 1.0)
    vals = rng.normal(size=25)
    est = W @ vals
    assert np.all(est >= vals.min() - 1e-12) and np.all(est <= vals.max() + 1e-12)


def test_kernel_value_far_points_do_not_underflow():
    C = grid_centres(4)
    W = kernel_weights(C, np.array([[50.0, 50.0]]), 0.01)
    assert np.isfinite(W).all() and W.sum() == pytest.approx(1.0)


def test_fvi_params_validated():
    for kw in (dict(Z=0), dict(h=0), dict(k=10)):
        with pytest.raises(ValueError):
            FviParams(**kw)


def _two_targets():
    return environment("two_targets.world"), automaton("sequential_pt.ldba")


def test_fvi_sample_count_formula():
    env, A = _two_targets()
    hp = FviParams(k=16, Z=3, sweeps=2)
    vf, sampler = fvi_run(ProductRuntime(env, A), hp)
    n_acc = sum(A.is_accepting(q) for q in range(A.n_states))
    assert sampler.calls == expected_samples(hp, env.n_actions, A.n_states, n_acc)
    assert sampler.calls == 16 * 3 * 5 * 3


def test_fvi_accepting_values_fixed_and_rejected_zero():
    env, A = _two_targets()
    vf, _ = fvi_run(ProductRuntime(env, A), FviParams(k=16, Z=3, sweeps=3))
    assert np.all(vf.values[2] == 1.0)
    assert np.all(vf(np.array([[1.0, 1.0]]), REJECTED) == 0.0)
    assert np.all((vf.values >= 0) & (vf.values <= 1 + 1e-12))


def test_fvi_rejects_clock():
    env, A = _two_targets()
    rt = ProductRuntime(env, A, KripkeStructure(cells=((0, 0),)))
    with pytest.raises(ValueError):
        fvi_run(rt, FviParams(k=4, Z=1))


def test_fvi_greedy_ties_go_to_first_action():
    env, A = _two_targets()
    vf = KernelValueFn(grid_centres(4), np.zeros((A.n_states, 4)), 0.1, (env.width, env.height))
    pol = fvi_greedy(vf, ProductRuntime(env, A), 2, np.random.default_rng(0))
    assert pol(ProductState((2.0, 2.0), 0)) == 0


def test_fvi_greedy_moves_toward_value():
    # value rises to the right, so the lookahead should choose "right"
    env = load_continuous("size: 10 10\nstep: 2 0.002\ninitial: 5 5\n")
    A = automaton("reach_avoid.ldba")
    C = grid_centres(100)
    vals = np.tile(C[:, 0], (A.n_states, 1))
    vf = KernelValueFn(C, vals, 0.05, (10, 10))
    pol = fvi_greedy(vf, ProductRuntime(env, A), 1, np.random.default_rng(0))
    assert pol(ProductState((5.0, 5.0), 0)) == 1


def test_fvi_deterministic_replay():
    env, A = _two_targets()
    a, _ = fvi_run(ProductRuntime(env, A), FviParams(k=16, Z=2, sweeps=3, seed=4))
    b, _ = fvi_run(ProductRuntime(env, A), FviParams(k=16, Z=2, sweeps=3, seed=4))
    assert a.values.tobytes() == b.values.tobytes()


def test_counting_sampler():
    env, _ = _two_targets()
    s = CountingSampler(env)
    s((1.0, 1.0), STAY, np.random.default_rng(0))
    assert s.calls == 1


# ---------------------------------------------------------------- Voronoi quantiser

def test_codebook_nearest_and_append():
    book = VoronoiCodebook(2, 3, (10, 10), 0.1)
    assert book.nearest(0, (1, 1)) == (-1, np.inf)
    book.append(0, (1, 1))
    book.append(0, (9, 9))
    i, d = book.nearest(0, (8, 8))
    assert i == 1 and d == pytest.approx(np.hypot(0.1, 0.1))
    with pytest.raises(ValueError):
        VoronoiCodebook(1, 1, (1, 1), 0.0)


def test_vq_centroids_separated_by_resolution():
    env, A = _two_targets()
    delta = 0.1
    book = vq_train(ProductRuntime(env, A), delta, VqParams(episodes=200, steps=50, seed=0),
                    start=consistent_starts(env, A))
    for q in range(A.n_states):
        assert book.min_pairwise(q) > delta


def test_vq_coarse_resolution_keeps_one_centroid_per_state():
    env, A = _two_targets()
    book = vq_train(ProductRuntime(env, A), 1.5, VqParams(episodes=300, steps=100, seed=0))
    assert all(book.size(q) <= 1 for q in range(A.n_states))


def test_vq_first_visit_to_state_opens_a_cell():
    env, A = _two_targets()
    book = vq_train(ProductRuntime(env, A), 5.0, VqParams(episodes=300, steps=100, seed=1),
                    start=consistent_starts(env, A, states=[1]))
    assert book.size(1) == 1 and book.size(2) == 1


def test_vq_replay_and_rows():
    env, A = _two_targets()
    rows = [codebook_rows(vq_train(ProductRuntime(env, A), 0.2, VqParams(episodes=50, steps=40, seed=2)))
            for _ in range(2)]
    assert rows[0] == rows[1]
    book = VoronoiCodebook(A.n_states, 8, (10, 10), 0.2)
    book.append(0, (5, 5))
    book.Q[0][0, 3] = 1.0
    assert vq_greedy(book, ProductRuntime(env, A))(ProductState((5.0, 5.0), 0)) == 3


# ---------------------------------------------------------------- LCNFQ

def test_consistent_starts_respect_labels():
    env, A = _two_targets()
    draw = consistent_starts(env, A)
    rng = np.random.default_rng(0)
    for _ in range(200):
        p, q = draw(rng)
        assert q not in A.sinks
        assert A.step(q, env.labels(p)) != REJECTED
    p, q = uniform_starts(env, [1])(rng)
    assert q == 1 and env.in_bounds(p)


def test_explore_buffer_shapes_and_episode_ends():
    env, A = _two_targets()
    rt = ProductRuntime(env, A, seed=0)
    buf = explore_collect(rt, 30, 20, np.random.default_rng(0))
    assert len(buf) == sum(buf.episodes) and max(buf.episodes) <= 30
    assert buf.s.shape == (len(buf), 2)
    assert set(np.unique(buf.q)) <= {0, 1, 2}


def test_lcnfq_training_and_dump_roundtrip():
    env, A = _two_targets()
    rt = ProductRuntime(env, A, seed=0)
    buf = explore_collect(rt, 30, 30, np.random.default_rng(0), start=consistent_starts(env, A))
    bank = lcnfq_train(buf, rt, LcnfqParams(sweeps=2, epochs=5, seed=0))
    text = dump_hybridq(bank)
    again = load_hybridq(text)
    assert dump_hybridq(again) == text
    pts = np.array([[1.0, 2.0], [7.0, 3.0]])
    for q in range(A.n_states):
        assert np.array_equal(bank.values(pts, q), again.values(pts, q))
    ps = ProductState((3.0, 3.0), 0)
    assert hybridq_greedy(bank, ps) == hybridq_greedy(again, ps)


def test_lcnfq_features_one_hot():
    bank = HybridQ([Mlp(2 + 5)], 5, (10, 10), [[0, 1, 2, 3, 4]])
    X = bank.features(np.array([[5.0, 10.0]]), [3])
    assert X.tolist() == [[0.5, 1.0, 0, 0, 0, 1, 0]]


def test_lcnfq_deterministic_replay():
    env, A = _two_targets()
    out = []
    for _ in range(2):
        rt = ProductRuntime(env, A, seed=5)
        buf = explore_collect(rt, 20, 10, np.random.default_rng(5))
        out.append(dump_hybridq(lcnfq_train(buf, rt, LcnfqParams(sweeps=2, epochs=3, seed=5))))
    assert out[0] == out[1]


def test_lcnfq_params_validated():
    with pytest.raises(ValueError):
        LcnfqParams(gamma=1.0)
    env, A = _two_targets()
    rt = ProductRuntime(env, A)
    empty = explore_collect(rt, 0, 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        lcnfq_train(empty, rt)
