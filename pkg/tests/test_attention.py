import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slotfree import attention as A
from slotfree.case_task import gen_batch, one_hot
from slotfree.errors import DivergenceError, InvalidConfigError

H = 1e-5


def central_diff(f, W):
    """Central finite differences of the scalar ``f()`` w.r.t. every entry of W."""
    G = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        old = W[idx]
        W[idx] = old + H
        up = f()
        W[idx] = old - H
        down = f()
        W[idx] = old
        G[idx] = (up - down) / (2 * H)
    return G


def rel_err(a, b):
    scale = np.linalg.norm(a) + np.linalg.norm(b)
    return np.linalg.norm(a - b) / scale if scale > 0 else 0.0


def small_instance(rng, B=3):
    L = int(rng.integers(2, 5))
    C = int(rng.integers(2, L + 1))
    N = int(rng.integers(4, 9))
    batch = gen_batch(L, C, B, rng)
    slow = A.SlowWeights.init(N, 3 * L, 0.5, rng, v_high=1.0)
    return batch, slow


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_softmax_positive_and_normalised(seed):
    z = np.random.default_rng(seed).normal(0, 30, size=(5, 7))
    s = A.softmax(z)
    assert np.all(s > 0) and np.allclose(s.sum(axis=1), 1.0)


def test_baseline_single_item_returns_its_value(rng):
    slow = A.SlowWeights.init(6, 12, 1.0, rng)
    X = one_hot(np.array([[3]]), 12)
    xq = one_hot(np.array([9]), 12)
    c = A.baseline_forward(slow, X, xq)
    assert np.allclose(c.y_hat[0], slow.W_V[:, 3])


def test_baseline_zero_query_gives_mean_value(rng):
    slow = A.SlowWeights.init(6, 12, 1.0, rng)
    slow.W_Q[:] = 0
    batch = gen_batch(4, 4, 5, rng)
    X = batch.context_onehot()
    c = A.baseline_forward(slow, X, batch.query_onehot())
    assert np.allclose(c.s, 0.25)
    assert np.allclose(c.y_hat, (X @ slow.W_V.T).mean(axis=1))


def test_baseline_gradients_match_finite_differences(rng):
    for _ in range(10):
        batch, slow = small_instance(rng)
        X, xq, y = batch.context_onehot(), batch.query_onehot(), batch.target
        grads = A.baseline_grads(slow, X, xq, y)
        loss = lambda: A.baseline_loss(slow, X, xq, y)  # noqa: E731
        for W, g in zip((slow.W_Q, slow.W_K, slow.W_V), grads):
            assert rel_err(g, central_diff(loss, W)) < 1e-5


def test_value_gradient_under_uniform_attention(rng):
    slow = A.SlowWeights.init(5, 12, 1.0, rng)
    slow.W_K[:] = 0
    batch = gen_batch(4, 3, 6, rng)
    X, xq, y = batch.context_onehot(), batch.query_onehot(), batch.target
    _, _, dV = A.baseline_grads(slow, X, xq, y)
    xbar = X.mean(axis=1)
    expect = 2 * (xbar @ slow.W_V.T - y).T @ xbar
    assert np.allclose(dV, expect)


def test_gradients_vanish_at_target(rng):
    slow = A.SlowWeights.init(5, 12, 1.0, rng)
    batch = gen_batch(4, 4, 4, rng)
    X, xq = batch.context_onehot(), batch.query_onehot()
    y = A.baseline_forward(slow, X, xq).y_hat
    for g in A.baseline_grads(slow, X, xq, y):
        assert np.allclose(g, 0)
    fast = A.FastWeights.init(4, 6, 5, 12, rng)
    A.fast_store(slow, fast, X)
    c = A.query_forward(slow, fast, xq)
    for g in A.mhn_grads_QV(slow, fast, xq, c.y_hat):
        assert np.allclose(g, 0)
    y_K, _ = A.key_readout(slow, fast, c.x_tilde)
    assert np.allclose(A.wk_grad_mhn(slow, fast, c.x_tilde, y_K), 0)
    assert np.allclose(A.wk_grad_qk(slow, c.x_tilde, c.x_tilde @ slow.W_K.T), 0)
    assert np.allclose(A.wk_grad_qk(slow, np.zeros_like(c.x_tilde), c.q), 0)


@pytest.mark.parametrize("projection", [False, True])
def test_slot_free_gradients_match_finite_differences(rng, projection):
    for _ in range(8):
        batch, slow = small_instance(rng)
        L, B = batch.L, len(batch)
        n_h = max(2 * L, int(rng.integers(batch.C, 3 * L)))
        proj = A.input_projection(n_h, L) if projection else None
        fast = A.FastWeights.init(B, n_h, slow.N, 3 * L, rng, proj)
        X, xq, y = batch.context_onehot(), batch.query_onehot(), batch.target
        A.fast_store(slow, fast, X)
        before = fast.checksum()
        dQ, dV = A.mhn_grads_QV(slow, fast, xq, y)
        loss = lambda: A.mhn_loss(slow, fast, xq, y)  # noqa: E731
        assert rel_err(dQ, central_diff(loss, slow.W_Q)) < 1e-5
        assert rel_err(dV, central_diff(loss, slow.W_V)) < 1e-5
        xt = A.query_forward(slow, fast, xq).x_tilde
        dK = A.wk_grad_mhn(slow, fast, xt, y)
        assert rel_err(dK, central_diff(lambda: A.key_readout_loss(slow, fast, xt, y),
                                        slow.W_K)) < 1e-5
        q = xq @ slow.W_Q.T
        dK = A.wk_grad_qk(slow, xt, q)
        assert rel_err(dK, central_diff(lambda: A.qk_loss(slow, xt, q), slow.W_K)) < 1e-6
        assert fast.checksum() == before


def test_projection_layout():
    P = A.input_projection(10, 4)
    assert np.array_equal(P[:8, :8], np.eye(8))
    assert P[8:].sum() == 0 and P[:, 8:].sum() == 0
    P = A.input_projection(4, 4)
    assert np.array_equal(P[:, :4], np.eye(4)) and np.array_equal(P[:, 4:8], np.eye(4))
    with pytest.raises(InvalidConfigError):
        A.input_projection(3, 4)


def test_projection_gives_token_slots(rng):
    slow = A.SlowWeights.init(50, 12, 1 / np.sqrt(50), rng)
    batch = gen_batch(4, 4, 200, rng)
    fast = A.FastWeights.init(200, 10, 50, 12, rng, A.input_projection(10, 4))
    A.fast_store(slow, fast, batch.context_onehot())
    assert np.array_equal(fast.winners, batch.context)


def test_store_step_replaces_winner(rng):
    fast = A.FastWeights.init(1, 3, 4, 6, rng)
    fast.W_HK[:] = 0
    fast.W_HK[0, 2] = [1, 0, 0, 0]
    k = np.array([[2.0, 0.5, -1.0, 0.25]])
    r = A.fast_store_step(fast, k, np.array([[0.3, 0.7]]), one_hot(np.array([1]), 6))
    assert r[0] == 2
    assert np.array_equal(fast.W_HK[0, 2], k[0])
    assert np.array_equal(fast.W_VH[0, :, 2], [0.3, 0.7])
    assert np.array_equal(fast.W_IH[0, :, 2], one_hot(np.array([1]), 6)[0])
    # the same slot wins again and is overwritten
    k2 = 2 * k
    r = A.fast_store_step(fast, k2, np.array([[0.9, 0.1]]), one_hot(np.array([4]), 6))
    assert r[0] == 2 and np.array_equal(fast.W_HK[0, 2], k2[0])
    assert np.array_equal(fast.W_VH[0, :, 2], [0.9, 0.1])


def test_store_ties_go_to_lowest_slot(rng):
    fast = A.FastWeights.init(1, 4, 3, 6, rng, A.input_projection(4, 2))
    # zero key, projection only: the token's own slot
    r = A.fast_store_step(fast, np.zeros((1, 3)), np.zeros((1, 2)), one_hot(np.array([5]), 6))
    assert r[0] == 0   # query tokens project nowhere; all drives tie at 0


def test_zero_keys_give_uniform_readout(rng):
    slow = A.SlowWeights.init(5, 12, 1.0, rng)
    fast = A.FastWeights.init(3, 7, 5, 12, rng)
    fast.W_HK[:] = 0
    c = A.query_forward(slow, fast, one_hot(np.array([8, 9, 10]), 12))
    assert np.allclose(c.a_q, 1 / 7)


def test_slot_free_equals_baseline_with_perfect_storage(rng):
    N, L = 50, 4
    slow = A.SlowWeights.init(N, 3 * L, 1 / np.sqrt(N), rng)
    batch = gen_batch(L, L, 300, rng)
    X, xq = batch.context_onehot(), batch.query_onehot()
    fast = A.FastWeights.init(300, L, N, 3 * L, rng, A.input_projection(L, L))
    A.fast_store(slow, fast, X)
    base = A.baseline_forward(slow, X, xq, beta=1.0)
    c = A.query_forward(slow, fast, xq)
    assert np.max(np.abs(c.y_hat - base.y_hat)) < 1e-12
    assert np.max(np.abs(c.y_val - base.y_hat)) < 1e-12


def test_accuracy_counts_ties_wrong():
    y = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    out = np.array([[0.6, 0.4], [0.5, 0.5], [0.2, 0.9]])
    assert A.batch_accuracy(out, y) == pytest.approx(1 / 3)


def test_train_config_validation():
    with pytest.raises(InvalidConfigError):
        A.TrainConfig(variant="nope")
    with pytest.raises(InvalidConfigError):
        A.TrainConfig(variant="baseline", projection=True)
    with pytest.raises(InvalidConfigError):
        A.train_preset("fixed-wk", n_h=2)
    assert A.train_preset("baseline").init_std == pytest.approx(1 / (4 * np.sqrt(10)))
    assert A.train_preset("qk-align").init_std == pytest.approx(1 / np.sqrt(50))


def test_divergence_guard():
    cfg = A.train_preset("baseline", iterations=200, eta_Q=50.0, eta_K=50.0, eta_V=50.0)
    with pytest.raises(DivergenceError):
        A.train(cfg, seed=0)


def test_training_trace_and_fixed_key_matrix():
    cfg = A.train_preset("fixed-wk", True, iterations=300, snapshot_every=100)
    trace, slow0 = A.train(cfg, seed=3)
    assert trace.acc.shape == (300,) and np.all((trace.acc >= 0) & (trace.acc <= 1))
    assert np.all(trace.loss >= 0)
    assert [it for it, _ in trace.snapshots] == [0, 100, 200, 300]
    first = trace.snapshots[0][1].key_upper_lower
    last = trace.snapshots[-1][1].key_upper_lower
    assert np.array_equal(first, last)    # W_K never moves


def test_training_is_seed_deterministic():
    cfg = A.train_preset("qk-align", True, iterations=50)
    t1, s1 = A.train(cfg, seed=9)
    t2, s2 = A.train(cfg, seed=9)
    assert np.array_equal(t1.loss, t2.loss) and np.array_equal(s1.W_K, s2.W_K)


def test_probe_shapes_and_untrained_contrast():
    rng = np.random.default_rng(0)
    gaps = []
    for _ in range(200):
        slow = A.SlowWeights.init(50, 12, 1 / np.sqrt(50), rng)
        rep = A.probe_structure(slow, 4)
        assert rep.key_upper_lower.shape == rep.query_lower.shape == (4, 4)
        assert rep.value_columns.shape == (2, 8)
        gaps.append(rep.identity_score())
    # entries have std 1/sqrt(N); the on/off contrast of random weights is
    # centred at zero and small against that scale
    assert abs(np.mean(gaps)) < 3 * np.std(gaps) / np.sqrt(200)
    assert np.std(gaps) < 1 / np.sqrt(50)


def test_value_learning_zero_step_keeps_columns():
    res = A.wv_convergence_check(N=20, iterations=5, batch=8, eta=0.0, average_last=5)
    rng = A.make_rng(0)
    init = A.SlowWeights.init(20, 12, 1 / np.sqrt(20), rng)
    assert np.allclose(res.W_V, init.W_V, rtol=0, atol=1e-15)


def test_value_learning_step_bound():
    assert A.value_step_bound(4, 2) == pytest.approx(4 / (2 * 0.25 * 12))
    with pytest.raises(InvalidConfigError):
        A.wv_convergence_check(iterations=1, eta=A.value_step_bound(4, 2))


def test_case_emerges_before_letter_identity():
    # at the first iteration above 95% accuracy the value case structure has
    # gained more than the key letter-identity contrast
    for variant, proj in (("baseline", False), ("qk-align", True)):
        cfg = A.train_preset(variant, proj, iterations=1500, snapshot_every=0)
        trace, _ = A.train(cfg, seed=1)
        assert trace.crossing is not None
        assert trace.crossing["case_gain"] > trace.crossing["identity_gain"]
