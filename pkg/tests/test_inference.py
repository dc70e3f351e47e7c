import numpy as np
import numpy.testing as npt
import pytest

from pclab.network import (
    GammaSchedule,
    NetworkSpec,
    Params,
    free_energy,
    refresh_errors,
)
from pclab.inference import (
    InferenceConfig,
    activity_step,
    clamp_output_full,
    clamp_output_soft,
    infer_sequential,
    infer_simultaneous,
    init_state,
    proximal_gamma_fn,
    proximal_gammas,
    run_inference,
)
from pclab.diagnostics import finite_diff_grad


def rand_net(rng, dims, hidden="tanh", out="identity", scale=0.8):
    spec = NetworkSpec(dims, hidden_act=hidden, output_nl=out)
    ws = []
    for l in range(spec.n_weights):
        m, n1 = spec.weight_shape(l)
        ws.append(rng.uniform(-scale, scale, (m, n1)) / np.sqrt(n1))
    return Params(spec, ws)


def scalar_chain(weights_and_biases):
    """A chain of 1-wide layers with identity activations (hand-simulable)."""
    dims = (1,) * (len(weights_and_biases) + 1)
    spec = NetworkSpec(dims, hidden_act="identity", output_nl="identity")
    mats = [np.array([[w, b]]) for w, b in weights_and_biases]
    return Params(spec, mats)


class TestClamps:
    def test_full_clamp_sets_target(self):
        rng = np.random.default_rng(0)
        params = rand_net(rng, (3, 4, 3), out="softmax")
        y = np.array([[0.0, 1.0, 0.0]])
        st = init_state(params, rng.uniform(0, 1, (1, 3)), y, clamp="full")
        npt.assert_array_equal(st.hhat[2], y)

    def test_full_clamp_idempotent(self):
        rng = np.random.default_rng(1)
        params = rand_net(rng, (3, 4, 3))
        y = np.array([[0.0, 1.0, 0.0]])
        st = init_state(params, rng.uniform(0, 1, (1, 3)), y, clamp="full")
        before = st.hhat[2].copy()
        clamp_output_full(st, y)
        npt.assert_array_equal(st.hhat[2], before)

    def test_full_clamp_reconstruction_target(self):
        # autoencoding clamps the output at the input
        rng = np.random.default_rng(2)
        params = rand_net(rng, (3, 2, 3), out="sigmoid")
        x = rng.uniform(0, 1, (2, 3))
        st = init_state(params, x, x, clamp="full")
        npt.assert_array_equal(st.hhat[2], x)

    def test_soft_clamp_equal_weights(self):
        # gamma = 1, y = 1, p = 0 -> 0.5
        params = scalar_chain([(1.0, 0.0), (0.0, 0.0)])
        st = init_state(params, [[1.0]], [[1.0]], clamp="soft", clamp_gamma=1.0)
        npt.assert_allclose(st.hhat[2], [[0.5]])

    def test_soft_clamp_zero_gamma_is_full(self):
        rng = np.random.default_rng(3)
        params = rand_net(rng, (2, 3, 2))
        y = rng.normal(size=(1, 2))
        st = init_state(params, rng.normal(size=(1, 2)), y, clamp="soft", clamp_gamma=0.0)
        npt.assert_allclose(st.hhat[2], y, atol=1e-15)

    def test_soft_clamp_huge_gamma_keeps_prediction(self):
        rng = np.random.default_rng(4)
        params = rand_net(rng, (2, 3, 2))
        x = rng.normal(size=(1, 2))
        st = init_state(params, x, np.ones((1, 2)), clamp="soft", clamp_gamma=1e9)
        npt.assert_allclose(st.hhat[2], st.pred[2], atol=1e-8)

    @pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0, 10.0])
    def test_soft_clamp_stationarity(self, gamma):
        # after the clamp, gamma e_L + (hhat_L - y) vanishes
        rng = np.random.default_rng(5)
        params = rand_net(rng, (3, 4, 4, 2))
        st = init_state(params, rng.normal(size=(2, 3)), rng.normal(size=(2, 2)), clamp="soft", clamp_gamma=gamma)
        clamp_output_soft(st, gamma)
        resid = gamma * st.err[3] + (st.hhat[3] - st.target)
        assert np.linalg.norm(resid) < 1e-10


class TestActivityStep:
    def test_no_motion_without_errors(self):
        rng = np.random.default_rng(6)
        params = rand_net(rng, (2, 3, 2))
        st = init_state(params, rng.normal(size=(1, 2)), rng.normal(size=(1, 2)), clamp="soft", clamp_gamma=1e12)
        # a huge soft clamp leaves hhat_L at the prediction: every error is ~0
        before = st.hhat[1].copy()
        activity_step(params, st, 1, 0.1, GammaSchedule.standard(2))
        npt.assert_allclose(st.hhat[1], before, atol=1e-10)

    def test_scalar_hand_update(self):
        # identity net, unit weight, e_2 = 2, e_1 = 1, eps = 0.1 -> moves by 0.1(2 - 1)
        params = scalar_chain([(1.0, 0.0), (1.0, 0.0)])
        st = init_state(params, [[1.0]], [[0.0]], clamp="full")
        st.err[1] = np.array([[1.0]])
        st.err[2] = np.array([[2.0]])
        before = st.hhat[1].copy()
        activity_step(params, st, 1, 0.1, GammaSchedule.standard(2))
        npt.assert_allclose(st.hhat[1] - before, [[0.1]], rtol=1e-15)

    def test_update_is_negative_energy_gradient(self):
        rng = np.random.default_rng(7)
        params = rand_net(rng, (2, 3, 3, 2))
        x = rng.normal(size=(1, 2))
        y = rng.normal(size=(1, 2))
        st = init_state(params, x, y, clamp="full")
        for l in (1, 2):
            st.hhat[l] = st.hhat[l] + rng.uniform(-0.3, 0.3, st.hhat[l].shape)
        refresh_errors(params, st)
        gam = GammaSchedule.standard(params.n_weights)
        eps = 1e-3
        before = [h.copy() for h in st.hhat]
        probe = st.copy()
        activity_step(params, probe, 1, eps, gam)
        delta = (probe.hhat[1] - before[1]) / eps

        def fe(v):
            q = st.copy()
            q.hhat[1] = v.reshape(st.hhat[1].shape)
            refresh_errors(params, q)
            return free_energy(params, q, gam)

        fd = finite_diff_grad(fe, st.hhat[1].ravel().copy(), 1e-6)
        npt.assert_allclose(delta.ravel(), -fd, rtol=1e-5, atol=1e-9)


class TestSimultaneous:
    def test_t0_leaves_state_unchanged(self):
        rng = np.random.default_rng(8)
        params = rand_net(rng, (3, 4, 2))
        st = init_state(params, rng.normal(size=(2, 3)), rng.normal(size=(2, 2)), clamp="full")
        before = [h.copy() for h in st.hhat]
        cfg = InferenceConfig(T=0, epsilon=0.1, schedule="simultaneous", clamp="full")
        infer_simultaneous(params, st, cfg, GammaSchedule.standard(params.n_weights))
        for h, b in zip(st.hhat, before):
            npt.assert_array_equal(h, b)

    def test_one_iteration_delay_on_deep_net(self):
        # four hidden layers: after one iteration the earliest error is still exactly zero
        rng = np.random.default_rng(9)
        params = rand_net(rng, (3, 4, 4, 4, 4, 2), hidden="relu", out="softmax", scale=1.2)
        x = rng.uniform(0, 1, (2, 3))
        y = np.eye(2)[[0, 1]]
        st = init_state(params, x, y, clamp="full")
        cfg = InferenceConfig(T=1, epsilon=0.1, schedule="simultaneous", clamp="full")
        infer_simultaneous(params, st, cfg, GammaSchedule.standard(params.n_weights))
        assert np.all(st.err[1] == 0.0)
        assert np.all(st.err[2] == 0.0)
        assert np.all(st.err[3] == 0.0)
        assert np.any(st.err[4] != 0.0)

    def test_two_iterations_match_hand_simulation(self):
        # scalar chain, identity activations, full clamp, simulated by hand
        wb = [(0.9, 0.1), (1.1, -0.2), (0.8, 0.05)]
        params = scalar_chain(wb)
        x, y, eps = 0.7, 1.3, 0.1
        st = init_state(params, [[x]], [[y]], clamp="full")
        cfg = InferenceConfig(T=2, epsilon=eps, schedule="simultaneous", clamp="full")
        infer_simultaneous(params, st, cfg, GammaSchedule.standard(3))

        (w0, b0), (w1, b1), (w2, b2) = wb
        h1 = w0 * x + b0
        h2 = w1 * h1 + b1
        hh = [x, h1, h2, y]
        p = [None, h1, h2, w2 * h2 + b2]
        e = [None, 0.0, 0.0, y - p[3]]
        for _ in range(2):
            # update every hidden layer from the stored errors
            hh1 = hh[1] + eps * (w1 * e[2] - e[1])
            hh2 = hh[2] + eps * (w2 * e[3] - e[2])
            hh[1], hh[2] = hh1, hh2
            # refresh predictions and errors
            p[1] = w0 * x + b0
            p[2] = w1 * hh[1] + b1
            p[3] = w2 * hh[2] + b2
            e[1] = hh[1] - p[1]
            e[2] = hh[2] - p[2]
            e[3] = y - p[3]
        npt.assert_allclose(st.hhat[1], [[hh[1]]], rtol=1e-14)
        npt.assert_allclose(st.hhat[2], [[hh[2]]], rtol=1e-14)
        npt.assert_allclose(st.err[3], [[e[3]]], rtol=1e-14)

    def test_updates_read_previous_iteration_errors(self):
        rng = np.random.default_rng(10)
        params = rand_net(rng, (3, 4, 4, 2))
        st = init_state(params, rng.normal(size=(1, 3)), rng.normal(size=(1, 2)), clamp="full")
        cfg = InferenceConfig(T=3, epsilon=0.05, schedule="simultaneous", clamp="full")
        log = []
        infer_simultaneous(params, st, cfg, GammaSchedule.standard(params.n_weights), event_log=log)
        written_at = {}  # stamp -> iteration
        for ev in log:
            kind, t, l, stamp = ev
            if kind == "write":
                written_at[stamp] = t
        for ev in log:
            kind, t, l, stamp = ev
            if kind == "read":
                # errors read by iteration t were written strictly before it
                assert written_at.get(stamp, 0) < t


class TestSequential:
    def test_one_sweep_reaches_every_layer(self):
        rng = np.random.default_rng(11)
        params = rand_net(rng, (3, 4, 4, 4, 2), hidden="relu", out="softmax", scale=1.2)
        x = rng.uniform(0, 1, (2, 3))
        y = np.eye(2)[[1, 0]]
        st = init_state(params, x, y, clamp="full")
        cfg = InferenceConfig(T=1, epsilon=0.1, schedule="sequential", clamp="full")
        infer_sequential(params, st, cfg, GammaSchedule.standard(params.n_weights))
        for l in range(1, st.n_layers):
            assert np.any(st.err[l] != 0.0), f"layer {l} got no error after one sweep"

    def test_single_hidden_layer_matches_simultaneous(self):
        # with one hidden layer there is no ordering effect in the updates
        rng = np.random.default_rng(12)
        params = rand_net(rng, (3, 4, 2), out="identity")
        x = rng.normal(size=(2, 3))
        y = rng.normal(size=(2, 2))
        gam = GammaSchedule.standard(params.n_weights)
        cfg_sim = InferenceConfig(T=1, epsilon=0.1, schedule="simultaneous", clamp="full")
        cfg_seq = InferenceConfig(T=1, epsilon=0.1, schedule="sequential", clamp="full")
        a = init_state(params, x, y, clamp="full")
        b = init_state(params, x, y, clamp="full")
        infer_simultaneous(params, a, cfg_sim, gam)
        infer_sequential(params, b, cfg_seq, gam)
        npt.assert_allclose(a.hhat[1], b.hhat[1], rtol=1e-13)

    def test_one_sweep_matches_hand_simulation(self):
        # three hidden layers, scalar chain, full clamp
        wb = [(0.9, 0.1), (1.1, -0.2), (0.8, 0.05), (1.05, -0.1)]
        params = scalar_chain(wb)
        x, y, eps = 0.7, 1.3, 0.1
        st = init_state(params, [[x]], [[y]], clamp="full")
        cfg = InferenceConfig(T=1, epsilon=eps, schedule="sequential", clamp="full")
        infer_sequential(params, st, cfg, GammaSchedule.standard(4))

        (w0, b0), (w1, b1), (w2, b2), (w3, b3) = wb
        h1 = w0 * x + b0
        h2 = w1 * h1 + b1
        h3 = w2 * h2 + b2
        hh = [x, h1, h2, h3, y]
        # top prediction and output error
        p4 = w3 * hh[3] + b3
        e = [None, None, None, None, y - p4]
        # l = 3
        p3 = w2 * hh[2] + b2
        e[3] = hh[3] - p3
        hh[3] = hh[3] + eps * (w3 * e[4] - e[3])
        e[3] = hh[3] - p3
        # l = 2
        p2 = w1 * hh[1] + b1
        e[2] = hh[2] - p2
        hh[2] = hh[2] + eps * (w2 * e[3] - e[2])
        e[2] = hh[2] - p2
        # l = 1
        p1 = w0 * x + b0
        e[1] = hh[1] - p1
        hh[1] = hh[1] + eps * (w1 * e[2] - e[1])
        e[1] = hh[1] - p1

        for l in (1, 2, 3):
            npt.assert_allclose(st.hhat[l], [[hh[l]]], rtol=1e-14)
            npt.assert_allclose(st.err[l], [[e[l]]], rtol=1e-14)

    def test_sweep_reads_errors_written_within_sweep(self):
        rng = np.random.default_rng(13)
        params = rand_net(rng, (3, 4, 4, 2))
        st = init_state(params, rng.normal(size=(1, 3)), rng.normal(size=(1, 2)), clamp="full")
        cfg = InferenceConfig(T=3, epsilon=0.05, schedule="sequential", clamp="full")
        log = []
        infer_sequential(params, st, cfg, GammaSchedule.standard(params.n_weights), event_log=log)
        written_at = {stamp: t for kind, t, l, stamp in log if kind == "write"}
        for kind, t, l, stamp in log:
            if kind == "read":
                assert written_at[stamp] == t  # recomputed within the current sweep


class TestDescentAndSchedules:
    @pytest.mark.parametrize("schedule", ["simultaneous", "sequential"])
    @pytest.mark.parametrize("clamp", ["full", "soft"])
    def test_free_energy_non_increasing(self, schedule, clamp):
        rng = np.random.default_rng(14)
        params = rand_net(rng, (3, 5, 4, 2), out="identity")
        x = rng.uniform(-1, 1, (4, 3))
        y = rng.uniform(-1, 1, (4, 2))
        cfg = InferenceConfig(T=40, epsilon=0.05, schedule=schedule, clamp=clamp)
        gam = GammaSchedule.standard(params.n_weights)
        values = []

        def hook(state, t):
            probe = state.copy()
            refresh_errors(params, probe)
            values.append(free_energy(params, probe, gam))

        run_inference(params, x, y, cfg, gam, on_iteration=hook)
        diffs = np.diff(values)
        assert diffs.max() <= 1e-9, f"energy increased by {diffs.max():.2e}"

    def test_proximal_gammas_formulas(self):
        rng = np.random.default_rng(15)
        params = rand_net(rng, (2, 3, 3, 2))
        x = rng.uniform(-1, 1, (1, 2))
        y = rng.uniform(-1, 1, (1, 2))
        st = init_state(params, x, y, clamp="soft", clamp_gamma=1.0)
        for l in (1, 2):
            st.hhat[l] = st.hhat[l] + rng.uniform(-0.3, 0.3, st.hhat[l].shape)
        refresh_errors(params, st)
        alphas = [0.3, 0.5, 0.2]
        beta = 0.8
        gam = proximal_gammas(params, st, alphas, beta)
        # independent recomputation from the definitions
        for l in (1, 2, 3):
            fa = np.tanh(st.hhat[l - 1])
            sq = float(np.sum(fa * fa)) + 1.0  # bias-augmented norm
            npt.assert_allclose(gam.gamma[l], alphas[l - 1] ** 2 * sq, rtol=1e-12)
        for l in (1, 2):
            npt.assert_allclose(
                gam.gamma_decay[l],
                alphas[l] ** 2 * float(np.sum(st.err[l + 1] ** 2)),
                rtol=1e-12,
            )
        fa = np.tanh(st.hhat[2])
        sq = float(np.sum(fa * fa)) + 1.0
        npt.assert_allclose(gam.clamp_gamma, alphas[2] * (1 / beta + sq) - 1.0, rtol=1e-12)

    def test_proximal_gammas_zero_errors_zero_decay(self):
        rng = np.random.default_rng(16)
        params = rand_net(rng, (2, 3, 3, 2))
        x = rng.uniform(-1, 1, (1, 2))
        st = init_state(params, x, np.zeros((1, 2)), clamp="soft", clamp_gamma=1e12)
        refresh_errors(params, st)
        gam = proximal_gammas(params, st, 0.3, beta=1.0)
        npt.assert_allclose(gam.gamma_decay[1:3], [0.0, 0.0], atol=1e-20)

    def test_proximal_gammas_strong_clamp_limit(self):
        # alpha (1/beta + ||ft||^2) - 1 -> 0 when alpha = 1, ||ft||^2 = 1, beta -> inf
        rng = np.random.default_rng(17)
        params = rand_net(rng, (2, 3, 3, 2))
        st = init_state(params, rng.normal(size=(1, 2)), rng.normal(size=(1, 2)), clamp="soft")
        refresh_errors(params, st)
        # force the augmented squared norm to 1 by zeroing the last hidden layer
        st.hhat[2] = np.zeros_like(st.hhat[2])
        refresh_errors(params, st)
        gam = proximal_gammas(params, st, 1.0, beta=1e15)
        npt.assert_allclose(gam.clamp_gamma, 0.0, atol=1e-12)

    def test_proximal_gammas_require_batch_one(self):
        rng = np.random.default_rng(18)
        params = rand_net(rng, (2, 3, 3, 2))
        st = init_state(params, rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), clamp="soft")
        with pytest.raises(ValueError):
            proximal_gammas(params, st, 0.3, beta=1.0)

    def test_negative_clamp_weight_warns(self):
        rng = np.random.default_rng(19)
        params = rand_net(rng, (2, 3, 3, 2))
        st = init_state(params, rng.normal(size=(1, 2)), rng.normal(size=(1, 2)), clamp="soft")
        refresh_errors(params, st)
        with pytest.warns(UserWarning):
            proximal_gammas(params, st, 0.01, beta=100.0)
