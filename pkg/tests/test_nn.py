import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from attnseg import nn
from attnseg.errors import ConfigError, DimensionError, TrainingError


def _fd_check(loss_and_grad, params, delta=1e-3, coords=30, pattern=None):
    return nn.grad_check(loss_and_grad, params, delta=delta, max_coords=coords,
                         rng=np.random.default_rng(1), pattern=pattern)


# ---------------------------------------------------------------------------
# affine


class TestAffine:
    def test_selector_matrix(self):
        y, _ = nn.affine(np.array([[1.0, 2.0]]), np.array([[1.0], [0.0]]), np.array([0.0]))
        assert y.tolist() == [[1.0]]

    def test_zero_input_passes_bias(self):
        W = np.random.default_rng(0).normal(size=(2, 1))
        y, _ = nn.affine(np.zeros((1, 2)), W, np.array([3.0]))
        assert y.tolist() == [[3.0]]

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(3)
        x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                acc = b[j]
                for k in range(4):
                    acc += x[i, k] * W[k, j]
                expected[i, j] = acc
        y, _ = nn.affine(x, W, b)
        np.testing.assert_allclose(y, expected, rtol=1e-12)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 1\)"):
            nn.affine(np.zeros((2, 3)), np.zeros((4, 1)), np.zeros(1))

    def test_gradients(self):
        rng = np.random.default_rng(4)
        params = {"x": rng.normal(size=(3, 4)), "W": rng.normal(size=(4, 2)), "b": rng.normal(size=2)}
        R = rng.normal(size=(3, 2))

        def lg(p):
            y, c = nn.affine(p["x"], p["W"], p["b"])
            dx, dW, db = nn.affine_backward(R, c)
            return float((y * R).sum()), {"x": dx, "W": dW, "b": db}

        assert _fd_check(lg, params) < 1e-6


# ---------------------------------------------------------------------------
# convolution and pooling


def _conv_oracle(X, W, b):
    """Slide each filter over the zero-padded rows, one output cell at a time."""
    L, d = X.shape
    h, _, nf = W.shape
    out = np.zeros((L, nf))
    for k in range(L):
        for f in range(nf):
            acc = b[f]
            for j in range(h):
                r = k - h // 2 + j
                if 0 <= r < L:
                    acc += float(np.dot(W[j, :, f], X[r]))
            out[k, f] = max(acc, 0.0)
    return out


class TestConvRows:
    def test_identity_filter(self):
        X = np.abs(np.random.default_rng(0).normal(size=(5, 3)))
        W = np.zeros((1, 3, 1))
        W[0, 0, 0] = 1.0
        y, _ = nn.conv_rows(X, W, np.zeros(1), "relu")
        np.testing.assert_array_equal(y[:, 0], X[:, 0])

    def test_bias_only_response(self):
        y, _ = nn.conv_rows(np.zeros((4, 3)), np.ones((2, 3, 2)), np.full(2, 0.5), "relu")
        np.testing.assert_array_equal(y, np.full((4, 2), 0.5))

    @pytest.mark.parametrize("h", [1, 2, 3, 4, 5])
    def test_matches_sliding_window(self, h):
        rng = np.random.default_rng(h)
        X, W, b = rng.normal(size=(5, 2)), rng.normal(size=(h, 2, 3)), rng.normal(size=3)
        y, _ = nn.conv_rows(X, W, b, "relu")
        np.testing.assert_allclose(y, _conv_oracle(X, W, b), rtol=1e-12, atol=1e-12)

    def test_filter_taller_than_sentence(self):
        with pytest.raises(ConfigError):
            nn.conv_rows(np.zeros((3, 2)), np.zeros((4, 2, 1)), np.zeros(1))

    def test_batched_equals_unbatched(self):
        rng = np.random.default_rng(7)
        X, W, b = rng.normal(size=(2, 3, 6, 4)), rng.normal(size=(3, 4, 5)), rng.normal(size=5)
        y, _ = nn.conv_rows(X, W, b)
        for i in range(2):
            for j in range(3):
                np.testing.assert_allclose(y[i, j], nn.conv_rows(X[i, j], W, b)[0])

    def test_gradients(self):
        rng = np.random.default_rng(5)
        params = {"X": rng.normal(size=(2, 6, 3)), "W": rng.normal(size=(3, 3, 4)), "b": rng.normal(size=4)}
        R = rng.normal(size=(2, 6, 4))

        def run(p):
            return nn.conv_rows(p["X"], p["W"], p["b"], "relu")

        def lg(p):
            y, c = run(p)
            dX, dW, db = nn.conv_rows_backward(R, c)
            return float((y * R).sum()), {"X": dX, "W": dW, "b": db}

        assert _fd_check(lg, params, pattern=lambda p: run(p)[0] > 0) < 1e-3


class TestMaxOverRows:
    def test_direct_maxima(self):
        y, _ = nn.max_over_rows(np.array([[1.0, 5.0], [3.0, 2.0]]))
        assert y.tolist() == [3.0, 5.0]

    def test_constant(self):
        y, _ = nn.max_over_rows(np.full((4, 3), 2.5))
        assert y.tolist() == [2.5] * 3

    def test_empty(self):
        with pytest.raises(DimensionError):
            nn.max_over_rows(np.zeros((0, 3)))

    def test_ties_route_to_first_row_only(self):
        F = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 2.0]])
        y, c = nn.max_over_rows(F)
        dF = nn.max_over_rows_backward(np.ones(2), c)
        assert dF.tolist() == [[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]]

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
                  elements=st.integers(-3, 3).map(float)))
    def test_one_row_per_column(self, F):
        _, c = nn.max_over_rows(F)
        dF = nn.max_over_rows_backward(np.ones(F.shape[1]), c)
        assert ((dF != 0).sum(axis=0) == 1).all()

    def test_sum_gradient_finite_differences(self):
        F = np.random.default_rng(6).normal(size=(5, 4))

        def lg(p):
            y, c = nn.max_over_rows(p["F"])
            return float(y.sum()), {"F": nn.max_over_rows_backward(np.ones_like(y), c)}

        assert _fd_check(lg, {"F": F}, coords=20) < 1e-3


# ---------------------------------------------------------------------------
# activations and dropout


class TestActivation:
    def test_fixed_points(self):
        assert nn.activation("tanh", np.array(0.0)) == 0.0
        assert nn.activation("sigmoid", np.array(0.0)) == 0.5
        assert nn.activation("relu", np.array(-1.0)) == 0.0

    def test_symmetric_softmax(self):
        np.testing.assert_array_equal(nn.activation("softmax", np.zeros(2)), [0.5, 0.5])

    def test_softmax_hand_values(self):
        np.testing.assert_allclose(nn.activation("softmax", np.array([1.0, 2.0, 3.0])),
                                   [0.09003, 0.24473, 0.66524], atol=1e-5)

    def test_unknown(self):
        with pytest.raises(ConfigError):
            nn.activation("gelu", np.zeros(1))

    @settings(max_examples=200)
    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 6)),
                  elements=st.floats(-15, 15)))
    def test_softmax_rows(self, x):
        y = nn.softmax(x)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)
        assert ((y > 0) & (y < 1)).all()

    @pytest.mark.parametrize("name", ["tanh", "sigmoid", "relu", "softmax"])
    def test_backward(self, name):
        x = np.random.default_rng(8).normal(size=(3, 4))
        R = np.random.default_rng(9).normal(size=(3, 4))

        def lg(p):
            y = nn.activation(name, p["x"])
            return float((y * R).sum()), {"x": nn.activation_backward(name, y, R)}

        assert _fd_check(lg, {"x": x}, pattern=lambda p: p["x"] > 0) < 1e-3


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = np.arange(6.0)
        y, mask = nn.dropout(x, 0.0, True, np.random.default_rng(0))
        assert y is x and mask is None

    def test_infer_mode_is_identity(self):
        x = np.arange(6.0)
        y, _ = nn.dropout(x, 0.5, False)
        assert y is x

    def test_survivor_fraction(self):
        y, _ = nn.dropout(np.ones(10_000, dtype=np.float32), 0.25, True, np.random.default_rng(11))
        frac = float((y != 0).mean())
        assert 0.72 <= frac <= 0.78
        np.testing.assert_allclose(y[y != 0], 1 / 0.75, rtol=1e-6)

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_bad_rate(self, rate):
        with pytest.raises(ConfigError):
            nn.dropout(np.ones(3), rate, True, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# LSTM


def _cell(n_in, H, seed, scale=0.5, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return nn.LstmCellParams(rng.uniform(-scale, scale, (n_in, 4 * H)).astype(dtype),
                             rng.uniform(-scale, scale, (H, 4 * H)).astype(dtype),
                             rng.uniform(-scale, scale, 4 * H).astype(dtype))


class TestLstm:
    def test_zero_fixed_point(self):
        p = nn.LstmCellParams(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
        h, c, _ = nn.lstm_step(np.ones(3), np.zeros(2), np.zeros(2), p)
        assert h.tolist() == [0.0, 0.0] and c.tolist() == [0.0, 0.0]

    def test_pure_memory_limit(self):
        H = 2
        b = np.zeros(4 * H)
        b[H:2 * H] = 20.0
        p = nn.LstmCellParams(np.zeros((3, 4 * H)), np.zeros((H, 4 * H)), b)
        c0 = np.array([0.7, -1.3])
        _, c, _ = nn.lstm_step(np.ones(3), np.zeros(H), c0, p)
        np.testing.assert_allclose(c, c0, atol=1e-6)

    def test_init_forget_bias(self):
        p = nn.LstmCellParams.init(3, 4, np.random.default_rng(0))
        assert p.b[4:8].tolist() == [1.0] * 4
        assert p.b[:4].tolist() == [0.0] * 4 and p.b[8:].tolist() == [0.0] * 8
        assert np.abs(p.wx).max() <= 0.08

    def test_shape_mismatch(self):
        p = _cell(3, 2, 0)
        with pytest.raises(DimensionError):
            nn.lstm_step(np.ones(4), np.zeros(2), np.zeros(2), p)

    def test_step_gradients(self):
        rng = np.random.default_rng(12)
        p = _cell(3, 4, 13)
        params = {"x": rng.normal(size=(2, 3)), "h": rng.normal(size=(2, 4)), "c": rng.normal(size=(2, 4)),
                  "wx": p.wx, "wh": p.wh, "b": p.b}
        Rh, Rc = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))

        def lg(q):
            cell = nn.LstmCellParams(q["wx"], q["wh"], q["b"])
            h, c, cache = nn.lstm_step(q["x"], q["h"], q["c"], cell)
            dx, dh, dc, (dwx, dwh, db) = nn.lstm_step_backward(Rh, Rc, cache)
            return float((h * Rh).sum() + (c * Rc).sum()), {"x": dx, "h": dh, "c": dc, "wx": dwx, "wh": dwh, "b": db}

        assert _fd_check(lg, params) < 1e-3


class TestBiLstm:
    def test_length_one(self):
        fwd, bwd = _cell(3, 2, 1), _cell(3, 2, 2)
        x = np.random.default_rng(0).normal(size=(1, 3))
        out, _ = nn.bilstm_run(x, fwd, bwd)
        z = np.zeros(2)
        hf, _, _ = nn.lstm_step(x[0], z, z, fwd)
        hb, _, _ = nn.lstm_step(x[0], z, z, bwd)
        np.testing.assert_allclose(out[0], np.concatenate([hf, hb]), rtol=1e-12)

    @pytest.mark.parametrize("K", [1, 2, 5])
    def test_shape(self, K):
        out, _ = nn.bilstm_run(np.ones((K, 3)), _cell(3, 4, 1), _cell(3, 4, 2))
        assert out.shape == (K, 8)

    def test_empty(self):
        with pytest.raises(DimensionError):
            nn.bilstm_run(np.ones((0, 3)), _cell(3, 4, 1), _cell(3, 4, 2))

    def test_palindrome_symmetry(self):
        p = _cell(3, 4, 5)
        rng = np.random.default_rng(0)
        half = rng.normal(size=(2, 3))
        seq = np.vstack([half, rng.normal(size=(1, 3)), half[::-1]])
        out, _ = nn.bilstm_run(seq, p, p)
        K = len(seq)
        for t in range(K):
            np.testing.assert_allclose(out[t, :4], out[K - 1 - t, 4:], rtol=1e-12)

    def test_gradients_with_fixed_masks(self):
        rng = np.random.default_rng(14)
        fwd, bwd = _cell(3, 4, 15), _cell(3, 4, 16)
        params = {"seq": rng.normal(size=(2, 4, 3)), "fwx": fwd.wx, "fwh": fwd.wh, "fb": fwd.b,
                  "bwx": bwd.wx, "bwh": bwd.wh, "bb": bwd.b}
        R = rng.normal(size=(2, 4, 8))

        def lg(q):
            out, c = nn.bilstm_run(q["seq"], nn.LstmCellParams(q["fwx"], q["fwh"], q["fb"]),
                                   nn.LstmCellParams(q["bwx"], q["bwh"], q["bb"]),
                                   0.3, 0.3, train=True, rng=np.random.default_rng(99))
            dseq, gf, gb = nn.bilstm_run_backward(R, c)
            grads = dict(zip(["fwx", "fwh", "fb"], gf)) | dict(zip(["bwx", "bwh", "bb"], gb))
            return float((out * R).sum()), {"seq": dseq, **grads}

        assert _fd_check(lg, params) < 1e-3

    def test_dropout_masks_shared_over_time(self):
        p = _cell(3, 2, 1)
        seq = np.ones((1, 6, 3))
        _, c = nn.bilstm_run(seq, p, p, 0.5, 0.5, train=True, rng=np.random.default_rng(3))
        steps, _, in_mask, rec_mask, _ = c[0]
        assert in_mask.shape == (1, 3) and rec_mask.shape == (1, 2)


# ---------------------------------------------------------------------------
# AdaDelta


class TestAdaDelta:
    def test_zero_gradient(self):
        state = nn.AdaDeltaState(0.95, 1e-6)
        p = np.array([1.0, -2.0])
        nn.adadelta_step(p, np.array([1.0, 1.0]), state, "p")
        before = p.copy()
        eg, edx = state.sq_grad["p"].copy(), state.sq_update["p"].copy()
        nn.adadelta_step(p, np.zeros(2), state, "p")
        np.testing.assert_array_equal(p, before)
        np.testing.assert_allclose(state.sq_grad["p"], 0.95 * eg)
        np.testing.assert_allclose(state.sq_update["p"], 0.95 * edx)

    def test_first_step_value(self):
        p = np.array([0.0])
        delta = nn.adadelta_step(p, np.array([1.0]), nn.AdaDeltaState(0.95, 1e-6))
        np.testing.assert_allclose(delta, [-0.004472], atol=1e-6)
        np.testing.assert_allclose(p, [-np.sqrt(1e-6) / np.sqrt(0.05 + 1e-6)], rtol=1e-12)

    @given(arrays(np.float64, 8, elements=st.floats(-1e3, 1e3)))
    def test_update_opposes_gradient(self, g):
        state = nn.AdaDeltaState()
        p = np.zeros(8)
        for _ in range(3):
            delta = nn.adadelta_step(p, g, state)
            assert (np.sign(delta) == -np.sign(g)).all()
        assert (state.sq_grad[next(iter(state.sq_grad))] >= 0).all()

    def test_non_finite_gradient(self):
        with pytest.raises(TrainingError, match="head.w1"):
            nn.adadelta_step(np.zeros(2), np.array([np.nan, 0.0]), nn.AdaDeltaState(), "head.w1")


# ---------------------------------------------------------------------------
# gradient checker


class TestGradCheck:
    def test_quadratic(self):
        theta = {"a": np.random.default_rng(0).normal(size=(3, 4))}
        err = nn.grad_check(lambda p: (0.5 * float((p["a"] ** 2).sum()), {"a": p["a"].copy()}), theta)
        assert err < 1e-6

    def test_affine_softmax_cross_entropy(self):
        rng = np.random.default_rng(21)
        x, t = rng.normal(size=(5, 4)), rng.integers(0, 3, 5)
        params = {"W": rng.normal(size=(4, 3)), "b": rng.normal(size=3)}

        def lg(p):
            z, c = nn.affine(x, p["W"], p["b"])
            y = nn.softmax(z)
            loss = -np.log(y[np.arange(5), t]).mean()
            dz = y.copy()
            dz[np.arange(5), t] -= 1
            _, dW, db = nn.affine_backward(dz / 5, c)
            return float(loss), {"W": dW, "b": db}

        assert nn.grad_check(lg, params, delta=1e-3) < 1e-3

    def test_detects_wrong_gradient(self):
        theta = {"a": np.ones(3)}
        assert nn.grad_check(lambda p: (float((p["a"] ** 2).sum()), {"a": p["a"]}), theta) > 0.4


def test_same_seed_bitwise_identical():
    def run(seed):
        rng = nn.make_rng(seed)
        p = nn.LstmCellParams.init(4, 3, rng)
        x = rng.normal(size=(2, 5, 4)).astype(np.float32)
        out, _ = nn.bilstm_run(x, p, p, 0.25, 0.25, True, rng)
        y, _ = nn.dropout(out, 0.3, True, rng)
        return y

    a, b = run(123), run(123)
    assert a.tobytes() == b.tobytes()
    assert run(124).tobytes() != a.tobytes()
