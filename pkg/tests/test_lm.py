"""Model components: composition, highway, LSTM, softmax, dropout, gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patlm import lm, training


def micro_config(composition, **kw):
    base = dict(n_subwords=9, vocab_size=7, dropout=lm.DropoutRates())
    if composition == "sum":
        base.update(d_x=4, d_hw=4, d_lm=4)
    elif composition == "concat":
        base.update(d_x=2, d_hw=4, d_lm=4, n_concat=3)
    else:
        base.update(d_x=3, d_hw=5, d_lm=4, cnn_widths=(1, 2), cnn_depths=(2, 3))
    base.update(kw)
    return lm.LMConfig(composition, **base)


def micro_params(cfg, seed=7, dtype=np.float64):
    return training.init_params(training.TrainConfig(seed=seed), cfg, rng=seed, dtype=dtype)


class TestCompose:
    def test_sum_single_subword_identity(self):
        v = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(lm.compose("sum", v), v[0])

    def test_concat_zero_pad(self):
        v = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(
            lm.compose("concat", v, n=3), [1, 2, 3, 4, 0, 0]
        )

    def test_concat_truncates(self):
        v = np.array([[1.0], [2.0], [3.0], [4.0]])
        np.testing.assert_array_equal(lm.compose("concat", v, n=2), [1, 2])

    def test_cnn_width1_hand_value(self):
        cfg = lm.LMConfig(
            "cnn", n_subwords=3, vocab_size=3, d_x=1, d_hw=1, d_lm=2,
            cnn_widths=(1,), cnn_depths=(1,),
        )
        params = micro_params(cfg)
        params.tensors["cnn_w1"] = np.ones((1, 1, 1))
        params.tensors["cnn_b1"] = np.zeros(1)
        out = lm.compose("cnn", np.array([[0.3], [-0.7]]), params=params)
        assert out[0] == pytest.approx(np.tanh(0.3), abs=1e-12)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            lm.compose("sum", np.zeros((0, 3)))

    @settings(max_examples=50)
    @given(st.permutations(list(range(5))))
    def test_sum_permutation_invariant(self, perm):
        rng = np.random.default_rng(0)
        vecs = rng.normal(size=(5, 3))
        np.testing.assert_allclose(
            lm.compose("sum", vecs[list(perm)]), lm.compose("sum", vecs), atol=1e-12
        )

    def test_concat_not_permutation_invariant(self):
        vecs = np.array([[1.0], [2.0], [3.0]])
        a = lm.compose("concat", vecs, n=3)
        b = lm.compose("concat", vecs[::-1], n=3)
        assert not np.array_equal(a, b)


class TestHighway:
    def layer(self, d, bias):
        rng = np.random.default_rng(1)
        return {
            "wt": rng.normal(size=(d, d)) * 0.1,
            "bt": np.full(d, bias),
            "wh": rng.normal(size=(d, d)) * 0.1,
            "bh": np.zeros(d),
        }

    def test_gate_zero_is_identity(self):
        p = self.layer(4, -60.0)  # saturates the logistic to ~0
        x = np.array([0.3, -0.2, 0.9, 0.0])
        y, gate = lm.highway_forward(x, p)
        np.testing.assert_allclose(y, x, atol=1e-12)
        assert gate.max() < 1e-20

    def test_gate_one_is_transform_branch(self):
        p = self.layer(4, 60.0)
        x = np.array([0.3, -0.2, 0.9, 0.0])
        y, gate = lm.highway_forward(x, p)
        z = np.tanh(x @ p["wh"] + p["bh"])
        np.testing.assert_allclose(y, z, atol=1e-12)
        assert gate.min() > 1 - 1e-12

    def test_zero_input_gate_is_sigmoid_of_bias(self):
        p = self.layer(6, -2.0)
        _, gate = lm.highway_forward(np.zeros(6), p)
        expected = 1.0 / (1.0 + np.exp(2.0))
        np.testing.assert_allclose(gate, expected, atol=1e-12)
        assert gate.mean() == pytest.approx(0.1192, abs=1e-4)

    def test_stack_with_pinned_gates_is_identity(self):
        cfg = micro_config("sum")
        params = micro_params(cfg)
        for name in ("hw1_bt", "hw2_bt"):
            params.tensors[name][:] = -60.0
        for name in ("hw1_wt", "hw2_wt"):
            params.tensors[name][:] = 0.0
        x = np.random.default_rng(2).normal(size=(5, cfg.d_hw))
        t = params.tensors
        y1, _ = lm._highway_batch(x, t["hw1_wt"], t["hw1_bt"], t["hw1_wh"], t["hw1_bh"])
        y2, _ = lm._highway_batch(y1, t["hw2_wt"], t["hw2_bt"], t["hw2_wh"], t["hw2_bh"])
        np.testing.assert_allclose(y2, x, atol=1e-12)


class TestLstm:
    def test_zero_network_outputs_zero(self):
        cfg = micro_config("sum")
        params = micro_params(cfg)
        for name in ("lstm1_wx", "lstm1_wh", "lstm1_b", "lstm2_wx", "lstm2_wh", "lstm2_b"):
            params.tensors[name][:] = 0.0
        h, _ = lm.lstm_stack_step(params, np.ones(cfg.d_hw), lm.init_state(cfg, 1, np.float64))
        np.testing.assert_array_equal(h, np.zeros(cfg.d_lm))

    def test_forget_gate_at_init_is_sigmoid_of_one(self):
        cfg = micro_config("sum")
        params = micro_params(cfg)
        b = params.tensors["lstm1_b"]
        fslice = lm.forget_bias_slice(cfg.d_lm)
        assert np.all(b[fslice] == 1.0)
        # zero input and state: forget gate = sigmoid(bias)
        gates = np.zeros(cfg.d_hw) @ params.tensors["lstm1_wx"] + b
        f = 1.0 / (1.0 + np.exp(-gates[fslice]))
        np.testing.assert_allclose(f, 1.0 / (1.0 + np.exp(-1.0)), atol=1e-12)
        assert f[0] == pytest.approx(0.7311, abs=1e-4)

    def test_state_advances_deterministically(self):
        cfg = micro_config("sum")
        params = micro_params(cfg)
        s0 = lm.init_state(cfg, 1, np.float64)
        h_a, s_a = lm.lstm_stack_step(params, np.ones(cfg.d_hw), s0)
        h_b, s_b = lm.lstm_stack_step(params, np.ones(cfg.d_hw), s0)
        np.testing.assert_array_equal(h_a, h_b)
        h_c, _ = lm.lstm_stack_step(params, np.ones(cfg.d_hw), s_a)
        assert not np.array_equal(h_a, h_c)


class TestSoftmax:
    def test_uniform_logits(self):
        W = np.zeros((4, 10))
        b = np.zeros(10)
        loss, _ = lm.softmax_nll(np.ones(4), 3, W, b)
        assert loss == pytest.approx(np.log(10.0), abs=1e-12)

    def test_saturated_target(self):
        W = np.zeros((2, 5))
        b = np.zeros(5)
        b[2] = 30.0
        loss, _ = lm.softmax_nll(np.zeros(2), 2, W, b)
        assert loss < 1e-12

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            lm.softmax_nll(np.zeros(2), 9, np.zeros((2, 5)), np.zeros(5))

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(4)
        W = rng.normal(size=(3, 6)) * 0.3
        b = rng.normal(size=6) * 0.3
        h = rng.normal(size=3)
        loss, grads = lm.softmax_nll(h, 2, W, b)
        eps = 1e-6
        for arr, g in ((W, grads["W"]), (b, grads["b"]), (h, grads["h"])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                orig = arr[i]
                arr[i] = orig + eps
                lp, _ = lm.softmax_nll(h, 2, W, b)
                arr[i] = orig - eps
                lme, _ = lm.softmax_nll(h, 2, W, b)
                arr[i] = orig
                fd = (lp - lme) / (2 * eps)
                assert abs(fd - g[i]) <= 1e-6 * max(1.0, abs(fd))


class TestVariationalDropout:
    def test_rate_zero_all_ones(self):
        masks = lm.variational_dropout_masks({"m": (3, 4)}, {"m": 0.0}, 0)
        np.testing.assert_array_equal(masks["m"], np.ones((3, 4)))

    def test_mask_reused_across_time(self):
        # one mask per window by construction: the same array object is
        # applied at t=0 and t=34, so equality is definitional
        cfg = micro_config("sum", dropout=lm.DropoutRates(0.5, 0.5, 0.5, 0.5))
        shapes, rates = lm.window_mask_spec(cfg, batch=2)
        masks = lm.variational_dropout_masks(shapes, rates, 0)
        params = micro_params(cfg).astype(np.float64)
        rng = np.random.default_rng(0)
        B, T, L = 2, 35, 3
        sub_ids = rng.integers(0, 9, size=(B, T, L)).astype(np.int32)
        sub_mask = np.ones((B, T, L))
        targets = rng.integers(0, 7, size=(B, T)).astype(np.int32)
        _, _, cache = lm.forward_window(
            params, sub_ids, sub_mask, targets, lm.init_state(cfg, B, np.float64),
            masks=masks,
        )
        used = cache["masks"]["hidden1"]
        np.testing.assert_array_equal(used, masks["hidden1"])

    def test_scaled_mean_near_one(self):
        masks = lm.variational_dropout_masks({"m": (100_000,)}, {"m": 0.5}, 42)
        assert masks["m"].mean() == pytest.approx(1.0, rel=0.02)

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            lm.variational_dropout_masks({"m": (2,)}, {"m": 1.0}, 0)

    def test_rates_table(self):
        small = lm.dropout_rates("small", "sum")
        assert (small.embedding, small.gate_input, small.hidden, small.output) == (
            0.1, 0.2, 0.1, 0.2,
        )
        med_sum = lm.dropout_rates("medium", "sum")
        assert (med_sum.embedding, med_sum.gate_input) == (0.15, 0.3)
        med_cnn = lm.dropout_rates("medium", "cnn")
        assert (med_cnn.embedding, med_cnn.gate_input) == (0.2, 0.35)


def full_gradcheck(composition, rtol=1e-4):
    rng = np.random.default_rng(42)
    cfg = micro_config(composition)
    params = micro_params(cfg)
    B, T, L = 2, 2, 3
    sub_ids = rng.integers(0, cfg.n_subwords, size=(B, T, L)).astype(np.int32)
    sub_mask = (rng.random((B, T, L)) > 0.2).astype(np.float64)
    sub_mask[:, :, 0] = 1.0
    targets = rng.integers(0, cfg.vocab_size, size=(B, T)).astype(np.int32)
    state = lm.init_state(cfg, B, np.float64)

    def loss():
        s, _, c = lm.forward_window(params, sub_ids, sub_mask, targets, state)
        return s / B, c

    _, cache = loss()
    grads = lm.backward_window(params, cache, grad_scale=1.0 / B)
    h = 1e-5
    worst = 0.0
    for name, t in params.tensors.items():
        it = np.nditer(t, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = t[idx]
            t[idx] = orig + h
            fp, _ = loss()
            t[idx] = orig - h
            fm, _ = loss()
            t[idx] = orig
            fd = (fp - fm) / (2 * h)
            err = abs(fd - grads[name][idx]) / max(1.0, abs(fd), abs(grads[name][idx]))
            worst = max(worst, err)
    return worst


class TestEndToEndGradients:
    @pytest.mark.parametrize("composition", ["sum", "concat", "cnn"])
    def test_all_parameters_match_finite_differences(self, composition):
        assert full_gradcheck(composition) <= 1e-4

    def test_pattern_subword_count_equals_char_count(self):
        # length preservation: the concat pad length computed on characters
        # is valid for pattern state sequences of the same words
        from conftest import corpus_from_lines
        from patlm.automaton import build_automaton, encode_words
        from patlm.encoding import encode_chars
        from patlm.corpus import build_word_vocab

        c = corpus_from_lines(["abab baba abba", "bbbb aa"])
        vocab = build_word_vocab(c)
        aut = build_automaton([tuple(c.alphabet.id_of(x) for x in "ab")], c.alphabet)
        pat = encode_words(aut, c, vocab)
        chars = encode_chars(c, vocab)
        np.testing.assert_array_equal(pat.subword_lengths(), chars.subword_lengths())


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        cfg = micro_config("cnn")
        params = micro_params(cfg, dtype=np.float32)
        path = tmp_path / "model.npz"
        lm.save_checkpoint(path, params)
        loaded = lm.load_checkpoint(path)
        assert loaded.config == cfg
        for name, t in params.tensors.items():
            np.testing.assert_array_equal(loaded.tensors[name], t)

    def test_rejects_foreign_npz(self, tmp_path):
        path = tmp_path / "other.npz"
        np.savez(path, __meta__=np.frombuffer(b'{"format": "x"}', dtype=np.uint8))
        with pytest.raises(ValueError, match="not a recognized"):
            lm.load_checkpoint(path)


class TestSection4Configs:
    def test_small_sum(self):
        cfg = lm.section4_config("sum", "small", "pattern", 890, 10_000)
        assert cfg.d_x == cfg.d_hw == cfg.d_lm == 300
        assert cfg.dropout.gate_input == 0.2

    def test_medium_cnn_pattern(self):
        cfg = lm.section4_config("cnn", "medium", "pattern", 1471, 33_000)
        assert cfg.d_x == 100
        assert cfg.cnn_widths == (1, 2, 3, 4, 5, 6, 7)
        assert cfg.d_hw == 1150

    def test_small_cnn_widths_sum_to_525(self):
        for kind in ("char", "pattern"):
            cfg = lm.section4_config("cnn", "small", kind, 100, 1000)
            assert cfg.d_hw == 525

    def test_concat_dims(self):
        c_char = lm.section4_config("concat", "small", "char", 49, 10_000, n_concat=8)
        c_pat = lm.section4_config("concat", "small", "pattern", 890, 10_000, n_concat=8)
        assert c_char.d_x == 15 and c_pat.d_x == 30
        assert c_char.d_hw == c_char.d_lm == 300

    def test_invalid_config_combinations(self):
        with pytest.raises(ValueError):
            lm.LMConfig("sum", 5, 5, d_x=3, d_hw=4, d_lm=4)
        with pytest.raises(ValueError):
            lm.LMConfig("concat", 5, 5, d_x=3, d_hw=4, d_lm=4)  # no n
        with pytest.raises(ValueError):
            lm.LMConfig(
                "cnn", 5, 5, d_x=3, d_hw=10, d_lm=4, cnn_widths=(1,), cnn_depths=(5,)
            )
