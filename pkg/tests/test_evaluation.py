"""Perplexity, gate diagnostics, parameter counting."""

import numpy as np
import pytest

from conftest import corpus_from_lines
from patlm import evaluation, lm, training
from patlm.corpus import build_word_vocab, WordVocab
from patlm.encoding import encode_chars


def encoded_stream(lines):
    c = corpus_from_lines(lines)
    return encode_chars(c, build_word_vocab(c))


def model_for(enc, d=10, seed=3):
    cfg = lm.LMConfig(
        "sum", n_subwords=enc.n_subword_types, vocab_size=len(enc.vocab),
        d_x=d, d_hw=d, d_lm=d, dropout=lm.DropoutRates(),
    )
    return training.init_params(training.TrainConfig(seed=seed), cfg)


class TestPerplexity:
    def test_uniform_logits_give_vocab_size(self):
        enc = encoded_stream(["aa bb cc dd ee ff gg hh ii jj"] * 4)
        params = model_for(enc)
        params.tensors["out_w"][:] = 0.0
        params.tensors["out_b"][:] = 0.0
        v = len(enc.vocab)
        assert evaluation.perplexity(params, enc) == pytest.approx(v, rel=1e-6)

    def test_probability_one_model(self):
        # single-word vocabulary: every prediction is certain
        c = corpus_from_lines(["x x x x x x x x"])
        vocab = WordVocab(["x", "<unk>"])
        enc = encode_chars(c, vocab)
        params = model_for(enc)
        params.tensors["out_b"][:] = np.array([30.0, -30.0], dtype=np.float32)
        params.tensors["out_w"][:] = 0.0
        assert evaluation.perplexity(params, enc) == pytest.approx(1.0, abs=1e-6)

    def test_invariant_to_chunk_size(self):
        rng = np.random.default_rng(1)
        words = [f"w{i}" for i in range(30)]
        lines = [" ".join(rng.choice(words, size=10)) for _ in range(40)]
        enc = encoded_stream(lines)
        params = model_for(enc)
        p16 = evaluation.perplexity(params, enc, chunk=16)
        p128 = evaluation.perplexity(params, enc, chunk=128)
        p_all = evaluation.perplexity(params, enc, chunk=10_000)
        assert p16 == pytest.approx(p128, rel=1e-6)
        assert p16 == pytest.approx(p_all, rel=1e-6)

    def test_vocab_mismatch_rejected(self):
        enc = encoded_stream(["aa bb cc"])
        params = model_for(enc)
        bad = encode_chars(
            corpus_from_lines(["aa bb cc dd"]),
            WordVocab(["aa", "bb", "cc", "dd", "<unk>"]),
        )
        with pytest.raises(ValueError, match="mismatch"):
            evaluation.perplexity(params, bad)


class TestGateStats:
    def test_init_mean_is_sigmoid_of_bias(self):
        rng = np.random.default_rng(2)
        words = [f"w{i}" for i in range(20)]
        lines = [" ".join(rng.choice(words, size=12)) for _ in range(100)]
        enc = encoded_stream(lines)
        params = model_for(enc, d=16)
        stats = evaluation.gate_stats(params, enc, max_samples=50_000)
        expected = 1.0 / (1.0 + np.exp(2.0))  # sigmoid(-2) ~ 0.1192
        assert abs(stats.layer1.mean() - expected) <= 0.02
        assert abs(stats.layer2.mean() - expected) <= 0.02

    def test_values_strictly_inside_unit_interval(self):
        enc = encoded_stream(["ab cd ef gh ij kl mn op"] * 10)
        params = model_for(enc)
        stats = evaluation.gate_stats(params, enc)
        for vals in (stats.layer1, stats.layer2):
            assert vals.min() > 0.0 and vals.max() < 1.0

    def test_sample_halves_agree(self):
        rng = np.random.default_rng(3)
        words = [f"w{i}" for i in range(25)]
        lines = [" ".join(rng.choice(words, size=12)) for _ in range(1200)]
        enc = encoded_stream(lines)
        params = model_for(enc, d=16)
        stats = evaluation.gate_stats(params, enc, max_samples=300_000)
        vals = stats.layer1
        assert vals.size >= 100_000
        half = vals.size // 2
        assert abs(vals[:half].mean() - vals[half:].mean()) < 0.01

    def test_csv_output(self, tmp_path):
        enc = encoded_stream(["ab cd ef gh"] * 5)
        params = model_for(enc)
        stats = evaluation.gate_stats(params, enc, max_samples=40)
        path = tmp_path / "gates.csv"
        stats.write_csv(path)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "layer,value"
        layers = {r.split(",")[0] for r in rows[1:]}
        assert layers == {"1", "2"}


class TestParamCount:
    def test_micro_model_arithmetic(self):
        cfg = lm.LMConfig(
            "sum", n_subwords=7, vocab_size=7, d_x=4, d_hw=4, d_lm=4,
        )
        params = training.init_params(training.TrainConfig(seed=0), cfg)
        counts = evaluation.param_count(params)
        assert counts["embedding"] == 7 * 4
        assert counts["softmax"] == 4 * 7 + 7  # embeddings + softmax = 63
        assert counts["embedding"] + counts["softmax"] == 63
        assert counts["highway"] == 2 * (2 * (4 * 4 + 4))
        assert counts["lstm"] == 2 * (4 * 16 + 4 * 16 + 16)
        assert counts["total"] == sum(
            v for k, v in counts.items() if k != "total"
        )

    def test_doubling_vocab_changes_softmax_only(self):
        def count(v):
            cfg = lm.LMConfig(
                "sum", n_subwords=7, vocab_size=v, d_x=4, d_hw=4, d_lm=4
            )
            p = training.init_params(training.TrainConfig(seed=0), cfg)
            return evaluation.param_count(p)

        c1, c2 = count(10), count(20)
        assert c2["softmax"] - c1["softmax"] == 4 * 10 + 10
        for key in ("embedding", "composition", "highway", "lstm"):
            assert c1[key] == c2[key]
