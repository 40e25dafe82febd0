"""Pattern-CRF exactness against brute-force enumeration and finite differences."""

import numpy as np
import pytest

from conftest import corpus_from_lines
from oracles import central_difference, count_in, crf_brute_force, crf_brute_nll, rel_err
from patlm import crf
from patlm.automaton import build_automaton
from patlm.corpus import Alphabet, CharCorpus
from patlm.owlqn import OwlqnConfig


def make_alphabet(n):
    a = Alphabet()
    for i in range(n):
        a.intern(chr(ord("a") + i))
    return a


def random_instance(rng, max_sym=3, max_pats=6, max_len=3, weight_range=2.0):
    n_sym = int(rng.integers(2, max_sym + 1))
    a = make_alphabet(n_sym)
    pset = set()
    n_pat = int(rng.integers(1, max_pats + 1))
    while len(pset) < n_pat:
        length = int(rng.integers(1, max_len + 1))
        pset.add(tuple(int(x) for x in rng.integers(0, n_sym, length)))
    plist = sorted(pset)
    weights = rng.uniform(-weight_range, weight_range, size=len(plist))
    aut = build_automaton(plist, a)
    table = crf.PatternTable(plist, weights, 1.0, a)
    return a, aut, table


class TestCountingAndEnergy:
    def test_count_examples(self):
        assert crf.count_occurrences((0, 1), [0, 1, 0, 1]) == 2
        assert crf.count_occurrences((0, 0), [0, 0, 0]) == 2
        assert crf.count_occurrences((0, 1), []) == 0

    def test_empty_pattern_rejected(self):
        with pytest.raises(ValueError):
            crf.count_occurrences((), [0, 1])

    def test_energy_zero_weights(self):
        a = make_alphabet(2)
        t = crf.PatternTable([(0, 1)], np.zeros(1), 1.0, a)
        assert crf.energy([0, 1, 0, 1], t) == 0.0

    def test_energy_single_occurrence(self):
        a = make_alphabet(2)
        t = crf.PatternTable([(0, 1)], np.array([np.log(2.0)]), 1.0, a)
        assert crf.energy([0, 1], t) == pytest.approx(np.log(2.0))

    def test_energy_two_occurrences(self):
        a = make_alphabet(2)
        t = crf.PatternTable([(0, 1)], np.array([0.5]), 1.0, a)
        assert crf.energy([0, 1, 0, 1], t) == pytest.approx(1.0)


class TestPartition:
    def test_no_patterns_uniform(self):
        a = make_alphabet(2)
        aut = build_automaton([(0, 0, 0, 0, 0)], a)  # never-matching long pattern
        t = crf.PatternTable([(0, 0, 0, 0, 0)], np.zeros(1), 1.0, a)
        assert crf.log_partition(2, aut, t) == pytest.approx(np.log(4.0))

    def test_worked_instance(self):
        a = make_alphabet(2)
        plist = [(0, 1)]
        aut = build_automaton(plist, a)
        t = crf.PatternTable(plist, np.array([np.log(2.0)]), 1.0, a)
        z = np.exp(crf.log_partition(2, aut, t))
        assert z == pytest.approx(3.5, abs=1e-12)
        e = crf.expected_counts(2, aut, t)
        assert e[0] == pytest.approx(1.0 / 7.0, abs=1e-12)

    def test_k_zero(self):
        a = make_alphabet(2)
        aut = build_automaton([(0, 1)], a)
        t = crf.PatternTable([(0, 1)], np.array([1.0]), 1.0, a)
        assert crf.log_partition(0, aut, t) == 0.0
        assert crf.expected_counts(0, aut, t)[0] == 0.0

    def test_negative_k_rejected(self):
        a = make_alphabet(2)
        aut = build_automaton([(0, 1)], a)
        t = crf.PatternTable([(0, 1)], np.array([1.0]), 1.0, a)
        with pytest.raises(ValueError):
            crf.log_partition(-1, aut, t)

    def test_zero_weight_expected_count_is_uniform_fraction(self):
        a = make_alphabet(2)
        aut = build_automaton([(0, 1)], a)
        t = crf.PatternTable([(0, 1)], np.zeros(1), 1.0, a)
        assert crf.expected_counts(2, aut, t)[0] == pytest.approx(0.25, abs=1e-12)

    def test_matches_brute_force_randomized(self, tiny_rng):
        for _ in range(40):
            a, aut, table = random_instance(tiny_rng)
            K = int(tiny_rng.integers(0, 7))
            log_z_brute, e_brute = crf_brute_force(
                table.patterns, table.weights, len(a), K
            )
            lt = crf.compute_length_table(aut, table.weights, [K])
            assert abs(lt.log_partition(K) - log_z_brute) <= 1e-10
            np.testing.assert_allclose(lt.expected_counts(K), e_brute, atol=1e-10)

    def test_normalization_sums_to_one(self, tiny_rng):
        import itertools

        a, aut, table = random_instance(tiny_rng, max_sym=2, max_pats=3)
        K = 4
        log_z = crf.log_partition(K, aut, table)
        total = sum(
            np.exp(-crf.energy(y, table) - log_z)
            for y in itertools.product(range(len(a)), repeat=K)
        )
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_large_weights_stay_stable(self):
        a = make_alphabet(2)
        plist = [(0,), (1, 1)]
        aut = build_automaton(plist, a)
        t = crf.PatternTable(plist, np.array([-40.0, 35.0]), 1.0, a)
        lz = crf.log_partition(400, aut, t)
        assert np.isfinite(lz)
        # the optimal string is all-a: energy -40*400; log Z must exceed that
        assert lz >= 400 * 40.0


class TestNllAndGrad:
    def test_worked_sentence(self):
        a = make_alphabet(2)
        plist = [(0, 1)]
        aut = build_automaton(plist, a)
        t = crf.PatternTable(plist, np.array([np.log(2.0)]), 0.0, a)
        corpus = CharCorpus(
            [np.array([0, 1], dtype=np.int32)], [[(0, 2)]], "raw", a
        )
        val, grad = crf.nll_and_grad(corpus, aut, t)
        assert val == pytest.approx(np.log(7.0), abs=1e-12)
        assert grad[0] == pytest.approx(6.0 / 7.0, abs=1e-12)

    def test_zero_weights_uniform_model(self):
        a = make_alphabet(3)
        plist = [(0, 1)]
        aut = build_automaton(plist, a)
        t = crf.PatternTable(plist, np.zeros(1), 0.0, a)
        sent = np.array([0, 1, 0, 1, 2], dtype=np.int32)
        corpus = CharCorpus([sent], [[(0, 5)]], "raw", a)
        val, grad = crf.nll_and_grad(corpus, aut, t)
        assert val == pytest.approx(5 * np.log(3.0), abs=1e-10)
        _, e = crf_brute_force(plist, np.zeros(1), 3, 5)
        assert grad[0] == pytest.approx(count_in(tuple(sent), (0, 1)) - e[0], abs=1e-10)

    def test_empty_corpus(self):
        a = make_alphabet(2)
        plist = [(0, 1)]
        aut = build_automaton(plist, a)
        t = crf.PatternTable(plist, np.zeros(1), 0.0, a)
        corpus = CharCorpus([], [], "raw", a)
        val, grad = crf.nll_and_grad(corpus, aut, t)
        assert val == 0.0
        np.testing.assert_array_equal(grad, np.zeros(1))

    def test_value_matches_brute_force(self, tiny_rng):
        for _ in range(10):
            a, aut, table = random_instance(tiny_rng, max_sym=3, max_pats=4)
            sents = [
                np.asarray(tiny_rng.integers(0, len(a), size=int(tiny_rng.integers(1, 6))), dtype=np.int32)
                for _ in range(3)
            ]
            corpus = CharCorpus(sents, [[] for _ in sents], "raw", a)
            val, _ = crf.nll_and_grad(corpus, aut, table)
            brute = crf_brute_nll(sents, table.patterns, table.weights, len(a))
            assert abs(val - brute) <= 1e-9

    def test_gradient_matches_finite_differences(self, tiny_rng):
        for _ in range(12):
            a, aut, table = random_instance(tiny_rng, max_sym=3, max_pats=5)
            sents = [
                np.asarray(tiny_rng.integers(0, len(a), size=int(tiny_rng.integers(1, 7))), dtype=np.int32)
                for _ in range(4)
            ]
            corpus = CharCorpus(sents, [[] for _ in sents], "raw", a)
            _, grad = crf.nll_and_grad(corpus, aut, table)

            def value(w):
                t2 = crf.PatternTable(table.patterns, w, 0.0, a)
                v, _ = crf.nll_and_grad(corpus, aut, t2)
                return v

            fd = central_difference(value, table.weights, h=1e-5)
            for g, f in zip(grad, fd):
                assert rel_err(g, f) <= 1e-6


class TestSelection:
    def test_select_nonzero(self):
        a = make_alphabet(2)
        plist = [(0,), (1,), (0, 1), (1, 0)]
        t = crf.PatternTable(plist, np.array([0.0, 0.3, 0.0, -1.2]), 1.0, a)
        assert crf.select_patterns(t) == [(1,), (1, 0)]

    def test_all_zero_selects_nothing(self):
        a = make_alphabet(2)
        t = crf.PatternTable([(0,)], np.zeros(1), 1.0, a)
        assert crf.select_patterns(t) == []

    def test_fit_produces_exact_zeros_and_fewer_at_higher_c(self):
        rng = np.random.default_rng(5)
        lines = [
            "".join(rng.choice(list("ab"), size=12)) + " ab ab"
            for _ in range(40
            )
        ]
        corpus = corpus_from_lines(lines)
        from patlm.mining import mine_patterns

        cands = mine_patterns(corpus, f=6, L_max=3)
        assert len(cands) > 3
        cfg = OwlqnConfig(max_iter=120)
        low = crf.fit(corpus, cands.patterns, reg_C=1.0, cfg=cfg)
        high = crf.fit(corpus, cands.patterns, reg_C=10.0, cfg=cfg)
        assert high.n_selected <= low.n_selected
        dropped = low.table.weights[~low.table.selected]
        assert all(w == 0.0 for w in dropped)

    def test_table_roundtrip(self, tmp_path):
        a = make_alphabet(3)
        plist = [(0, 1), (2,)]
        t = crf.PatternTable(plist, np.array([0.123456789012345, 0.0]), 7.0, a)
        path = tmp_path / "table.tsv"
        crf.save_table(path, t)
        loaded = crf.load_table(path, a, reg_C=7.0)
        assert loaded.patterns == plist
        np.testing.assert_array_equal(loaded.weights, t.weights)


class TestLengthTable:
    def test_weights_version_tags_staleness(self):
        a = make_alphabet(2)
        aut = build_automaton([(0, 1)], a)
        lt1 = crf.compute_length_table(aut, np.array([1.0]), [2])
        lt2 = crf.compute_length_table(aut, np.array([2.0]), [2])
        assert lt1.weights_version != lt2.weights_version

    def test_threads_give_identical_results(self):
        a = make_alphabet(3)
        plist = [(0, 1), (1, 2), (2,)]
        aut = build_automaton(plist, a)
        w = np.array([0.5, -0.7, 0.2])
        lengths = [3, 5, 8, 13]
        serial = crf.compute_length_table(aut, w, lengths, threads=1)
        parallel = crf.compute_length_table(aut, w, lengths, threads=4)
        for K in lengths:
            assert serial.log_partition(K) == parallel.log_partition(K)
            np.testing.assert_array_equal(
                serial.expected_counts(K), parallel.expected_counts(K)
            )
