import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from te2sl import _kernels_py, kernels
from te2sl.metrics import EditCounts, error_rate, levenshtein_counts, oov_recall, pool


def exhaustive_min_edits(ref: tuple, hyp: tuple) -> int:
    """Breadth-first search over edit scripts turning ref into hyp."""
    alphabet = set(ref) | set(hyp)
    if ref == hyp:
        return 0
    frontier, seen = {ref}, {ref}
    for depth in itertools.count(1):
        nxt = set()
        for s in frontier:
            cands = set()
            for i in range(len(s)):
                cands.add(s[:i] + s[i + 1 :])
                for a in alphabet:
                    cands.add(s[:i] + (a,) + s[i + 1 :])
            for i in range(len(s) + 1):
                for a in alphabet:
                    cands.add(s[:i] + (a,) + s[i:])
            for c in cands:
                if c == hyp:
                    return depth
                if c not in seen and len(c) <= max(len(ref), len(hyp)) + 1:
                    seen.add(c)
                    nxt.add(c)
        frontier = nxt


def test_identity():
    c = levenshtein_counts("abcd", "abcd")
    assert c == EditCounts(4, 0, 0, 0)


def test_single_deletion():
    assert levenshtein_counts(["a", "b", "c"], ["a", "c"]) == EditCounts(3, 0, 1, 0)


def test_backtrace_tie_break():
    # "a b" -> "b a" has cost 2 as either two substitutions or del+ins;
    # the backtrace takes substitutions first
    c = levenshtein_counts(["a", "b"], ["b", "a"])
    assert (c.s, c.d, c.i) == (2, 0, 0)


def test_exhaustive_oracle_200_pairs():
    rng = random.Random(0)
    alphabet = "abcd"
    for _ in range(200):
        ref = tuple(rng.choice(alphabet) for _ in range(rng.randint(0, 5)))
        hyp = tuple(rng.choice(alphabet) for _ in range(rng.randint(0, 5)))
        c = levenshtein_counts(ref, hyp)
        assert c.errors == exhaustive_min_edits(ref, hyp), (ref, hyp)
        assert c.n - c.s - c.d + c.s + c.i == len(hyp)


def test_backends_agree():
    if kernels.compiled_kernels is None:
        pytest.skip("compiled kernels not built")
    rng = random.Random(1)
    for _ in range(500):
        ref = [rng.randint(0, 5) for _ in range(rng.randint(0, 9))]
        hyp = [rng.randint(0, 5) for _ in range(rng.randint(0, 9))]
        assert kernels.compiled_kernels.edit_counts(ref, hyp) == _kernels_py.edit_counts(ref, hyp)


def test_error_rate_examples():
    assert error_rate(EditCounts(3, 0, 1, 0)) == pytest.approx(1 / 3)
    assert error_rate([EditCounts(5), EditCounts(2)]) == 0.0
    pooled = [EditCounts(4, 1, 0, 0), EditCounts(6, 1, 0, 1)]
    assert error_rate(pooled) == pytest.approx(3 / 10)
    with pytest.raises(ValueError):
        error_rate(EditCounts(0))


def test_oov_recall_worked_example():
    rec = oov_recall([["a", "x", "b", "y"]], [["a", "x", "b", "z"]], {"a", "b"})
    assert rec.counts == EditCounts(2, 1, 0, 0)
    assert rec.value == 0.5


def test_oov_recall_extremes():
    refs = [["a", "x", "y"], ["z", "b"]]
    assert oov_recall(refs, [["x", "y"], ["b", "z"]], {"a", "b"}).value == 1.0
    assert oov_recall(refs, [["a"], ["b"]], {"a", "b"}).value == 0.0
    assert oov_recall([["a"]], [["a", "q"]], {"a"}).value is None


def test_oov_recall_length_mismatch():
    with pytest.raises(ValueError):
        oov_recall([["a"]], [], {"a"})


def test_oov_recall_in_unit_interval_1000_cases():
    rng = random.Random(2)
    vocab = {"a", "b"}
    letters = "abxyz"
    for _ in range(1000):
        refs = [[rng.choice(letters) for _ in range(rng.randint(0, 6))] for _ in range(rng.randint(1, 3))]
        hyps = [[rng.choice(letters) for _ in range(rng.randint(0, 6))] for _ in refs]
        v = oov_recall(refs, hyps, vocab).value
        assert v is None or 0.0 <= v <= 1.0


words = st.lists(st.sampled_from("abxyz"), max_size=7)


@settings(max_examples=200, deadline=None)
@given(words)
def test_self_alignment_has_no_edits(ref):
    assert levenshtein_counts(ref, ref).errors == 0


@settings(max_examples=200, deadline=None)
@given(words, words, st.lists(st.tuples(st.integers(0, 8), st.sampled_from("ab")), max_size=4))
def test_inserting_in_vocab_tokens_leaves_recall_unchanged(ref, hyp, inserts):
    vocab = {"a", "b"}
    padded = list(hyp)
    for pos, tok in inserts:
        padded.insert(min(pos, len(padded)), tok)
    assert oov_recall([ref], [hyp], vocab).value == oov_recall([ref], [padded], vocab).value


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(words, words), min_size=1, max_size=5), st.randoms(use_true_random=False))
def test_corpus_metrics_independent_of_order(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    counts = lambda ps: pool(levenshtein_counts(r, h) for r, h in ps)  # noqa: E731
    assert counts(pairs) == counts(shuffled)
    rec = lambda ps: oov_recall([r for r, _ in ps], [h for _, h in ps], {"a", "b"}).value  # noqa: E731
    assert rec(pairs) == rec(shuffled)

