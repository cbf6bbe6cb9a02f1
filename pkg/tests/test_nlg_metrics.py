import itertools
import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctgpt.errors import ArgumentError
from ctgpt.nlg_metrics import (
    METRICS,
    bleu,
    clipped_overlap,
    distinct_n,
    evaluate_pairs,
    lcs_length,
    meteor_lite,
    rouge_l,
    rouge_n,
)

words = st.lists(st.sampled_from("abcde"), min_size=0, max_size=8)


# brute-force oracles ----------------------------------------------------------

def lcs_brute(a, b):
    best = 0
    for k in range(len(a), 0, -1):
        subs_a = {tuple(c) for c in itertools.combinations(a, k)}
        if any(tuple(c) in subs_a for c in itertools.combinations(b, k)):
            return k
    return best


def multiset_overlap(cand, ref, n):
    cg = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
    rg = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
    hits = 0
    pool = list(rg)
    for g in cg:
        if g in pool:
            pool.remove(g)
            hits += 1
    return hits


# hand-computed examples -------------------------------------------------------

def test_bleu_identical_is_one():
    assert bleu("a b c d e", "a b c d e") == pytest.approx(1.0, abs=1e-12)


def test_bleu_two_gram_example():
    assert bleu("a b c d", "a b c e", max_n=2) == pytest.approx(math.sqrt(3 / 4 * 2 / 3), abs=1e-9)


def test_bleu_brevity_penalty():
    assert bleu("a b", "a b c d", max_n=2) == pytest.approx(math.exp(1 - 4 / 2), abs=1e-9)


def test_bleu_smoothing_floor():
    # unigram 2/3 matched, no bigram matches -> bigram precision floored at 1/(2*2)
    assert bleu("a x b", "a b c", max_n=2) == pytest.approx(math.sqrt(2 / 3 * 1 / 4), abs=1e-9)


def test_bleu_empty_candidate_is_zero():
    assert bleu([], ["a"]) == 0.0


def test_rouge_n_clipping_example():
    p, r, f = rouge_n("a b b", "a b c", 1)
    assert (p, r, f) == pytest.approx((2 / 3, 2 / 3, 2 / 3), abs=1e-9)


def test_rouge_n_disjoint_and_identical():
    assert rouge_n("a b", "c d", 1) == (0.0, 0.0, 0.0)
    assert rouge_n("a b c", "a b c", 2)[2] == pytest.approx(1.0)


def test_rouge_l_example():
    assert rouge_l("a c", "a b c") == pytest.approx(0.8, abs=1e-9)
    assert rouge_l("a b c", "a b c") == pytest.approx(1.0)
    assert rouge_l([], ["a"]) == 0.0


def test_meteor_identical():
    assert meteor_lite("a b c", "a b c") == pytest.approx(1 - 0.5 / 27, abs=1e-9)


def test_meteor_reordered():
    assert meteor_lite("c a b", "a b c") == pytest.approx(1 - 0.5 * (2 / 3) ** 3, abs=1e-9)


def test_meteor_no_match():
    assert meteor_lite("x y", "a b") == 0.0


def test_meteor_closed_form_for_identical_strings():
    for m in range(1, 7):
        toks = [str(i) for i in range(m)]
        assert meteor_lite(toks, toks) == pytest.approx(1 - 0.5 * (1 / m) ** 3, abs=1e-12)


def test_distinct_examples():
    assert distinct_n(["a a b"], 1) == pytest.approx(2 / 3)
    assert distinct_n(["a b", "a b"], 1) == pytest.approx(0.5)
    assert distinct_n(["a b", "c d"], 1) == 1.0
    assert distinct_n(["a", "b"], 2) == 0.0


def test_bad_orders_raise():
    with pytest.raises(ArgumentError):
        rouge_n("a", "a", 0)
    with pytest.raises(ArgumentError):
        distinct_n(["a"], 0)


# oracle comparisons -----------------------------------------------------------

def test_rouge_l_matches_brute_force_lcs_on_random_strings():
    rng = random.Random(0)
    for _ in range(1000):
        a = [rng.choice("abcd") for _ in range(rng.randint(0, 8))]
        b = [rng.choice("abcd") for _ in range(rng.randint(0, 8))]
        lcs = lcs_brute(a, b)
        assert lcs_length(a, b) == lcs
        p = lcs / len(a) if a else 0.0
        r = lcs / len(b) if b else 0.0
        expected = 2 * p * r / (p + r) if p + r else 0.0
        assert rouge_l(a, b) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from("abc"), max_size=10), st.lists(st.sampled_from("abc"), max_size=10), st.integers(1, 4))
def test_clipped_counts_match_multiset_oracle(cand, ref, n):
    assert clipped_overlap(cand, ref, n) == multiset_overlap(cand, ref, n)


@settings(max_examples=200, deadline=None)
@given(words, words)
def test_scores_in_unit_interval(a, b):
    for s in (bleu(a, b), rouge_n(a, b, 1)[2], rouge_n(a, b, 2)[2], rouge_l(a, b), meteor_lite(a, b)):
        assert 0.0 <= s <= 1.0 + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("abcde"), min_size=1, max_size=8))
def test_self_scores(a):
    assert bleu(a, a) == pytest.approx(1.0)
    assert rouge_n(a, a, 1)[2] == pytest.approx(1.0)
    assert rouge_l(a, a) == pytest.approx(1.0)


def test_string_and_token_inputs_agree():
    assert bleu("No acute findings.", ["no", "acute", "findings", "."]) == pytest.approx(1.0)


# corpus evaluation -------------------------------------------------------------

def test_evaluate_pairs_identical_means_one():
    refs = {"b": "dense nodule.", "a": "no abnormal findings."}
    rep = evaluate_pairs(refs, dict(refs))
    assert [p.id for p in rep.pairs] == ["a", "b"]
    assert rep.means["BLEU"] == pytest.approx(1.0)
    assert rep.means["ROUGE-L"] == pytest.approx(1.0)


def test_evaluate_pairs_single_pair_mean_equals_pair():
    rep = evaluate_pairs({"x": "a b c"}, {"x": "a c"})
    for m in METRICS:
        assert rep.means[m] == rep.pairs[0].scores[m]


def test_evaluate_pairs_means_invariant_to_order():
    refs = {f"r{i}": f"a b c {i}" for i in range(6)}
    gens = {f"r{i}": f"a c {i % 3}" for i in range(6)}
    shuffled_refs = dict(reversed(list(refs.items())))
    assert evaluate_pairs(refs, gens).means == evaluate_pairs(shuffled_refs, gens).means


def test_evaluate_pairs_count_mismatch():
    with pytest.raises(ArgumentError):
        evaluate_pairs({"a": "x"}, {"a": "x", "b": "y"})


def test_report_serialization(tmp_path):
    rep = evaluate_pairs({"a": "a b"}, {"a": "a b"}, {"temperature": 0.7})
    rep.save(tmp_path, label="T1")
    lines = (tmp_path / "eval.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["Model / Method", "BLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L", "METEOR"]
    assert lines[1].startswith("T1\t1.0000")
    data = json.loads((tmp_path / "eval.json").read_text())
    assert data["metadata"]["temperature"] == 0.7
    assert data["means"]["BLEU"] == pytest.approx(1.0)
