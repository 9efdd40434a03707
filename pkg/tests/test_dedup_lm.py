"""MinHash near-duplicate removal and n-gram language models."""

from __future__ import annotations

import io
import math
import random
import statistics

import fixturegen
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lpdata.corpus import Document
from lpdata.minhash import (
    TOO_SHORT,
    LshParams,
    MinHashSignature,
    SpilledSignature,
    cluster_and_resolve,
    document_signature,
    estimate_jaccard,
    find_near_duplicates,
    lsh_candidates,
    partitioned_candidates,
    read_signatures,
    shingle,
    signature,
    write_signature,
)
from lpdata.ngram_lm import (
    ArpaParseError,
    LabelingRule,
    NgramModel,
    label_documents,
    perplexity,
    read_arpa,
    score_documents,
    sentences_from_text,
    train_lm,
    write_arpa,
)

PARAMS = LshParams()


def _random_set(rng: random.Random, n: int) -> set[int]:
    return {rng.getrandbits(64) for _ in range(n)}


def _half_jaccard(rng: random.Random) -> tuple[set[int], set[int]]:
    shared, only_a, only_b = (_random_set(rng, n) for n in (500, 250, 250))
    return shared | only_a, shared | only_b


def _sig(values, doc_id="x") -> MinHashSignature:
    return signature(values, PARAMS, doc_id)


# ---------------------------------------------------------------------------
# shingles and signatures


def test_shingle_windows():
    assert len(shingle(["a", "b", "c"], 2)) == 2
    assert shingle(["a", "b", "c"], 2) == shingle(["x", "a", "b", "c"], 2) - shingle(["x", "a"], 2)


def test_shingle_set_semantics_and_case():
    assert len(shingle(["a", "a", "a"], 2)) == 1
    assert shingle(["The", "Cat"], 2) == shingle(["the", "cat"], 2)


def test_short_text_has_no_shingles():
    assert shingle(["one", "two", "three"], 5) == set()
    with pytest.raises(ValueError):
        shingle(["a"], 0)


def test_too_short_document_is_sentinel_and_kept():
    short = Document(id="s", text="only three words")
    sig = document_signature(short, PARAMS)
    assert sig.is_sentinel and len(sig.values) == PARAMS.num_perms
    twin = Document(id="t", text="only three words")
    clusters, dropped = find_near_duplicates([short, twin], PARAMS)
    assert clusters == [] and dropped == {}
    assert TOO_SHORT == "too_short_for_minhash"


def test_params_validation_and_implied_threshold():
    with pytest.raises(ValueError):
        LshParams(num_perms=128, bands=10, rows=8)
    assert PARAMS.implied_threshold == pytest.approx(0.707, abs=0.001)


def test_identical_sets_identical_signatures():
    s = _random_set(random.Random(1), 300)
    assert np.array_equal(_sig(s).values, _sig(set(s)).values)
    assert estimate_jaccard(_sig(s), _sig(s)) == 1.0


def test_disjoint_sets_estimate_near_zero():
    rng = random.Random(2)
    for _ in range(20):
        a, b = _random_set(rng, 1000), _random_set(rng, 1000)
        assert not a & b
        assert estimate_jaccard(_sig(a), _sig(b)) <= 0.05


def test_half_jaccard_within_tolerance_across_seeds():
    a, b = _half_jaccard(random.Random(3))
    assert len(a & b) / len(a | b) == 0.5
    estimates = []
    for seed in range(200):
        p = LshParams(seed=seed)
        estimates.append(estimate_jaccard(signature(a, p), signature(b, p)))
    within = sum(abs(e - 0.5) <= 0.15 for e in estimates) / len(estimates)
    assert within >= 0.99
    # unbiased: mean within two standard errors of the exact value
    se = statistics.stdev(estimates) / math.sqrt(len(estimates))
    assert abs(statistics.mean(estimates) - 0.5) <= 2 * se


def test_signature_depends_on_seed_only():
    s = _random_set(random.Random(4), 50)
    assert np.array_equal(signature(s, LshParams(seed=9)).values, signature(s, LshParams(seed=9)).values)
    assert not np.array_equal(signature(s, LshParams(seed=9)).values, signature(s, LshParams(seed=10)).values)


# ---------------------------------------------------------------------------
# banding and clustering


def test_identical_signatures_are_candidates():
    s = _random_set(random.Random(5), 100)
    assert list(lsh_candidates([_sig(s, "b"), _sig(s, "a")], PARAMS)) == [("a", "b")]


def test_fully_different_signatures_are_not_candidates():
    a, b = _sig({1}, "a"), _sig({2}, "b")
    assert not np.any(a.values == b.values)
    assert list(lsh_candidates([a, b], PARAMS)) == []


def test_sentinels_never_collide():
    assert list(lsh_candidates([_sig([], "a"), _sig([], "b")], PARAMS)) == []


def test_transitive_cluster():
    s = _random_set(random.Random(6), 100)
    sigs = {k: _sig(s, k) for k in "ABC"}
    clusters, dropped = cluster_and_resolve([("A", "B"), ("B", "C")], sigs, PARAMS, {"A": 5, "B": 9, "C": 5})
    assert len(clusters) == 1
    assert clusters[0].members == ["A", "B", "C"] and clusters[0].kept == "B"
    assert dropped == {"A": "B", "C": "B"}


def test_tie_goes_to_smallest_id():
    s = _random_set(random.Random(7), 100)
    sigs = {k: _sig(s, k) for k in ("m", "k")}
    _, dropped = cluster_and_resolve([("k", "m")], sigs, PARAMS, {"m": 3, "k": 3})
    assert dropped == {"m": "k"}


def test_low_estimate_is_not_clustered():
    rng = random.Random(8)
    shared = _random_set(rng, 300)
    a, b = shared | _random_set(rng, 700), shared | _random_set(rng, 700)
    sa, sb = _sig(a, "a"), _sig(b, "b")
    assert estimate_jaccard(sa, sb) < PARAMS.jaccard_threshold
    assert cluster_and_resolve([("a", "b")], {"a": sa, "b": sb}, PARAMS, {"a": 1, "b": 1}) == ([], {})


def test_exact_verification_flag():
    rng = random.Random(9)
    a, b = _half_jaccard(rng)
    sigs = {"a": _sig(a, "a"), "b": _sig(b, "b")}
    lengths = {"a": 1, "b": 2}
    loose = LshParams(jaccard_threshold=0.5)
    clusters, _ = cluster_and_resolve([("a", "b")], sigs, loose, lengths, {"a": a, "b": b})
    assert len(clusters) == 1
    strict = LshParams(jaccard_threshold=0.51)
    assert cluster_and_resolve([("a", "b")], sigs, strict, lengths, {"a": a, "b": b}) == ([], {})


@pytest.fixture(scope="module")
def planted():
    return fixturegen.planted_dup_corpus(seed=1)


def _groups(corpus) -> dict[str, str]:
    group = {d.id: d.id for d in corpus.docs}
    for a, b in corpus.pairs:
        group[b] = group[a]
    return group


def test_planted_survivors_are_longest(planted):
    clusters, dropped = find_near_duplicates(planted.docs, PARAMS)
    group = _groups(planted)
    length = {d.id: len(d.text) for d in planted.docs}
    members: dict[str, list[str]] = {}
    for doc_id, g in group.items():
        members.setdefault(g, []).append(doc_id)
    for g, ids in members.items():
        survivors = [i for i in ids if i not in dropped]
        assert len(survivors) == 1
        assert survivors[0] == min(ids, key=lambda i: (-length[i], i))
    # clusters are disjoint and nothing is both kept and dropped
    seen = [m for c in clusters for m in c.members]
    assert len(seen) == len(set(seen))
    assert not {c.kept for c in clusters} & set(dropped)


def test_order_does_not_change_decisions(planted):
    _, base = find_near_duplicates(planted.docs, PARAMS)
    for seed in range(3):
        docs = list(planted.docs)
        random.Random(seed).shuffle(docs)
        assert find_near_duplicates(docs, PARAMS)[1] == base


def test_dumps_are_isolated():
    text = fixturegen.make_doc(random.Random(10), "en", n_lines=8)
    docs = [Document(id="a", text=text, dump_id="d1"), Document(id="b", text=text, dump_id="d2")]
    assert find_near_duplicates(docs, PARAMS) == ([], {})
    docs.append(Document(id="c", text=text, dump_id="d2"))
    assert find_near_duplicates(docs, PARAMS)[1] == {"c": "b"}


# ---------------------------------------------------------------------------
# spill files and partitioned postings


def test_signature_spill_round_trip(tmp_path):
    sigs = [_sig(_random_set(random.Random(i), 20), f"doc-{i}") for i in range(5)] + [_sig([], "empty")]
    path = tmp_path / "sigs.bin"
    with open(path, "wb") as fh:
        for i, s in enumerate(sigs):
            write_signature(fh, s, "dump-é", 100 + i)
    back = list(read_signatures(path, PARAMS.num_perms))
    assert [b.signature.doc_id for b in back] == [s.doc_id for s in sigs]
    assert all(np.array_equal(b.signature.values, s.values) for b, s in zip(back, sigs))
    assert back[-1].signature.is_sentinel and back[0].dump_id == "dump-é" and back[2].text_len == 102
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(ValueError, match="truncated"):
        list(read_signatures(path, PARAMS.num_perms))


@pytest.mark.parametrize("partitions", [1, 4, 64])
def test_partitioned_candidates_match_in_memory(planted, tmp_path, partitions):
    sigs = [document_signature(d, PARAMS) for d in planted.docs]
    expected = list(lsh_candidates(sigs, PARAMS))
    spills = (SpilledSignature(s, "", 0) for s in sigs)
    triples, by_id = partitioned_candidates(spills, PARAMS, partitions, tmp_path)
    assert sorted((a, b) for _, a, b in triples) == expected
    assert len(by_id) == len(sigs)


# ---------------------------------------------------------------------------
# language models

FIXTURE = [s.split() for s in fixturegen.lm_fixture_sentences()]


def _mle_unigram() -> NgramModel:
    return train_lm([["a", "a", "b"]], order=1, smoothing="add_k", add_k=0)


def test_unigram_mle():
    m = _mle_unigram()
    assert 10 ** m.log10_prob("a") == pytest.approx(2 / 3)
    assert 10 ** m.log10_prob("b") == pytest.approx(1 / 3)


def test_unigram_perplexity_convention():
    # unigram models score no end marker, so "a" is a single token
    p = perplexity(_mle_unigram(), "a")
    assert p.token_count == 1
    assert p.log10_prob_per_token == pytest.approx(math.log10(2 / 3))
    assert p.perplexity == pytest.approx(1.5)


def test_bigram_counts_end_marker():
    m = train_lm(FIXTURE, order=2, smoothing="add_k", add_k=1)
    assert perplexity(m, "the cat").token_count == 3


def test_unknown_tokens_stay_finite():
    for m in (_mle_unigram(), train_lm(FIXTURE, order=2, smoothing="add_k", add_k=1)):
        p = perplexity(m, "zebra quokka")
        assert math.isfinite(p.perplexity) and p.perplexity > 1


def test_self_concatenation_keeps_per_token_score():
    m = train_lm(FIXTURE, order=1, smoothing="add_k", add_k=1)
    text = "the cat saw a red dog"
    once = perplexity(m, text).log10_prob_per_token
    assert perplexity(m, f"{text} {text}").log10_prob_per_token == pytest.approx(once)
    assert perplexity(m, f"{text}\n{text}").log10_prob_per_token == pytest.approx(once)


def test_empty_text_and_corpus():
    with pytest.raises(ValueError, match="empty_text"):
        perplexity(_mle_unigram(), "  \n")
    with pytest.raises(ValueError, match="empty_corpus"):
        train_lm([])
    with pytest.raises(ValueError, match="empty_corpus"):
        train_lm([[], []], order=2)


def test_invalid_training_options():
    with pytest.raises(ValueError):
        train_lm(FIXTURE, order=6)
    with pytest.raises(ValueError):
        train_lm(FIXTURE, smoothing="witten_bell")


def test_small_corpus_falls_back_to_add_k():
    m = train_lm(FIXTURE, order=3)
    assert m.meta["fallback"] == "add_k=0.5"


@pytest.fixture(scope="module")
def kn_sentences():
    good, _ = fixturegen.lm_corpora(150, seed=11)
    return [s for doc in good for s in sentences_from_text(doc)]


def test_kn_prefixes_are_stored(kn_sentences):
    m = train_lm(kn_sentences, order=3)
    assert "fallback" not in m.meta
    for n in range(1, m.order):
        for g in m.tables[n]:
            assert g[:-1] in m.tables[n - 1]


def test_arpa_bytes_are_deterministic(kn_sentences):
    outs = []
    for _ in range(2):
        buf = io.StringIO()
        write_arpa(train_lm(kn_sentences, order=3), buf)
        outs.append(buf.getvalue())
    assert outs[0] == outs[1]
    assert outs[0].rstrip().endswith("\\end\\")


def test_arpa_round_trip_file(kn_sentences, tmp_path):
    m = train_lm(kn_sentences, order=3)
    write_arpa(m, tmp_path / "m.arpa")
    back = read_arpa(tmp_path / "m.arpa")
    for s in kn_sentences[:20]:
        text = " ".join(s)
        assert perplexity(back, text).log10_prob_per_token == pytest.approx(
            perplexity(m, text).log10_prob_per_token, abs=1e-6
        )


HAND_ARPA = """\\data\\
ngram 1=3

\\1-grams:
-0.5\ta
-0.8\tb
-1.2\t<unk>

\\end\\
"""


def test_hand_written_unigram_file():
    m = read_arpa(io.StringIO(HAND_ARPA))
    assert m.order == 1 and not m.markers
    assert m.log10_prob("a") == -0.5
    assert perplexity(m, "a").log10_prob_per_token == -0.5
    assert m.log10_prob("never-seen") == -1.2


def test_missing_end_marker():
    text = HAND_ARPA.replace("\\end\\\n", "")
    with pytest.raises(ArpaParseError, match="arpa_parse_error: line") as err:
        read_arpa(io.StringIO(text))
    assert err.value.lineno > 0


def test_malformed_section_header_reports_line():
    text = HAND_ARPA.replace("\\1-grams:", "\\one-grams:")
    with pytest.raises(ArpaParseError) as err:
        read_arpa(io.StringIO(text))
    assert err.value.lineno == 4


def test_declared_count_mismatch():
    with pytest.raises(ArpaParseError):
        read_arpa(io.StringIO(HAND_ARPA.replace("ngram 1=3", "ngram 1=4")))


def test_training_text_beats_shuffled_tokens(kn_sentences):
    m = train_lm(kn_sentences, order=2)
    text = "\n".join(" ".join(s) for s in kn_sentences[:200])
    tokens = text.split()
    random.Random(12).shuffle(tokens)
    shuffled = "\n".join(" ".join(tokens[i : i + 12]) for i in range(0, len(tokens), 12))
    assert perplexity(m, text).perplexity <= perplexity(m, shuffled).perplexity


# ---------------------------------------------------------------------------
# dual-perplexity labeling


@pytest.mark.parametrize(
    "good, bad, expected",
    [(100, 900, "positive"), (900, 100, "negative"), (100, 100, None), (400, 900, None), (300, 600, "positive")],
)
def test_both_mode(good, bad, expected):
    assert LabelingRule().label(good, bad) == expected


def test_ratio_mode():
    rule = LabelingRule(margin_mode="ratio", ratio_min=1.5)
    assert rule.label(100, 150) == "positive"
    assert rule.label(150, 100) == "negative"
    assert rule.label(100, 120) is None


def test_rule_validation():
    with pytest.raises(ValueError):
        LabelingRule(good_ppl_max=700, bad_ppl_min=600)
    with pytest.raises(ValueError):
        LabelingRule(margin_mode="either")


_ppl = st.floats(1, 5000, allow_nan=False)


@given(_ppl, _ppl, st.sampled_from(["both", "ratio"]))
def test_labels_are_antisymmetric(g, b, mode):
    rule = LabelingRule(margin_mode=mode)
    flip = {"positive": "negative", "negative": "positive", None: None}
    assert rule.label(b, g) == flip[rule.label(g, b)]


def test_label_documents_swapping_models():
    good_txt, bad_txt = fixturegen.lm_corpora(240, seed=13)
    split = lambda docs: [s for d in docs for s in sentences_from_text(d)]
    good = train_lm(split(good_txt[:120]), order=3, lang="en")
    bad = train_lm(split(bad_txt[:120]), order=3, lang="en")
    docs = [Document(id=f"g{i}", text=t) for i, t in enumerate(good_txt[120:])]
    docs += [Document(id=f"b{i}", text=t) for i, t in enumerate(bad_txt[120:])]
    rule = LabelingRule(margin_mode="ratio")
    examples, unlabeled = label_documents(good, bad, docs, rule)
    assert len(examples) + unlabeled == len(docs)
    source = {"g": "positive", "b": "negative"}
    scored = [s for _, s in score_documents(good, bad, docs, rule)]
    assert sum(s.label == source[s.doc_id[0]] for s in scored) / len(docs) >= 0.9
    swapped, _ = label_documents(bad, good, docs, rule)
    flip = {"positive": "negative", "negative": "positive"}
    assert [flip[e.label] for e in swapped] == [e.label for e in examples]


def test_models_must_share_language():
    a = train_lm(FIXTURE, order=1, lang="en")
    b = train_lm(FIXTURE, order=1, lang="ko")
    with pytest.raises(ValueError, match="disagree"):
        list(score_documents(a, b, [Document(id="x", text="the cat")], LabelingRule()))
