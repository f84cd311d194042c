"""Loaders, dataset builders, corruption rules and the synthetic benchmark."""

import json

import pytest

from fpg.data import (
    ClickLog,
    NewsArticle,
    TrainExample,
    build_contrastive_set,
    build_pretrain_set,
    build_training_set,
    entity_swap_candidates,
    generate_synthetic_benchmark,
    load_clicks,
    load_corpus,
    negation_flip_candidate,
    number_perturb_candidates,
    save_clicks,
    save_corpus,
)
from fpg.metrics import fact_consistency_proxy

from oracles import brute_force_cap_counts


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------


def test_load_empty_corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text("")
    assert load_corpus(path) == {}


def test_duplicate_news_id_rejected(tmp_path):
    path = tmp_path / "corpus.jsonl"
    rec = json.dumps({"news_id": "n1", "headline": "h", "body": "b"})
    path.write_text(rec + "\n" + rec + "\n")
    with pytest.raises(ValueError, match="duplicate news_id"):
        load_corpus(path)


def test_malformed_record_error_names_line(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text(json.dumps({"news_id": "n1", "headline": "h", "body": "b"}) + "\n{broken\n")
    with pytest.raises(ValueError, match="line 2"):
        load_corpus(path)


def test_missing_field_error_names_line(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text(json.dumps({"news_id": "n1", "headline": "h"}) + "\n")
    with pytest.raises(ValueError, match="line 1"):
        load_corpus(path)


def test_dangling_click_reference_lists_offenders(tmp_path):
    corpus = {"n1": NewsArticle("n1", "h", "b")}
    path = tmp_path / "clicks.jsonl"
    path.write_text(json.dumps({"user_id": "u1", "clicks": ["n1", "n9"], "impressions": []}) + "\n")
    with pytest.raises(ValueError, match="n9"):
        load_clicks(path, corpus)


def test_round_trip_preserves_records(tmp_path):
    corpus = {
        "n1": NewsArticle("n1", "Alpha wins", "Alpha wins the cup .", "cup"),
        "n2": NewsArticle("n2", "Beta loses", "Beta loses the cup .", "cup"),
    }
    logs = [ClickLog("u1", ("n1",), (("n2", True),))]
    save_corpus(corpus, tmp_path / "c.jsonl")
    save_clicks(logs, tmp_path / "k.jsonl")
    corpus2 = load_corpus(tmp_path / "c.jsonl")
    logs2 = load_clicks(tmp_path / "k.jsonl", corpus2)
    assert corpus2 == corpus
    assert logs2 == logs


# ---------------------------------------------------------------------------
# pretrain set
# ---------------------------------------------------------------------------


def _articles(n):
    return {
        f"n{i}": NewsArticle(f"n{i}", f"Headline {i}", f"Body {i} text .") for i in range(n)
    }


def test_pretrain_excludes_nothing():
    corpus = _articles(4)
    assert len(build_pretrain_set(corpus)) == 4


def test_pretrain_excludes_everything():
    corpus = _articles(4)
    assert build_pretrain_set(corpus, set(corpus)) == []


def test_pretrain_set_difference():
    corpus = _articles(10)
    pairs = build_pretrain_set(corpus, {"n0", "n3", "n7"})
    assert len(pairs) == 7
    kept_headlines = {h for _, h in pairs}
    assert "Headline 0" not in kept_headlines


# ---------------------------------------------------------------------------
# distant-supervision set with per-news cap
# ---------------------------------------------------------------------------


def _cap_fixture():
    corpus = _articles(10)
    logs = []
    for u in range(7):
        history = tuple(f"n{i}" for i in range(1, 2 + u % 3))  # varying lengths
        logs.append(ClickLog(f"u{u}", history, (("n9", True),)))
    return corpus, logs


def test_cap_keeps_limit_l_longest_histories():
    corpus, logs = _cap_fixture()
    examples = build_training_set(corpus, logs, limit_l=5)
    for_n9 = [e for e in examples if e.candidate_news_id == "n9"]
    assert len(for_n9) == 5
    # longest histories first, user_id ascending on ties
    kept_users = {e.user_id for e in for_n9}
    assert kept_users == {"u1", "u2", "u4", "u5", "u0"}


def test_limit_one_user_one_example_per_impression_news():
    corpus = _articles(5)
    logs = [ClickLog("u0", ("n0",), (("n1", True), ("n2", True)))]
    examples = build_training_set(corpus, logs, limit_l=1)
    assert {e.candidate_news_id for e in examples} == {"n1", "n2"}
    assert all(e.user_id == "u0" for e in examples)


def test_empty_histories_and_unclicked_impressions_skipped():
    corpus = _articles(4)
    logs = [
        ClickLog("u0", (), (("n1", True),)),
        ClickLog("u1", ("n0",), (("n2", False),)),
    ]
    assert build_training_set(corpus, logs, limit_l=3) == []


def test_cap_matches_brute_force_on_synthetic_log():
    corpus = _articles(15)
    logs = []
    for u in range(20):
        history = tuple(f"n{(u + k) % 8}" for k in range(1 + u % 4))
        impressions = tuple((f"n{8 + (u + k) % 7}", True) for k in range(3))
        logs.append(ClickLog(f"u{u:02d}", history, impressions))
    for limit_l in (1, 3, 5, 10):
        examples = build_training_set(corpus, logs, limit_l=limit_l)
        counts = {}
        for e in examples:
            counts[e.candidate_news_id] = counts.get(e.candidate_news_id, 0) + 1
        assert counts == brute_force_cap_counts(corpus, logs, limit_l)


def test_candidate_never_in_history():
    corpus = _articles(6)
    logs = [ClickLog("u0", ("n1", "n2"), (("n1", True), ("n3", True)))]
    examples = build_training_set(corpus, logs, limit_l=5)
    assert {e.candidate_news_id for e in examples} == {"n3"}
    with pytest.raises(ValueError):
        TrainExample("u", "n1", ("n1",), "h")


# ---------------------------------------------------------------------------
# corruption rules and the contrastive set
# ---------------------------------------------------------------------------


def test_number_perturb_includes_plus_one():
    candidates = number_perturb_candidates("Rose shoots 65 at Pebble Beach")
    assert "Rose shoots 66 at Pebble Beach" in candidates
    # independent regex check: every candidate differs only in the numeral
    import re

    for c in candidates:
        assert re.sub(r"\d+", "#", c) == re.sub(r"\d+", "#", "Rose shoots 65 at Pebble Beach")
        assert c != "Rose shoots 65 at Pebble Beach"


def test_negation_flip_inserts_and_removes():
    assert negation_flip_candidate("Rose is leading") == "Rose is not leading"
    assert negation_flip_candidate("Rose is not leading") == "Rose is leading"
    assert negation_flip_candidate("Rose leads") is None


def test_entity_swap_prefers_same_category():
    corpus = {
        "n1": NewsArticle("n1", "Alpha wins", "Alpha wins .", "cup"),
        "n2": NewsArticle("n2", "Beta wins", "Beta wins .", "cup"),
        "n3": NewsArticle("n3", "Gamma wins", "Gamma wins .", "derby"),
    }
    swaps = entity_swap_candidates("Alpha wins", corpus["n1"], corpus)
    assert "Beta wins" in swaps
    assert "Gamma wins" not in swaps  # same-category pool is non-empty


def _contrastive_fixture():
    corpus = {
        "n1": NewsArticle("n1", "Alpha beats 65 at Korden", "Alpha beats 65 at Korden . fans .", "cup"),
        "n2": NewsArticle("n2", "Beta tops 70 at Malfort", "Beta tops 70 at Malfort . fans .", "cup"),
        "n3": NewsArticle("n3", "plain words only", "entirely different body .", "cup"),
    }
    examples = [
        TrainExample("u1", "n1", ("n2",), "Alpha beats 65 at Korden"),
        TrainExample("u2", "n2", ("n1",), "Beta tops 70 at Malfort"),
        TrainExample("u3", "n3", ("n1",), "plain words only"),
    ]
    return corpus, examples


def test_contrastive_negatives_differ_and_score_strictly_lower():
    corpus, examples = _contrastive_fixture()
    pairs = build_contrastive_set(corpus, examples, top_fraction=1.0)
    assert pairs, "expected at least one contrastive pair"
    for pair in pairs:
        body = corpus[pair.candidate_news_id].body
        positive_score = fact_consistency_proxy(pair.positive, body)
        for negative, kind in pair.negatives:
            assert negative != pair.positive
            assert kind in ("entity_swap", "number_perturb", "negation_flip")
            assert fact_consistency_proxy(negative, body) < positive_score


def test_contrastive_featureless_headline_dropped():
    corpus, examples = _contrastive_fixture()
    pairs = build_contrastive_set(corpus, examples, top_fraction=1.0)
    # "plain words only" has a score below the default threshold against its
    # body AND no corruptible features; it must not appear
    assert all(p.positive != "plain words only" for p in pairs)
    lonely = {
        "n3": NewsArticle("n3", "plain words only", "plain words only .", "cup")
    }
    lonely_pairs = build_contrastive_set(
        lonely, [TrainExample("u", "n3", ("n3x",), "plain words only")], top_fraction=1.0
    )
    assert lonely_pairs == []


def test_contrastive_deterministic_under_seed():
    corpus, examples = _contrastive_fixture()
    a = build_contrastive_set(corpus, examples, seed=3)
    b = build_contrastive_set(corpus, examples, seed=3)
    assert a == b


def test_contrastive_empty_training_set():
    corpus, _ = _contrastive_fixture()
    assert build_contrastive_set(corpus, []) == []


# ---------------------------------------------------------------------------
# synthetic benchmark
# ---------------------------------------------------------------------------


def _dump(bench):
    corpus = json.dumps({k: v.__dict__ for k, v in sorted(bench.corpus.items())}, sort_keys=True)
    clicks = json.dumps([c.__dict__ for c in bench.click_logs], sort_keys=True, default=list)
    refs = json.dumps([r.__dict__ for r in bench.references], sort_keys=True)
    return corpus + clicks + refs


def test_synthetic_benchmark_deterministic():
    a = generate_synthetic_benchmark(seed=5, n_users=6, n_news=40, n_topics=2)
    b = generate_synthetic_benchmark(seed=5, n_users=6, n_news=40, n_topics=2)
    assert _dump(a) == _dump(b)
    c = generate_synthetic_benchmark(seed=6, n_users=6, n_news=40, n_topics=2)
    assert _dump(a) != _dump(c)


def test_synthetic_single_topic_world():
    bench = generate_synthetic_benchmark(seed=0, n_users=4, n_news=30, n_topics=1)
    categories = {a.category for a in bench.corpus.values()}
    assert len(categories) == 1


def test_synthetic_histories_are_single_topic():
    bench = generate_synthetic_benchmark(seed=1, n_users=8, n_news=60, n_topics=3)
    for log in bench.click_logs:
        cats = {bench.corpus[nid].category for nid in log.clicked_news_ids}
        assert len(cats) == 1


def test_synthetic_references_resolve_and_candidates_excluded_from_history():
    bench = generate_synthetic_benchmark(seed=2, n_users=8, n_news=60, n_topics=3)
    users = {c.user_id for c in bench.click_logs}
    for ref in bench.references:
        assert ref.user_id in users
        assert ref.news_id in bench.corpus
    for log in bench.click_logs:
        history = set(log.clicked_news_ids)
        for nid, _ in log.impressions:
            assert nid not in history


def test_synthetic_reference_foregrounds_history_entity():
    bench = generate_synthetic_benchmark(seed=3, n_users=6, n_news=60, n_topics=3)
    clicks = {c.user_id: c for c in bench.click_logs}
    for ref in bench.references:
        first_word = ref.reference.split()[0]
        history_heads = [bench.corpus[n].headline for n in clicks[ref.user_id].clicked_news_ids]
        assert all(h.split()[0] == first_word for h in history_heads)
        assert first_word in bench.corpus[ref.news_id].body


def test_synthetic_rejects_impossible_budget():
    with pytest.raises(ValueError, match="too small"):
        generate_synthetic_benchmark(seed=0, n_users=50, n_news=10, n_topics=5)
