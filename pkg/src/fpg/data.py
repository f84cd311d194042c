"""Corpus ingestion and dataset construction.

Three builders feed the training schedule: the pretraining pair set (all
articles minus held-out candidates), the distant-supervision set (clicked
news headlines as imperfect personalized labels, capped per news), and the
contrastive set (fact-consistent positives with rule-corrupted negatives).
A deterministic synthetic benchmark generator stands in for a real
click-log corpus.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import entity_spans, fact_consistency_proxy

CORRUPTION_KINDS = ("entity_swap", "number_perturb", "negation_flip")
_NUMERAL_RE = re.compile(r"\d+")
_AUXILIARIES = (
    "is are was were be been being has have had will would can could "
    "do does did may might must shall should"
).split()


@dataclass(frozen=True)
class NewsArticle:
    news_id: str
    headline: str
    body: str
    category: str = ""

    def __post_init__(self):
        if not self.headline or not self.body:
            raise ValueError(f"article {self.news_id!r} needs a headline and body")


@dataclass(frozen=True)
class ClickLog:
    user_id: str
    clicked_news_ids: tuple[str, ...]
    impressions: tuple[tuple[str, bool], ...] = ()


@dataclass(frozen=True)
class TrainExample:
    user_id: str
    candidate_news_id: str
    history_ids: tuple[str, ...]
    target_headline: str

    def __post_init__(self):
        if not self.history_ids:
            raise ValueError("training example needs a non-empty history")
        if self.candidate_news_id in self.history_ids:
            raise ValueError("candidate must not appear in its own history")


@dataclass(frozen=True)
class ContrastivePair:
    user_id: str
    candidate_news_id: str
    history_ids: tuple[str, ...]
    positive: str
    negatives: tuple[tuple[str, str], ...]  # (headline, corruption_kind)


# ---------------------------------------------------------------------------
# file io (UTF-8 JSON lines)
# ---------------------------------------------------------------------------


def _read_jsonl(path):
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed record on line {lineno}: {exc}") from exc


def load_corpus(path) -> dict[str, NewsArticle]:
    corpus: dict[str, NewsArticle] = {}
    for lineno, rec in _read_jsonl(path):
        try:
            article = NewsArticle(
                news_id=rec["news_id"],
                headline=rec["headline"],
                body=rec["body"],
                category=rec.get("category", ""),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}: malformed record on line {lineno}: {exc}") from exc
        if article.news_id in corpus:
            raise ValueError(f"{path}: duplicate news_id {article.news_id!r} on line {lineno}")
        corpus[article.news_id] = article
    return corpus


def save_corpus(corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for article in corpus.values():
            fh.write(json.dumps(article.__dict__, sort_keys=True) + "\n")


def load_clicks(path, corpus=None) -> list[ClickLog]:
    logs: list[ClickLog] = []
    dangling: list[str] = []
    for lineno, rec in _read_jsonl(path):
        try:
            log = ClickLog(
                user_id=rec["user_id"],
                clicked_news_ids=tuple(rec["clicks"]),
                impressions=tuple(
                    (imp["news_id"], bool(imp["clicked"])) for imp in rec.get("impressions", ())
                ),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: malformed record on line {lineno}: {exc}") from exc
        if corpus is not None:
            for nid in log.clicked_news_ids + tuple(n for n, _ in log.impressions):
                if nid not in corpus:
                    dangling.append(f"{log.user_id}->{nid}")
        logs.append(log)
    if dangling:
        raise ValueError("dangling click references: " + ", ".join(sorted(set(dangling))))
    return logs


def save_clicks(logs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for log in logs:
            rec = {
                "user_id": log.user_id,
                "clicks": list(log.clicked_news_ids),
                "impressions": [
                    {"news_id": nid, "clicked": clicked} for nid, clicked in log.impressions
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# dataset builders
# ---------------------------------------------------------------------------


def build_pretrain_set(corpus, exclude_ids=()) -> list[tuple[str, str]]:
    """(body, headline) pairs for every article outside ``exclude_ids``."""
    exclude = set(exclude_ids)
    return [(a.body, a.headline) for a in corpus.values() if a.news_id not in exclude]


def build_training_set(corpus, click_logs, limit_l: int, history_cap: int = 8):
    """Distant-supervision examples, capped at ``limit_l`` users per news.

    One example per (user, clicked-impression news), with the user's prior
    clicks (most recent ``history_cap``) as history.  When more than
    ``limit_l`` users clicked the same news, the users with the longest
    histories are kept, ties broken by ascending user_id.
    """
    if limit_l < 1:
        raise ValueError("limit_l must be at least 1")
    examples: list[TrainExample] = []
    for log in click_logs:
        history = log.clicked_news_ids[-history_cap:]
        if not history:
            continue
        seen = set()
        for news_id, clicked in log.impressions:
            if not clicked or news_id in seen or news_id in history:
                continue
            seen.add(news_id)
            examples.append(
                TrainExample(
                    user_id=log.user_id,
                    candidate_news_id=news_id,
                    history_ids=history,
                    target_headline=corpus[news_id].headline,
                )
            )
    ranked: dict[str, list[TrainExample]] = {}
    for ex in examples:
        ranked.setdefault(ex.candidate_news_id, []).append(ex)
    kept_keys = set()
    for news_id, exs in ranked.items():
        winners = sorted(exs, key=lambda e: (-len(e.history_ids), e.user_id))[:limit_l]
        kept_keys.update((news_id, w.user_id) for w in winners)
    return [ex for ex in examples if (ex.candidate_news_id, ex.user_id) in kept_keys]


# --- corruption rules -------------------------------------------------------


def entity_swap_candidates(headline: str, article: NewsArticle, corpus) -> list[str]:
    """Headlines with one capitalized token swapped for a capitalized token
    from another article (same category preferred, any other as fallback)."""
    spans = entity_spans(headline)
    if not spans:
        return []
    own_tokens = {t for span in spans for t in span}
    same_cat, other = [], []
    for a in corpus.values():
        if a.news_id == article.news_id:
            continue
        for span in entity_spans(a.headline):
            for tok in span:
                if tok in own_tokens:
                    continue
                (same_cat if a.category == article.category else other).append(tok)
    pool = same_cat if same_cat else other
    out, seen = [], set()
    for replacement in pool:
        target = spans[0][0]
        candidate = re.sub(rf"\b{re.escape(target)}\b", replacement, headline, count=1)
        if candidate != headline and candidate not in seen:
            seen.add(candidate)
            out.append(candidate)
    return out


def number_perturb_candidates(headline: str) -> list[str]:
    """Headlines with the first numeral shifted by +-1, +-2 or +-10."""
    match = _NUMERAL_RE.search(headline)
    if not match:
        return []
    value = int(match.group())
    out = []
    for delta in (1, 2, 10):
        for sign in (1, -1):
            shifted = value + sign * delta
            if shifted < 0:
                continue
            out.append(headline[: match.start()] + str(shifted) + headline[match.end() :])
    return out


def negation_flip_candidate(headline: str) -> str | None:
    """Insert (or remove) "not" after the first auxiliary/copula token."""
    tokens = headline.split()
    for i, tok in enumerate(tokens):
        if tok.lower() in _AUXILIARIES:
            if i + 1 < len(tokens) and tokens[i + 1].lower() == "not":
                flipped = tokens[: i + 1] + tokens[i + 2 :]
            else:
                flipped = tokens[: i + 1] + ["not"] + tokens[i + 1 :]
            return " ".join(flipped)
    return None


def build_contrastive_set(
    corpus,
    training_set,
    fact_scorer=fact_consistency_proxy,
    k_neg: int = 3,
    score_threshold: float = 0.8,
    top_fraction: float = 0.6,
    seed: int = 0,
) -> list[ContrastivePair]:
    """Contrastive pairs from the best-supported training headlines.

    Positives are training targets whose fact score against the candidate
    body reaches ``score_threshold``, keeping the ``top_fraction`` best.
    Each positive gets up to ``k_neg`` corrupted negatives (entity swap,
    numeral shift, negation flip); a negative is kept only when it scores
    strictly lower than its positive, and pairs with no viable negative are
    dropped.
    """
    if k_neg < 1:
        raise ValueError("k_neg must be at least 1")
    rng = np.random.default_rng(seed)
    scored = []
    for ex in training_set:
        body = corpus[ex.candidate_news_id].body
        score = fact_scorer(ex.target_headline, body)
        if score >= score_threshold:
            scored.append((score, ex))
    scored.sort(key=lambda t: (-t[0], t[1].user_id, t[1].candidate_news_id))
    keep = max(1, int(len(scored) * top_fraction)) if scored else 0

    pairs: list[ContrastivePair] = []
    for score, ex in scored[:keep]:
        article = corpus[ex.candidate_news_id]
        candidates: list[tuple[str, str]] = []
        swaps = entity_swap_candidates(ex.target_headline, article, corpus)
        if swaps:
            candidates.append((swaps[int(rng.integers(len(swaps)))], "entity_swap"))
        shifts = number_perturb_candidates(ex.target_headline)
        if shifts:
            candidates.append((shifts[int(rng.integers(len(shifts)))], "number_perturb"))
        flipped = negation_flip_candidate(ex.target_headline)
        if flipped is not None:
            candidates.append((flipped, "negation_flip"))
        negatives = tuple(
            (text, kind)
            for text, kind in candidates
            if text != ex.target_headline and fact_scorer(text, article.body) < score
        )[:k_neg]
        if negatives:
            pairs.append(
                ContrastivePair(
                    user_id=ex.user_id,
                    candidate_news_id=ex.candidate_news_id,
                    history_ids=ex.history_ids,
                    positive=ex.target_headline,
                    negatives=negatives,
                )
            )
    return pairs


# ---------------------------------------------------------------------------
# synthetic benchmark
# ---------------------------------------------------------------------------

_SYLLABLES = "bar den kor mal tor vel zan rin sol fen gar lim nor pax quid rud".split()
_PLACE_SUFFIXES = ("ville", "ford", "ton", "mont")
_VERBS = "beats tops edges stuns downs holds rattles blanks sweeps clips".split()
_TOPIC_NOUNS = "league cup open series derby rally tour bowl clash sprint".split()


@dataclass(frozen=True)
class PersonalizedRef:
    user_id: str
    news_id: str
    reference: str


@dataclass
class SyntheticBenchmark:
    corpus: dict[str, NewsArticle]
    click_logs: list[ClickLog]
    references: list[PersonalizedRef]
    pretrain_only_ids: tuple[str, ...] = field(default_factory=tuple)

    @property
    def candidate_ids(self) -> set[str]:
        """News used as training or test candidates (excluded from pretraining)."""
        ids = {nid for log in self.click_logs for nid, _ in log.impressions}
        ids.update(r.news_id for r in self.references)
        return ids


def _name(rng, capitalize=True) -> str:
    word = "".join(rng.choice(_SYLLABLES) for _ in range(2))
    return word.capitalize() if capitalize else word


def generate_synthetic_benchmark(
    seed: int, n_users: int, n_news: int, n_topics: int
) -> SyntheticBenchmark:
    """A deterministic two-entity news world for personalization studies.

    Every topic owns small pools of entities, places and verbs.  Each user
    follows one favorite entity: their clicked headlines foreground it, and
    candidate articles mention the favorite alongside a distractor entity
    from another topic, in randomized order, so the body alone does not
    reveal which entity the user-specific headline should foreground.
    """
    if min(n_users, n_news, n_topics) < 1:
        raise ValueError("all benchmark sizes must be at least 1")
    rng = np.random.default_rng(seed)

    topics = []
    used_names: set[str] = set()

    def fresh_name() -> str:
        while True:
            name = _name(rng)
            if name not in used_names:
                used_names.add(name)
                return name

    for k in range(n_topics):
        topics.append(
            {
                "noun": _TOPIC_NOUNS[k % len(_TOPIC_NOUNS)],
                "entities": [fresh_name() for _ in range(3)],
                "places": [fresh_name() + rng.choice(_PLACE_SUFFIXES) for _ in range(2)],
                "verbs": list(rng.choice(_VERBS, size=2, replace=False)),
            }
        )

    favorites = [(k, e) for k, topic in enumerate(topics) for e in topic["entities"]]
    user_favs = [favorites[u % len(favorites)] for u in range(n_users)]
    fav_keys = sorted({f for f in user_favs}, key=lambda f: (f[0], f[1]))

    # shrink per-favorite pools until the article budget fits
    for hist_pool, cand_pool, test_pool in ((4, 3, 2), (3, 2, 2), (2, 2, 1), (2, 1, 1), (1, 1, 1)):
        total = len(fav_keys) * (hist_pool + cand_pool + test_pool)
        if total <= n_news:
            break
    else:
        raise ValueError(f"n_news={n_news} too small for {len(fav_keys)} favorites")

    corpus: dict[str, NewsArticle] = {}
    counter = 0

    def add_article(headline: str, body: str, category: str) -> str:
        nonlocal counter
        news_id = f"n{counter:05d}"
        counter += 1
        corpus[news_id] = NewsArticle(news_id, headline, body, category)
        return news_id

    def article_parts(topic_idx: int):
        """Sampled facts; the headline verb stays genuinely stochastic
        given the body, so a trained model keeps honest uncertainty there
        instead of memorizing the world."""
        topic = topics[topic_idx]
        verb = str(rng.choice(topic["verbs"]))
        score = str(int(rng.integers(50, 60)))
        crowd = str(int(rng.integers(120, 130)))
        place = str(rng.choice(topic["places"]))
        return topic, verb, score, crowd, place

    def simple_article(topic_idx: int, entity: str) -> str:
        topic, verb, score, crowd, place = article_parts(topic_idx)
        headline = f"{entity} {verb} at {place}"
        body = (
            f"{entity} posted {score} at {place} . "
            f"crowd of {crowd} watched the {topic['noun']} ."
        )
        return add_article(headline, body, topic["noun"])

    def dual_article(topic_idx: int, entity: str, foreground_favorite: bool) -> tuple[str, str]:
        """Two-entity article; returns (news_id, favorite-foregrounding headline)."""
        topic, verb, score, crowd, place = article_parts(topic_idx)
        other_idx = int(rng.integers(n_topics - 1)) if n_topics > 1 else topic_idx
        if n_topics > 1 and other_idx >= topic_idx:
            other_idx += 1
        pool = [e for e in topics[other_idx]["entities"] if e != entity]
        distractor = str(rng.choice(pool)) if pool else "Nobody"
        first, second = (entity, distractor) if rng.random() < 0.5 else (distractor, entity)
        body = (
            f"{first} and {second} posted {score} at {place} . "
            f"crowd of {crowd} watched the {topic['noun']} ."
        )
        fav_headline = f"{entity} {verb} at {place}"
        headline = fav_headline if foreground_favorite else f"{distractor} {verb} at {place}"
        return add_article(headline, body, topic["noun"]), fav_headline

    history_ids = {f: [simple_article(f[0], f[1]) for _ in range(hist_pool)] for f in fav_keys}
    candidate_ids = {
        f: [dual_article(f[0], f[1], True)[0] for _ in range(cand_pool)] for f in fav_keys
    }
    test_articles = {
        f: [dual_article(f[0], f[1], False) for _ in range(test_pool)] for f in fav_keys
    }

    extras = []
    while counter < n_news:
        k = int(rng.integers(n_topics))
        entity = str(rng.choice(topics[k]["entities"]))
        extras.append(simple_article(k, entity))
    pretrain_only = tuple(extras)

    click_logs: list[ClickLog] = []
    references: list[PersonalizedRef] = []
    for u in range(n_users):
        fav = user_favs[u]
        clicks = tuple(history_ids[fav])
        impressions = tuple((nid, True) for nid in candidate_ids[fav])
        click_logs.append(ClickLog(f"u{u:04d}", clicks, impressions))
        tests = test_articles[fav]
        news_id, fav_headline = tests[u % len(tests)]
        references.append(PersonalizedRef(f"u{u:04d}", news_id, fav_headline))

    return SyntheticBenchmark(corpus, click_logs, references, pretrain_only)


def save_references(references, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in references:
            fh.write(json.dumps(r.__dict__, sort_keys=True) + "\n")


def load_references(path) -> list[PersonalizedRef]:
    return [PersonalizedRef(**rec) for _, rec in _read_jsonl(path)]
