"""Three-axis headline evaluation: coverage, personalization, factuality.

Coverage is ROUGE-1/2/L F1 against a reference headline.  Personalization
is the cosine similarity between a generated headline and the user's
clicked headlines (max and mean over the history).  Factual consistency is
a rule-based proxy: capitalized spans, numerals and negation markers in the
headline are claims, and the score is the supported fraction.  The proxy
is deliberately model-free so that the rest of the system can be checked
against it deterministically; reports label the column "FactProxy".
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .text import tokenize

_CASED_RE = re.compile(r"[A-Za-z0-9]+")
_NUMERAL_RE = re.compile(r"\d+")
NEGATION_MARKERS = frozenset({"not", "no", "never"})
_STOPWORDS = frozenset(
    "a an and are as at be by for from has have in is it of on or the to was "
    "were will with".split()
)


# ---------------------------------------------------------------------------
# coverage (ROUGE)
# ---------------------------------------------------------------------------


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap: int, hyp_total: int, ref_total: int) -> float:
    if hyp_total == 0 or ref_total == 0:
        return 0.0
    p = overlap / hyp_total
    r = overlap / ref_total
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def rouge_n(hypothesis: str, reference: str, n: int) -> float:
    """Clipped n-gram overlap F1."""
    hyp = _ngrams(tokenize(hypothesis), n)
    ref = _ngrams(tokenize(reference), n)
    overlap = sum(min(c, ref[g]) for g, c in hyp.items())
    return _f1(overlap, sum(hyp.values()), sum(ref.values()))


def _lcs_length(xs: list[str], ys: list[str]) -> int:
    dp = [0] * (len(ys) + 1)
    for x in xs:
        prev = 0
        for j, y in enumerate(ys, start=1):
            cur = dp[j]
            dp[j] = prev + 1 if x == y else max(dp[j], dp[j - 1])
            prev = cur
    return dp[-1]


def rouge_l(hypothesis: str, reference: str) -> float:
    """Longest-common-subsequence F1."""
    hyp, ref = tokenize(hypothesis), tokenize(reference)
    return _f1(_lcs_length(hyp, ref), len(hyp), len(ref))


# ---------------------------------------------------------------------------
# personalization
# ---------------------------------------------------------------------------


class TfidfEmbedder:
    """Bag-of-words vectors weighted by smoothed IDF from a text corpus."""

    def __init__(self, corpus_texts):
        df = Counter()
        n_docs = 0
        for text in corpus_texts:
            n_docs += 1
            df.update(set(tokenize(text)))
        self._n_docs = n_docs
        self._df = df

    def _idf(self, token: str) -> float:
        return 1.0 + math.log((1 + self._n_docs) / (1 + self._df.get(token, 0)))

    def __call__(self, text: str) -> dict[str, float]:
        counts = Counter(tokenize(text))
        return {t: c * self._idf(t) for t, c in counts.items()}


class EmbeddingTableEmbedder:
    """Mean-pooled token embeddings from a trained model's embedding table."""

    def __init__(self, table, vocab):
        self._table = table  # [vocab, d] array
        self._vocab = vocab

    def __call__(self, text: str) -> dict[str, float]:
        import numpy as np

        tokens = tokenize(text)
        if not tokens:
            return {}
        rows = [self._table[self._vocab.id_of(t)] for t in tokens]
        vec = np.mean(rows, axis=0)
        return {str(i): float(v) for i, v in enumerate(vec)}


def _cosine(u: dict[str, float], v: dict[str, float]) -> float:
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = sum(x * v[t] for t, x in u.items() if t in v)
    return dot / (nu * nv)


def personalization_scores(generated: str, history, embedder) -> tuple[float, float]:
    """(max, mean) cosine similarity against the clicked headlines."""
    history = list(history)
    if not history:
        raise ValueError("personalization requires a non-empty history")
    g = embedder(generated)
    sims = [_cosine(g, embedder(c)) for c in history]
    return max(sims), sum(sims) / len(sims)


# ---------------------------------------------------------------------------
# factual-consistency proxy
# ---------------------------------------------------------------------------


def _cased_tokens(text: str) -> list[str]:
    return _CASED_RE.findall(text)


def entity_spans(text: str) -> list[tuple[str, ...]]:
    """Maximal runs of capitalized tokens."""
    spans, run = [], []
    for tok in _cased_tokens(text):
        if tok[0].isupper():
            run.append(tok)
        elif run:
            spans.append(tuple(run))
            run = []
    if run:
        spans.append(tuple(run))
    return spans


def _contains_span(body_tokens: list[str], span: tuple[str, ...]) -> bool:
    n = len(span)
    return any(
        tuple(body_tokens[i : i + n]) == span
        for i in range(len(body_tokens) - n + 1)
    )


def fact_consistency_proxy(headline: str, body: str) -> float:
    """Fraction of the headline's extractable claims supported by the body.

    Claims are capitalized spans (supported when the span occurs verbatim
    in the body), numerals (exact occurrence) and negation markers
    (supported when the body negates within a 10-token window around a
    shared content word).  No claims means a vacuous 1.0.
    """
    body_tokens = _cased_tokens(body)
    body_lower = [t.lower() for t in body_tokens]
    head_tokens = _cased_tokens(headline)
    head_lower = [t.lower() for t in head_tokens]

    total = 0
    unsupported = 0

    for span in entity_spans(headline):
        total += 1
        if not _contains_span(body_tokens, span):
            unsupported += 1

    for tok in head_tokens:
        if _NUMERAL_RE.fullmatch(tok):
            total += 1
            if tok not in body_tokens:
                unsupported += 1

    negations = [t for t in head_lower if t in NEGATION_MARKERS]
    if negations:
        shared = {
            t
            for t in head_lower
            if t in body_lower and t not in _STOPWORDS and t not in NEGATION_MARKERS
        }
        neg_positions = [i for i, t in enumerate(body_lower) if t in NEGATION_MARKERS]
        supported = False
        for i, t in enumerate(body_lower):
            if t in shared and any(abs(i - j) <= 10 for j in neg_positions):
                supported = True
                break
        for _ in negations:
            total += 1
            if not supported:
                unsupported += 1

    if total == 0:
        return 1.0
    return 1.0 - unsupported / total


# ---------------------------------------------------------------------------
# run-level evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExampleScores:
    user_id: str
    news_id: str
    rouge1: float
    rouge2: float
    rougeL: float
    p_sim_max: float
    p_sim_avg: float
    fact_score: float


@dataclass
class EvalReport:
    examples: list[ExampleScores] = field(default_factory=list)

    METRICS = ("p_sim_avg", "p_sim_max", "fact_score", "rouge1", "rouge2", "rougeL")

    def aggregate(self, metric: str) -> float:
        """Mean over examples, scaled x100 for display."""
        if not self.examples:
            return 0.0
        return 100.0 * sum(getattr(e, metric) for e in self.examples) / len(self.examples)

    def aggregates(self) -> dict[str, float]:
        return {m: self.aggregate(m) for m in self.METRICS}

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.examples:
                fh.write(json.dumps(e.__dict__, sort_keys=True) + "\n")
            fh.write(json.dumps({"aggregate": self.aggregates()}, sort_keys=True) + "\n")


_TABLE_COLUMNS = (
    ("P_C(avg)", "p_sim_avg"),
    ("P_C(max)", "p_sim_max"),
    ("FactProxy", "fact_score"),
    ("ROUGE-1", "rouge1"),
    ("ROUGE-2", "rouge2"),
    ("ROUGE-L", "rougeL"),
)


def format_report_table(reports: dict[str, EvalReport]) -> str:
    """Plain-text results table, one row per run label."""
    header = ["Method"] + [name for name, _ in _TABLE_COLUMNS]
    rows = [header]
    for label, report in reports.items():
        agg = report.aggregates()
        rows.append([label] + [f"{agg[key]:.2f}" for _, key in _TABLE_COLUMNS])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def evaluate_run(predictions, references, corpus, click_logs, embedder=None) -> EvalReport:
    """Score predictions against references, bodies and click histories.

    ``predictions`` is a list of dicts {user_id, news_id, generated_headline,
    ...}; ``references`` maps (user_id, news_id) to the reference headline;
    ``corpus`` maps news_id to an article with a body; ``click_logs`` maps
    user_id to the list of clicked headlines.
    """
    if embedder is None:
        embedder = TfidfEmbedder(a.headline for a in corpus.values())
    missing = []
    for p in predictions:
        key = (p["user_id"], p["news_id"])
        if key not in references:
            missing.append(f"reference for {key}")
        if p["news_id"] not in corpus:
            missing.append(f"article {p['news_id']}")
        if p["user_id"] not in click_logs or not click_logs[p["user_id"]]:
            missing.append(f"history for {p['user_id']}")
    if missing:
        raise ValueError("unresolved evaluation inputs: " + "; ".join(sorted(set(missing))))

    report = EvalReport()
    for p in predictions:
        generated = p["generated_headline"]
        reference = references[(p["user_id"], p["news_id"])]
        body = corpus[p["news_id"]].body
        history = click_logs[p["user_id"]]
        p_max, p_avg = personalization_scores(generated, history, embedder)
        report.examples.append(
            ExampleScores(
                user_id=p["user_id"],
                news_id=p["news_id"],
                rouge1=rouge_n(generated, reference, 1),
                rouge2=rouge_n(generated, reference, 2),
                rougeL=rouge_l(generated, reference),
                p_sim_max=p_max,
                p_sim_avg=p_avg,
                fact_score=fact_consistency_proxy(generated, body),
            )
        )
    return report


def load_predictions(path) -> list[dict]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out
