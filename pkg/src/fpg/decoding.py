"""Beam-search headline generation.

Hypotheses grow left to right under the model's next-token distribution.
At every step the ``beam_width`` best expansions by cumulative log
probability are kept; expansions that emit EOS (or hit the length cap)
are terminal and move to the candidate pool.  The final ranking divides
the cumulative log probability by length**length_penalty, with ties broken
toward the lexicographically smaller token-id sequence, so decoding is
fully deterministic.  PAD, BOS and UNK are never proposed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import FpgModel
from .text import BOS, EOS, PAD, UNK, TokenSeq

FORBIDDEN_TOKENS = (PAD, BOS, UNK)


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]  # generated tokens, EOS included when finished
    logprob: float
    finished: bool

    def score(self, length_penalty: float) -> float:
        return self.logprob / (max(len(self.ids), 1) ** length_penalty)


@dataclass
class Beam:
    """Current-step hypotheses, best first by cumulative log probability."""

    width: int
    hypotheses: list[Hypothesis] = field(default_factory=list)

    @classmethod
    def select(cls, width: int, expansions) -> "Beam":
        best = sorted(expansions, key=lambda h: (-h.logprob, h.ids))[:width]
        return cls(width, best)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    return logits - m - np.log(np.exp(logits - m).sum())


def beam_search(
    model: FpgModel,
    body: TokenSeq,
    history=None,
    beam_width: int = 3,
    max_len: int | None = None,
    length_penalty: float = 1.0,
    use_history: bool = True,
) -> tuple[TokenSeq, float]:
    """Best headline for one (body, history) pair.

    Returns the winning TokenSeq (padded to ``max_len``) and its
    length-normalized log probability.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be at least 1")
    cfg = model.config
    if max_len is None:
        max_len = cfg.T
    if use_history:
        state = model.encode(body, history)
        enc_out, body_keep, u = state.X_p_enc, state.body_keep, state.u
    else:
        enc_out, body_keep = model.encode_plain(body)
        u = None

    def rank(h: Hypothesis):
        return -h.score(length_penalty), h.ids

    alive = [Hypothesis((), 0.0, False)]
    pool: list[Hypothesis] = []
    for _ in range(max_len):
        if not alive:
            break
        expansions: list[Hypothesis] = []
        for hyp in alive:
            logits = model.decoder_logits((BOS,) + hyp.ids, enc_out, body_keep, u)
            logp = _log_softmax(logits.data[-1])
            for tok in range(cfg.vocab_size):
                if tok in FORBIDDEN_TOKENS:
                    continue
                expansions.append(
                    Hypothesis(hyp.ids + (tok,), hyp.logprob + float(logp[tok]), tok == EOS)
                )
        alive = []
        for hyp in Beam.select(beam_width, expansions).hypotheses:
            if hyp.finished or len(hyp.ids) >= max_len:
                pool.append(hyp)
            else:
                alive.append(hyp)

    best = min(pool or alive, key=rank)
    ids = list(best.ids)
    true_length = len(ids)
    ids.extend([PAD] * (max_len - true_length))
    return TokenSeq(tuple(ids), true_length), best.score(length_penalty)


def write_predictions(path, records) -> None:
    """Line-delimited {user_id, news_id, generated_headline, score}."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
