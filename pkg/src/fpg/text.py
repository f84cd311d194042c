"""Word-level vocabulary and tokenization.

Headlines and bodies are plain word sequences: text is lowercased and split
on whitespace/punctuation boundaries (punctuation is treated as a
separator, so tokens are runs of ascii letters and digits).
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class TokenSeq:
    """Fixed-length id sequence; ids beyond ``true_length`` are PAD."""

    ids: tuple[int, ...]
    true_length: int

    def __post_init__(self):
        if not 0 <= self.true_length <= len(self.ids):
            raise ValueError("true_length out of range")
        if any(i != PAD for i in self.ids[self.true_length :]):
            raise ValueError("non-PAD id after true_length")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def keep_mask(self):
        """Boolean keep-flags over positions (True = real token)."""
        import numpy as np

        m = np.zeros(len(self.ids), dtype=bool)
        m[: self.true_length] = True
        return m


class Vocab:
    """Token/id bijection with four reserved ids (PAD, BOS, EOS, UNK)."""

    def __init__(self, tokens=()):
        self.id_to_token = list(RESERVED)
        self.token_to_id = {t: i for i, t in enumerate(RESERVED)}
        for t in tokens:
            if t in self.token_to_id:
                raise ValueError(f"duplicate token {t!r}")
            self.token_to_id[t] = len(self.id_to_token)
            self.id_to_token.append(t)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.id_to_token):
            raise ValueError(f"token id {idx} out of range")
        return self.id_to_token[idx]

    def save(self, path) -> None:
        Path(path).write_text(
            "".join(t + "\n" for t in self.id_to_token[len(RESERVED) :]),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)


def build_vocab(texts, min_freq: int = 1, max_size: int = 2000) -> Vocab:
    """Frequency-ranked vocabulary (ties broken lexicographically)."""
    if max_size <= len(RESERVED):
        raise ValueError("max_size must exceed the reserved ids")
    counts = Counter()
    for text in texts:
        counts.update(tokenize(text))
    ranked = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    return Vocab(ranked[: max_size - len(RESERVED)])


def encode(text: str, vocab: Vocab, max_len: int, add_eos: bool = False) -> TokenSeq:
    """Tokenize, map to ids (UNK for out-of-vocab), truncate and pad.

    When ``add_eos`` is set a slot is reserved so EOS always fits.
    """
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    ids = [vocab.id_of(t) for t in tokenize(text)]
    limit = max_len - 1 if add_eos else max_len
    ids = ids[:limit]
    if add_eos:
        ids.append(EOS)
    true_length = len(ids)
    ids.extend([PAD] * (max_len - true_length))
    return TokenSeq(tuple(ids), true_length)


def decode(seq, vocab: Vocab) -> str:
    """Joined tokens of a TokenSeq or raw id list; PAD/BOS/EOS dropped."""
    ids = seq.ids if isinstance(seq, TokenSeq) else seq
    return " ".join(
        vocab.token_of(i) for i in ids if i not in (PAD, BOS, EOS)
    )


_SURFACE_RE = re.compile(r"[A-Za-z0-9]+")


def casing_map(texts) -> dict[str, str]:
    """Most frequent surface form of each lowercased token.

    Generation works on lowercased ids; mapping tokens back to their usual
    corpus casing lets a generated headline state the same entity claims a
    written one would.
    """
    counts: dict[str, Counter] = {}
    for text in texts:
        for surface in _SURFACE_RE.findall(text):
            counts.setdefault(surface.lower(), Counter())[surface] += 1
    return {
        lower: min(forms.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        for lower, forms in counts.items()
    }


def apply_casing(text: str, mapping: dict[str, str]) -> str:
    return " ".join(mapping.get(tok, tok) for tok in text.split())
