"""Tokenisation, vocabulary and dialog-history construction."""
from __future__ import annotations

import json
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

from ..diffcore.layers import PAD_ID, UNK_ID

MAX_QUESTION_LEN = 20
MAX_OPTION_LEN = 20
MAX_HISTORY_LEN = 200

PAD, UNK = "<pad>", "<unk>"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and punctuation; punctuation marks are
    kept as separate tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = [PAD, UNK]
        self.stoi: dict[str, int] = {PAD: PAD_ID, UNK: UNK_ID}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token != token.lower():
            raise ValueError(f"vocabulary tokens must be lowercase: {token!r}")
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> Vocabulary:
        counts = Counter(tok for text in texts for tok in tokenize(text))
        # sort for a stable id assignment independent of text order
        keep = sorted(t for t, c in counts.items() if c >= min_count)
        return cls(keep)

    @classmethod
    def from_corpus(cls, corpus, min_count: int = 1) -> Vocabulary:
        texts = list(corpus.questions) + list(corpus.answers) + [d.caption for d in corpus.dialogs]
        return cls.build(texts, min_count)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.itos[2:]), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


def history_tokens(caption: Sequence, qa: Sequence[tuple[Sequence, Sequence]], t: int,
                   include_caption: bool = True, max_len: int = MAX_HISTORY_LEN) -> list:
    """Token-level history for round ``t`` (1-based): optional caption, then
    the question/answer pairs of rounds 1..t-1, keeping the last ``max_len``."""
    if not 1 <= t <= max(len(qa), 1) + 1:
        raise ValueError(f"round {t} out of range")
    out = list(caption) if include_caption else []
    for q, a in qa[:t - 1]:
        out.extend(q)
        out.extend(a)
    return out[-max_len:] if max_len and len(out) > max_len else out


def build_history(caption: str, rounds: Sequence[tuple[str, str]], t: int, include_caption: bool = True,
                  max_len: int = MAX_HISTORY_LEN) -> list[str]:
    """Tokenised history for round ``t`` from raw caption and (question, answer) strings."""
    qa = [(tokenize(q), tokenize(a)) for q, a in rounds]
    return history_tokens(tokenize(caption), qa, t, include_caption, max_len)
