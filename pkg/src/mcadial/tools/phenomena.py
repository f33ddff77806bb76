"""Dialog-phenomena heuristics: pronoun counts, pleonastic 'it', ellipsis.

Pronouns come from a fixed closed-class lexicon rather than a tagger, so
counts are reproducible but not identical to tagger output.  A question's
"it" is pleonastic when the same question contains a weather word.  A
question is elliptical when the root of its constituency parse is not a
sentence label.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from ..data.corpus import DialogCorpus
from ..data.text import tokenize

WEATHER_WORDS = frozenset({"rainy", "sunny", "daytime", "day", "night"})
SENTENCE_LABELS = frozenset({"S", "SQ", "SBARQ", "SINV"})
_WRAPPER_LABELS = frozenset({"", "ROOT", "TOP"})

PERSONAL = ("i", "me", "my", "mine", "myself", "you", "your", "yours", "yourself", "yourselves",
            "he", "him", "his", "himself", "she", "her", "hers", "herself", "it", "its", "itself",
            "we", "us", "our", "ours", "ourselves", "they", "them", "their", "theirs", "themselves")
DEMONSTRATIVE = ("this", "that", "these", "those")
# taggers miss 'other' used as a pronoun, so it is counted explicitly
PRONOUNS = frozenset(PERSONAL + DEMONSTRATIVE + ("other", "others"))


def count_pronouns(tokens, weather_lexicon=WEATHER_WORDS) -> tuple[int, int]:
    """(total, non_pleonastic) pronoun counts for one lowercased question."""
    tokens = list(tokens)
    total = sum(t in PRONOUNS for t in tokens)
    pleonastic = tokens.count("it") if any(t in weather_lexicon for t in tokens) else 0
    return total, total - pleonastic


class ParseError(ValueError):
    pass


@dataclass
class ParseTree:
    label: str
    children: list = field(default_factory=list)   # ParseTree or leaf str

    def leaves(self) -> list[str]:
        out = []
        for c in self.children:
            out.extend(c.leaves() if isinstance(c, ParseTree) else [c])
        return out

    def to_bracketed(self) -> str:
        inner = " ".join(c.to_bracketed() if isinstance(c, ParseTree) else c for c in self.children)
        return f"({self.label} {inner})" if inner else f"({self.label})"


def parse_tree(text: str) -> ParseTree:
    """Read one bracketed tree such as ``(SQ (VBZ is) (NP (PRP it)))``."""
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()
    if not tokens or tokens[0] != "(":
        raise ParseError(f"tree must start with '(': {text!r}")
    stack: list[ParseTree] = []
    root = None
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == "(":
            if root is not None:
                raise ParseError(f"text after the closing bracket: {text!r}")
            label = ""
            if i + 1 < len(tokens) and tokens[i + 1] not in "()":
                label = tokens[i + 1]
                i += 1
            node = ParseTree(label)
            if stack:
                stack[-1].children.append(node)
            stack.append(node)
        elif tok == ")":
            if not stack:
                raise ParseError(f"unbalanced ')': {text!r}")
            node = stack.pop()
            if not stack:
                root = node
        else:
            if not stack or root is not None:
                raise ParseError(f"leaf outside brackets: {text!r}")
            stack[-1].children.append(tok)
        i += 1
    if stack or root is None:
        raise ParseError(f"unbalanced '(': {text!r}")
    return root


def load_parses(path: str | Path) -> list[ParseTree]:
    """One tree per non-empty line."""
    trees = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    trees.append(parse_tree(line))
                except ParseError as e:
                    raise ParseError(f"line {n}: {e}") from None
    return trees


def root_label(tree: ParseTree) -> str:
    # unwrap "(ROOT (S ...))" and "( (S ...))" style wrappers
    while tree.label in _WRAPPER_LABELS and len(tree.children) == 1 and isinstance(tree.children[0], ParseTree):
        tree = tree.children[0]
    return tree.label


def detect_ellipsis(tree: ParseTree) -> bool:
    return root_label(tree) not in SENTENCE_LABELS


@dataclass
class QuestionRecord:
    pronouns: int
    non_pleonastic: int
    ellipsis: bool | None = None


@dataclass
class PhenomenaReport:
    dialogs: list[list[QuestionRecord]]
    pronoun_hist: dict[int, int]
    non_pleonastic_hist: dict[int, int]
    ellipsis_hist: dict[int, int] | None

    @property
    def num_dialogs(self) -> int:
        return len(self.dialogs)

    def dialog_totals(self) -> list[tuple[int, int, int | None]]:
        """Per dialog: (pronouns, non-pleonastic pronouns, elliptical questions)."""
        out = []
        for qs in self.dialogs:
            ell = None if self.ellipsis_hist is None else sum(bool(q.ellipsis) for q in qs)
            out.append((sum(q.pronouns for q in qs), sum(q.non_pleonastic for q in qs), ell))
        return out

    def to_dict(self) -> dict:
        keys = lambda h: {str(k): v for k, v in h.items()}  # noqa: E731
        d = {"num_dialogs": self.num_dialogs, "pronouns": keys(self.pronoun_hist),
             "non_pleonastic": keys(self.non_pleonastic_hist)}
        if self.ellipsis_hist is not None:
            d["ellipsis"] = keys(self.ellipsis_hist)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        lines = ["pronouns per dialog  all  non-pleonastic"]
        for k in sorted(set(self.pronoun_hist) | set(self.non_pleonastic_hist)):
            lines.append(f"{k:>19d}  {self.pronoun_hist.get(k, 0):>3d}  {self.non_pleonastic_hist.get(k, 0):>14d}")
        if self.ellipsis_hist is not None:
            lines.append("elliptical questions per dialog  dialogs")
            for k in sorted(self.ellipsis_hist):
                lines.append(f"{k:>31d}  {self.ellipsis_hist[k]:>7d}")
        return "\n".join(lines)


def phenomena_report(corpus: DialogCorpus, parses: list[ParseTree] | None = None,
                     weather_lexicon=WEATHER_WORDS) -> PhenomenaReport:
    """Per-dialog pronoun and ellipsis histograms.

    ``parses`` holds one tree per entry of ``corpus.questions`` (the question
    pool, in order); without it the ellipsis histogram is omitted.
    """
    if parses is not None and len(parses) != len(corpus.questions):
        raise ValueError(f"{len(parses)} parses for {len(corpus.questions)} questions")
    per_question = [count_pronouns(tokenize(q), weather_lexicon) for q in corpus.questions]
    elliptic = None if parses is None else [detect_ellipsis(t) for t in parses]
    dialogs = []
    for d in corpus.dialogs:
        dialogs.append([QuestionRecord(*per_question[r.question],
                                       None if elliptic is None else elliptic[r.question]) for r in d.rounds])
    report = PhenomenaReport(dialogs, {}, {}, None if parses is None else {})
    totals = report.dialog_totals()
    report.pronoun_hist = dict(sorted(Counter(t[0] for t in totals).items()))
    report.non_pleonastic_hist = dict(sorted(Counter(t[1] for t in totals).items()))
    if parses is not None:
        report.ellipsis_hist = dict(sorted(Counter(t[2] for t in totals).items()))
    return report
