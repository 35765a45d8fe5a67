"""Lexicon decoding and an additively smoothed n-gram model."""
from __future__ import annotations

import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

from .evalkit import levenshtein

UNK = "<unk>"


class EmptyLexiconError(ValueError):
    pass


def _rank(word: str):
    return (len(word), word)


@dataclass
class Lexicon:
    words: list[str]
    _by_length: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        seen = set()
        unique = []
        for w in self.words:
            if w not in seen:
                seen.add(w)
                unique.append(w)
        self.words = unique
        self._set = seen
        by_len = defaultdict(list)
        for w in sorted(unique, key=_rank):
            by_len[len(w)].append(w)
        self._by_length = dict(by_len)

    def __contains__(self, word) -> bool:
        return word in self._set

    def __len__(self) -> int:
        return len(self.words)

    @classmethod
    def load(cls, path) -> "Lexicon":
        with open(os.fspath(path), encoding="utf-8") as fh:
            return cls([line.rstrip("\r\n") for line in fh if line.rstrip("\r\n")])

    def save(self, path) -> None:
        with open(os.fspath(path), "w", encoding="utf-8") as fh:
            fh.writelines(w + "\n" for w in self.words)


def nearest_word_scan(pred: str, lex: Lexicon) -> tuple[str, int]:
    """Reference linear scan; ties go to the shorter word, then lexicographic order."""
    if len(lex) == 0:
        raise EmptyLexiconError("cannot decode against an empty lexicon")
    best = None
    for w in lex.words:
        key = (levenshtein(pred, w), len(w), w)
        if best is None or key < best:
            best = key
    return best[2], best[0]


def nearest_word(pred: str, lex: Lexicon) -> tuple[str, int]:
    """Closest lexicon word using the length-bucketed index.

    Buckets are visited by increasing |len(w) - len(pred)|; a bucket whose
    length gap already exceeds the best distance cannot contain a better word.
    """
    if len(lex) == 0:
        raise EmptyLexiconError("cannot decode against an empty lexicon")
    if pred in lex:
        return pred, 0
    n = len(pred)
    lengths = sorted(lex._by_length, key=lambda L: (abs(L - n), L))
    best = None
    for L in lengths:
        if best is not None and abs(L - n) > best[0]:
            break
        for w in lex._by_length[L]:
            key = (levenshtein(pred, w), len(w), w)
            if best is None or key < best:
                best = key
    return best[2], best[0]


def decode_with_lexicon(preds: Sequence[str], lex: Lexicon) -> tuple[list[str], list[int]]:
    words, dists = [], []
    for p in preds:
        w, d = nearest_word(p, lex)
        words.append(w)
        dists.append(d)
    return words, dists


@dataclass
class OovReport:
    words: list[str]
    count: int
    rate: float


def oov_report(lex: Lexicon, refs: Sequence[str]) -> OovReport:
    missing = [r for r in refs if r not in lex]
    unique = list(dict.fromkeys(missing))
    rate = len(missing) / len(refs) if refs else 0.0
    return OovReport(unique, len(unique), rate)


@dataclass
class NGramLM:
    order: int
    delta: float
    vocab: list
    counts: dict

    def __post_init__(self):
        self._vocab_set = set(self.vocab)
        self._totals = {ctx: sum(c.values()) for ctx, c in self.counts.items()}

    def _map(self, tok):
        return tok if tok in self._vocab_set else UNK

    def prob(self, context: Sequence[Hashable], nxt: Hashable) -> float:
        return ngram_prob(self, context, nxt)

    def distribution(self, context: Sequence[Hashable]) -> dict:
        return {v: ngram_prob(self, context, v) for v in self.vocab}


BOS = "<s>"


def ngram_train(corpus: Iterable[Sequence[Hashable]], n: int, delta: float) -> NGramLM:
    """Count (n-1)-token contexts and their continuations.

    Each sequence is left-padded with n-1 start markers; the vocabulary is the
    set of observed tokens plus an unknown token.
    """
    if n < 1:
        raise ValueError("order must be >= 1")
    if delta <= 0:
        raise ValueError("delta must be > 0")
    counts: dict = defaultdict(Counter)
    observed = []
    seen = set()
    empty = True
    for seq in corpus:
        seq = list(seq)
        if not seq:
            continue
        empty = False
        for tok in seq:
            if tok not in seen:
                seen.add(tok)
                observed.append(tok)
        padded = [BOS] * (n - 1) + seq
        for i in range(n - 1, len(padded)):
            ctx = tuple(padded[i - n + 1: i])
            counts[ctx][padded[i]] += 1
    if empty:
        raise ValueError("empty corpus")
    vocab = observed + ([UNK] if UNK not in seen else [])
    return NGramLM(n, float(delta), vocab, {k: dict(v) for k, v in counts.items()})


def ngram_prob(lm: NGramLM, context: Sequence[Hashable], nxt: Hashable) -> float:
    """(count + delta) / sum over the vocabulary of (count + delta); unseen contexts are uniform."""
    V = len(lm.vocab)
    ctx = tuple(context)[-(lm.order - 1):] if lm.order > 1 else ()
    ctx = tuple(c if c == BOS else lm._map(c) for c in ctx)
    if len(ctx) < lm.order - 1:
        ctx = (BOS,) * (lm.order - 1 - len(ctx)) + ctx
    table = lm.counts.get(ctx)
    if table is None:
        return 1.0 / V
    return (table.get(lm._map(nxt), 0) + lm.delta) / (lm._totals[ctx] + lm.delta * V)
