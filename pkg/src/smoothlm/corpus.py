"""Corpus loading, vocabulary construction, and substring / n-gram counting.

A corpus is a list of token-id sequences.  Sentinels (BOS, EOS) are never
stored inside sequences: BOS enters only as logical padding when histories
are formed, EOS only as the terminal event of each sequence.  All counting
conventions downstream (conditional distributions, smoothing, training
weights) are defined in terms of the tables built here.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

BOS_TOKEN = "<bos>"
EOS_TOKEN = "</s>"

History = tuple[int, ...]


class EmptyCorpusError(ValueError):
    """Raised when a corpus contains no usable (nonempty) lines."""


@dataclass(frozen=True)
class Vocabulary:
    """Symbol <-> integer-id map with reserved BOS and EOS sentinels.

    Symbol ids are contiguous from 0 in first-appearance order; the two
    sentinel ids follow (bos_id == n_symbols, eos_id == n_symbols + 1) and
    are never mapped to a corpus token.
    """

    symbols: tuple[str, ...]
    id_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for tok in self.symbols:
            if tok in (BOS_TOKEN, EOS_TOKEN):
                raise ValueError(f"token {tok!r} collides with a reserved sentinel rendering")
        mapping = {tok: i for i, tok in enumerate(self.symbols)}
        if len(mapping) != len(self.symbols):
            raise ValueError("vocabulary symbols must be distinct")
        object.__setattr__(self, "id_of", mapping)

    @property
    def n_symbols(self) -> int:
        return len(self.symbols)

    @property
    def bos_id(self) -> int:
        return len(self.symbols)

    @property
    def eos_id(self) -> int:
        return len(self.symbols) + 1

    @property
    def out_dim(self) -> int:
        """Size of the emission alphabet (symbols plus EOS, which is last)."""
        return len(self.symbols) + 1

    def out_index(self, symbol_id: int) -> int:
        """Map a symbol/EOS id to its index in emission-probability vectors."""
        if 0 <= symbol_id < self.n_symbols:
            return symbol_id
        if symbol_id == self.eos_id:
            return self.n_symbols
        raise ValueError(f"id {symbol_id} is not an emittable symbol")

    def id_at_out(self, out_index: int) -> int:
        if 0 <= out_index < self.n_symbols:
            return out_index
        if out_index == self.n_symbols:
            return self.eos_id
        raise ValueError(f"out index {out_index} out of range")

    def render(self, symbol_id: int) -> str:
        if symbol_id == self.bos_id:
            return BOS_TOKEN
        if symbol_id == self.eos_id:
            return EOS_TOKEN
        return self.symbols[symbol_id]

    def render_history(self, history: Sequence[int]) -> str:
        return " ".join(self.render(i) for i in history)

    def parse(self, token: str) -> int:
        if token == BOS_TOKEN:
            return self.bos_id
        if token == EOS_TOKEN:
            return self.eos_id
        return self.id_of[token]


@dataclass(frozen=True)
class Corpus:
    """Tokenized corpus: M sequences of non-sentinel token ids."""

    vocab: Vocabulary
    sequences: tuple[History, ...]
    skipped_lines: int = 0

    def __post_init__(self) -> None:
        if not self.sequences:
            raise EmptyCorpusError("empty corpus")
        for seq in self.sequences:
            for i in seq:
                if not 0 <= i < self.vocab.n_symbols:
                    raise ValueError(f"id {i} is not a non-sentinel vocabulary id")

    @property
    def M(self) -> int:
        return len(self.sequences)

    @property
    def total_emissions(self) -> int:
        """Number of emission events: every token plus one EOS per sequence."""
        return sum(len(s) + 1 for s in self.sequences)


@dataclass(frozen=True)
class CountTable:
    """Occurrence counts of (history, symbol) pairs at a fixed order n.

    gram_count[(h, x)] is the number of positions whose length-(n-1) padded
    history equals h and whose emitted symbol (a vocabulary id or EOS) is x;
    history_count[h] is the row total; count_of_counts[i] is the number of
    distinct positive-count grams occurring exactly i times.
    """

    order: int
    vocab: Vocabulary
    gram_count: dict[tuple[History, int], int]
    history_count: dict[History, int]
    count_of_counts: dict[int, int]
    total_tokens: int

    def histories(self) -> list[History]:
        return list(self.history_count.keys())

    def row(self, history: History) -> np.ndarray:
        """Dense count vector over the emission alphabet for one history."""
        vocab = self.vocab
        out = np.zeros(vocab.out_dim, dtype=np.int64)
        for j in range(vocab.out_dim):
            c = self.gram_count.get((history, vocab.id_at_out(j)))
            if c:
                out[j] = c
        return out


def build_vocabulary(lines: Iterable[str]) -> Vocabulary:
    """Build a vocabulary from raw text lines, tokens in first-appearance order."""
    seen: dict[str, None] = {}
    any_content = False
    for line in lines:
        toks = line.split()
        if toks:
            any_content = True
        for tok in toks:
            seen.setdefault(tok, None)
    if not any_content:
        raise EmptyCorpusError("empty corpus")
    return Vocabulary(symbols=tuple(seen.keys()))


def corpus_from_lines(lines: Iterable[str], vocab: Vocabulary | None = None) -> Corpus:
    """Tokenize lines (whitespace split) into a Corpus.

    Empty/whitespace-only lines are skipped and counted in `skipped_lines`.
    When `vocab` is given, every token must already be known to it.
    """
    lines = list(lines)
    if vocab is None:
        vocab = build_vocabulary(lines)
    sequences = []
    skipped = 0
    for line in lines:
        toks = line.split()
        if not toks:
            skipped += 1
            continue
        try:
            sequences.append(tuple(vocab.id_of[t] for t in toks))
        except KeyError as exc:
            raise ValueError(f"token {exc.args[0]!r} not present in vocabulary") from exc
    if skipped:
        log.warning("skipped %d empty line(s)", skipped)
    if not sequences:
        raise EmptyCorpusError("empty corpus")
    return Corpus(vocab=vocab, sequences=tuple(sequences), skipped_lines=skipped)


def load_corpus(path: str, vocab: Vocabulary | None = None) -> Corpus:
    """Load a UTF-8, one-sequence-per-line corpus file."""
    with open(path, encoding="utf-8") as f:
        # splitlines drops the terminal newline without creating a phantom
        # empty line; interior blank lines still reach the skip counter
        return corpus_from_lines(f.read().splitlines(), vocab=vocab)


def _check_query(corpus: Corpus, query: Sequence[int]) -> History:
    q = tuple(query)
    for i in q:
        if not 0 <= i < corpus.vocab.n_symbols:
            raise ValueError("query must not contain sentinel or out-of-range ids")
    return q


def count_substrings(corpus: Corpus, query: Sequence[int], with_eos: bool = False) -> int:
    """Occurrence count of `query` across the corpus.

    with_eos=False: number of times the query appears as a contiguous
    substring, summed over sequences; the empty query is counted once per
    position, i.e. len(seq)+1 times per sequence.  with_eos=True: number of
    sequences having the query as a suffix (the EOS-terminated count); the
    empty query then counts every sequence once.
    """
    q = _check_query(corpus, query)
    if with_eos:
        return sum(
            1 for seq in corpus.sequences
            if len(q) <= len(seq) and seq[len(seq) - len(q):] == q
        )
    if not q:
        return corpus.total_emissions
    k = len(q)
    total = 0
    for seq in corpus.sequences:
        total += sum(1 for t in range(len(seq) - k + 1) if seq[t:t + k] == q)
    return total


def count_ngrams(corpus: Corpus, order: int) -> CountTable:
    """Tally (history, symbol) pairs of the BOS-padded corpus at `order`.

    Each sequence is padded with order-1 leading BOS; every position emits
    its token, and one final position per sequence emits EOS.  Histories
    therefore contain BOS only as a contiguous prefix.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    vocab = corpus.vocab
    gram: Counter[tuple[History, int]] = Counter()
    hist: Counter[History] = Counter()
    pad = (vocab.bos_id,) * (order - 1)
    total = 0
    for seq in corpus.sequences:
        padded = pad + seq
        for t in range(len(seq) + 1):
            h = padded[t:t + order - 1]
            x = seq[t] if t < len(seq) else vocab.eos_id
            gram[(h, x)] += 1
            hist[h] += 1
            total += 1
    return CountTable(
        order=order,
        vocab=vocab,
        gram_count=dict(gram),
        history_count=dict(hist),
        count_of_counts=_tally_counts(gram),
        total_tokens=total,
    )


def _tally_counts(gram: dict[tuple[History, int], int]) -> dict[int, int]:
    out: Counter[int] = Counter()
    for c in gram.values():
        out[c] += 1
    return dict(out)


def counts_of_counts(table: CountTable) -> dict[int, int]:
    """r_i: number of distinct grams with positive count exactly i."""
    return dict(table.count_of_counts)


def zero_gram_count(table: CountTable) -> int:
    """r_0: unseen (history, symbol) cells over the observed histories."""
    return len(table.history_count) * table.vocab.out_dim - len(table.gram_count)


def marginalize(table: CountTable) -> CountTable:
    """Project an order-n table to order n-1 by dropping the oldest context symbol.

    Equivalent to recounting the corpus at order n-1, because BOS padding
    gives every position a full-length history at every order.
    """
    if table.order < 2:
        raise ValueError("cannot marginalize an order-1 table")
    gram: Counter[tuple[History, int]] = Counter()
    hist: Counter[History] = Counter()
    for (h, x), c in table.gram_count.items():
        gram[(h[1:], x)] += c
        hist[h[1:]] += c
    return CountTable(
        order=table.order - 1,
        vocab=table.vocab,
        gram_count=dict(gram),
        history_count=dict(hist),
        count_of_counts=_tally_counts(gram),
        total_tokens=table.total_tokens,
    )


def tables_down_to_unigram(table: CountTable) -> list[CountTable]:
    """All orders table.order, ..., 1, index k-1 holding the order-k table."""
    chain = [table]
    while chain[-1].order > 1:
        chain.append(marginalize(chain[-1]))
    chain.reverse()
    return chain


def merge_count_tables(tables: list[CountTable]) -> CountTable:
    """Merge per-shard tables by commutative addition (shard order irrelevant).

    Counting a corpus in shards and merging gives the same table as counting
    it whole, since every tallied quantity is a plain sum over positions.
    """
    if not tables:
        raise ValueError("nothing to merge")
    first = tables[0]
    for t in tables[1:]:
        if t.order != first.order or t.vocab.symbols != first.vocab.symbols:
            raise ValueError("shards disagree on order or vocabulary")
    gram: Counter[tuple[History, int]] = Counter()
    hist: Counter[History] = Counter()
    total = 0
    for t in tables:
        gram.update(t.gram_count)
        hist.update(t.history_count)
        total += t.total_tokens
    return CountTable(
        order=first.order,
        vocab=first.vocab,
        gram_count=dict(gram),
        history_count=dict(hist),
        count_of_counts=_tally_counts(gram),
        total_tokens=total,
    )


def write_count_table(table: CountTable, path: str) -> None:
    """Export as TSV `history<TAB>symbol<TAB>count`, lexicographically sorted."""
    vocab = table.vocab
    rows = [
        (vocab.render_history(h), vocab.render(x), c)
        for (h, x), c in table.gram_count.items()
    ]
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("history\tsymbol\tcount\n")
        for h, x, c in rows:
            f.write(f"{h}\t{x}\t{c}\n")


def read_count_table(path: str) -> CountTable:
    """Load a count TSV, rebuilding a vocabulary in file order."""
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != "history\tsymbol\tcount":
        raise ValueError(f"{path}: not a count table (bad header)")
    parsed = []
    tokens: dict[str, None] = {}
    order = None
    for ln in lines[1:]:
        if not ln:
            continue
        h_str, x_str, c_str = ln.split("\t")
        h_toks = h_str.split(" ") if h_str else []
        if order is None:
            order = len(h_toks) + 1
        elif order != len(h_toks) + 1:
            raise ValueError(f"{path}: inconsistent history lengths")
        for t in h_toks + [x_str]:
            if t not in (BOS_TOKEN, EOS_TOKEN):
                tokens.setdefault(t, None)
        parsed.append((h_toks, x_str, int(c_str)))
    if order is None:
        raise ValueError(f"{path}: no data rows")
    vocab = Vocabulary(symbols=tuple(tokens.keys()))
    gram: dict[tuple[History, int], int] = {}
    hist: Counter[History] = Counter()
    total = 0
    for h_toks, x_str, c in parsed:
        h = tuple(vocab.parse(t) for t in h_toks)
        key = (h, vocab.parse(x_str))
        if key in gram:
            raise ValueError(f"{path}: duplicate gram row")
        gram[key] = c
        hist[h] += c
        total += c
    return CountTable(
        order=order,
        vocab=vocab,
        gram_count=gram,
        history_count=dict(hist),
        count_of_counts=_tally_counts(gram),
        total_tokens=total,
    )
