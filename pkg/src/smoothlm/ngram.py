"""Conditional n-gram language models and their evaluation.

Hosts the empirical conditional (count-ratio) model, prefix statistics,
log-likelihood/perplexity evaluation, exhaustive string-distribution
enumeration for small alphabets, and KL/cross-entropy helpers shared by the
decomposition and verification code.  Natural log throughout.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import Corpus, CountTable, History, Vocabulary

PROB_ATOL = 1e-9


class UnseenHistoryError(KeyError):
    """Lookup of a history with no stored distribution and no backstop rule."""


class EnumerationCapError(RuntimeError):
    """String enumeration would exceed the configured node cap."""


def uniform_backstop(vocab: Vocabulary) -> Callable[[History], np.ndarray]:
    u = np.full(vocab.out_dim, 1.0 / vocab.out_dim)
    return lambda history: u


class ConditionalLM:
    """Map from each length-(n-1) history to a probability vector over
    the emission alphabet (symbols in id order, EOS last).

    `backstop` decides what an unseen history gets: None raises
    UnseenHistoryError (the maximum-likelihood convention, where the
    conditional is 0/0), otherwise it is a callable history -> vector.
    """

    def __init__(
        self,
        order: int,
        vocab: Vocabulary,
        table: dict[History, np.ndarray],
        backstop: Callable[[History], np.ndarray] | None = None,
        method: str = "",
        params: dict | None = None,
        validate: bool = True,
    ) -> None:
        self.order = order
        self.vocab = vocab
        self.table = {h: np.asarray(v, dtype=float) for h, v in table.items()}
        self.backstop = backstop
        self.method = method
        self.params = dict(params) if params else {}
        if validate:
            self._validate()

    def _validate(self) -> None:
        bos = self.vocab.bos_id
        for h, v in self.table.items():
            if len(h) != self.order - 1:
                raise ValueError(f"history {h} has length {len(h)}, expected {self.order - 1}")
            non_bos_seen = False
            for i in h:
                if i == bos:
                    if non_bos_seen:
                        raise ValueError(f"history {h}: BOS must form a contiguous prefix")
                else:
                    non_bos_seen = True
            if v.shape != (self.vocab.out_dim,):
                raise ValueError(f"history {h}: wrong vector length {v.shape}")
            if np.any(v < 0):
                raise ValueError(f"history {h}: negative probability")
            s = float(v.sum())
            if abs(s - 1.0) > PROB_ATOL:
                raise ValueError(f"history {h}: probabilities sum to {s!r}, not 1")

    def histories(self) -> list[History]:
        return list(self.table.keys())

    def conditional(self, history: Sequence[int]) -> np.ndarray:
        h = tuple(history)
        v = self.table.get(h)
        if v is not None:
            return v
        if self.backstop is None:
            raise UnseenHistoryError(h)
        return self.backstop(h)

    def prob(self, history: Sequence[int], symbol_id: int) -> float:
        return float(self.conditional(history)[self.vocab.out_index(symbol_id)])


def padded_history(vocab: Vocabulary, order: int, prefix: Sequence[int]) -> History:
    """The length-(order-1) BOS-padded history preceding the next position."""
    if order == 1:
        return ()
    padded = (vocab.bos_id,) * (order - 1) + tuple(prefix)
    return padded[-(order - 1):]


def empirical_conditional(table: CountTable) -> ConditionalLM:
    """Count-ratio conditional model; unseen histories are left undefined."""
    rows = {}
    for h, tot in table.history_count.items():
        rows[h] = table.row(h).astype(float) / float(tot)
    return ConditionalLM(table.order, table.vocab, rows, backstop=None, method="empirical")


@dataclass(frozen=True)
class PrefixProbability:
    """Prefix-start counts of a corpus: numerator[x] sequences start with x.

    prob(x) = numerator[x] / M.  `terminal[x]` counts sequences exactly equal
    to x, which yields the EOS entry of the prefix-conditional distribution.
    """

    vocab: Vocabulary
    M: int
    numerator: dict[History, int]
    terminal: dict[History, int] = field(repr=False)

    def prob(self, prefix: Sequence[int]) -> float:
        return self.numerator.get(tuple(prefix), 0) / self.M

    def prefixes(self) -> list[History]:
        return list(self.numerator.keys())

    def conditional(self, prefix: Sequence[int]) -> np.ndarray:
        """Next-emission distribution among sequences that start with `prefix`."""
        p = tuple(prefix)
        starts = self.numerator.get(p, 0)
        if starts == 0:
            raise UnseenHistoryError(p)
        v = np.zeros(self.vocab.out_dim)
        for j in range(self.vocab.n_symbols):
            ext = self.numerator.get(p + (j,), 0)
            if ext:
                v[j] = ext / starts
        v[self.vocab.n_symbols] = self.terminal.get(p, 0) / starts
        return v


def empirical_prefix(corpus: Corpus) -> PrefixProbability:
    starts: Counter[History] = Counter()
    terminal: Counter[History] = Counter()
    for seq in corpus.sequences:
        for t in range(len(seq) + 1):
            starts[seq[:t]] += 1
        terminal[seq] += 1
    return PrefixProbability(
        vocab=corpus.vocab, M=corpus.M, numerator=dict(starts), terminal=dict(terminal)
    )


def string_logprob(lm: ConditionalLM, sequence: Sequence[int]) -> float:
    """Natural-log probability of a sequence (its tokens then EOS); -inf if
    any factor vanishes."""
    seq = tuple(sequence)
    vocab = lm.vocab
    total = 0.0
    for t in range(len(seq) + 1):
        h = padded_history(vocab, lm.order, seq[:t])
        x = seq[t] if t < len(seq) else vocab.eos_id
        p = lm.prob(h, x)
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
    return total


def perplexity(lm: ConditionalLM, corpus: Corpus) -> float:
    """exp of per-emission negative log-likelihood (one EOS per sequence)."""
    total = 0.0
    for seq in corpus.sequences:
        lp = string_logprob(lm, seq)
        if lp == -math.inf:
            return math.inf
        total += lp
    return math.exp(-total / corpus.total_emissions)


def lm_string_distribution(
    lm: ConditionalLM, max_len: int, cap: int = 1_000_000
) -> tuple[dict[History, float], float]:
    """Exact product probabilities of every string of length <= max_len.

    Returns ({string: probability} over positive-probability strings,
    tail_mass = 1 - total enumerated mass).  Zero-probability branches are
    pruned.  Raises EnumerationCapError when more than `cap` prefixes would
    be expanded.
    """
    if max_len < 0:
        raise ValueError("max_len must be >= 0")
    vocab = lm.vocab
    eos_j = vocab.n_symbols
    strings: dict[History, float] = {}
    frontier: list[tuple[History, float]] = [((), 1.0)]
    visited = 0
    for length in range(max_len + 1):
        next_frontier: list[tuple[History, float]] = []
        for prefix, mass in frontier:
            visited += 1
            if visited > cap:
                raise EnumerationCapError(f"more than {cap} prefixes at length {length}")
            v = lm.conditional(padded_history(vocab, lm.order, prefix))
            p_end = mass * float(v[eos_j])
            if p_end > 0.0:
                strings[prefix] = p_end
            if length == max_len:
                continue
            for j in range(vocab.n_symbols):
                p = mass * float(v[j])
                if p > 0.0:
                    next_frontier.append((prefix + (j,), p))
        frontier = next_frontier
    tail = 1.0 - math.fsum(strings.values())
    return strings, tail


def cross_entropy(p: np.ndarray, q: np.ndarray) -> float:
    """H(p, q) = -sum p log q with 0 log 0 := 0; +inf when q vanishes on p's support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    mask = p > 0.0
    if np.any(q[mask] <= 0.0):
        return math.inf
    return float(-np.dot(p[mask], np.log(q[mask])))


def entropy(p: np.ndarray) -> float:
    return cross_entropy(p, p)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    ce = cross_entropy(p, q)
    if ce == math.inf:
        return math.inf
    return ce - entropy(p)


def write_conditional_lm(lm: ConditionalLM, path: str) -> None:
    """TSV export: `history<TAB>symbol<TAB>probability` (12 significant digits),
    preceded by a `# method=... params=...` comment; rows sorted as rendered."""
    vocab = lm.vocab
    rows = []
    for h, v in lm.table.items():
        rh = vocab.render_history(h)
        for j in range(vocab.out_dim):
            rows.append((rh, vocab.render(vocab.id_at_out(j)), float(v[j])))
    rows.sort(key=lambda r: (r[0], r[1]))
    params_json = json.dumps(lm.params, sort_keys=True, separators=(",", ":"))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# method={lm.method or 'unknown'} params={params_json}\n")
        f.write("history\tsymbol\tprobability\n")
        for rh, rx, p in rows:
            f.write(f"{rh}\t{rx}\t{p:.12g}\n")


def read_conditional_lm(path: str, backstop: str = "error") -> ConditionalLM:
    """Load an LM TSV.  `backstop` is 'error' or 'uniform' for unseen histories."""
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("# method="):
        raise ValueError(f"{path}: missing method header")
    head = lines[0][2:]
    method, _, params_part = head.partition(" params=")
    method = method.removeprefix("method=")
    params = json.loads(params_part) if params_part else {}
    if len(lines) < 2 or lines[1] != "history\tsymbol\tprobability":
        raise ValueError(f"{path}: bad column header")
    parsed: list[tuple[list[str], str, float]] = []
    tokens: dict[str, None] = {}
    order = None
    for ln in lines[2:]:
        if not ln:
            continue
        h_str, x_str, p_str = ln.split("\t")
        h_toks = h_str.split(" ") if h_str else []
        if order is None:
            order = len(h_toks) + 1
        elif order != len(h_toks) + 1:
            raise ValueError(f"{path}: inconsistent history lengths")
        for t in h_toks + [x_str]:
            if t not in ("<bos>", "</s>"):
                tokens.setdefault(t, None)
        parsed.append((h_toks, x_str, float(p_str)))
    if order is None:
        raise ValueError(f"{path}: no data rows")
    vocab = Vocabulary(symbols=tuple(tokens.keys()))
    table: dict[History, np.ndarray] = {}
    for h_toks, x_str, p in parsed:
        h = tuple(vocab.parse(t) for t in h_toks)
        if h not in table:
            table[h] = np.zeros(vocab.out_dim)
        table[h][vocab.out_index(vocab.parse(x_str))] = p
    bs = uniform_backstop(vocab) if backstop == "uniform" else None
    return ConditionalLM(order, vocab, table, backstop=bs, method=method, params=params)
