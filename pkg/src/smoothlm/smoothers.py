"""Count smoothing: add-lambda, Good-Turing, Simple Good-Turing (Gale-Sampson),
Jelinek-Mercer interpolation, Katz backoff, and Kneser-Essen-Ney.

Every smoother maps a CountTable to a ConditionalLM whose rows cover the
observed histories, with a method-appropriate backstop for unseen histories.
Per-history vectors are normalized to sum to 1; methods whose native
normalization is global (Good-Turing) expose the pre-normalization form
separately for bookkeeping checks.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import CountTable, History, tables_down_to_unigram, zero_gram_count
from .ngram import ConditionalLM, uniform_backstop

log = logging.getLogger(__name__)

METHODS = (
    "add_lambda",
    "good_turing",
    "simple_good_turing",
    "jelinek_mercer",
    "katz",
    "kneser_essen_ney",
)

# CLI spellings accepted in addition to the canonical names.
METHOD_ALIASES = {
    "addlambda": "add_lambda",
    "gt": "good_turing",
    "sgt": "simple_good_turing",
    "jm": "jelinek_mercer",
    "ken": "kneser_essen_ney",
}


class KatzConfigError(ValueError):
    """The Katz discount denominator is non-positive for the chosen k."""


def canonical_method(name: str) -> str:
    name = name.strip().lower()
    name = METHOD_ALIASES.get(name, name)
    if name not in METHODS:
        raise ValueError(f"unknown smoothing method {name!r}")
    return name


def smooth(table: CountTable, method: str, params: dict | None = None) -> ConditionalLM:
    """Dispatch by method name; `params` uses the keys documented per method."""
    params = dict(params or {})
    method = canonical_method(method)
    if method == "add_lambda":
        return smooth_add_lambda(table, params.get("lambda", 1.0))
    if method == "good_turing":
        return smooth_good_turing(table)
    if method == "simple_good_turing":
        return smooth_simple_good_turing(table)
    if method == "jelinek_mercer":
        lambdas = params.get("lambdas")
        if lambdas is None:
            lambdas = [0.5] * table.order
        return smooth_jelinek_mercer(table, lambdas)
    if method == "katz":
        return smooth_katz(table, int(params.get("k", 5)))
    return smooth_kneser_essen_ney(table, float(params.get("D", 0.75)))


def default_params(method: str, table_order: int) -> dict:
    method = canonical_method(method)
    if method == "add_lambda":
        return {"lambda": 1.0}
    if method == "jelinek_mercer":
        return {"lambdas": [0.5] * table_order}
    if method == "katz":
        return {"k": 5}
    if method == "kneser_essen_ney":
        return {"D": 0.75}
    return {}


# ---------------------------------------------------------------------------
# add-lambda


def smooth_add_lambda(table: CountTable, lam: float) -> ConditionalLM:
    """(count + lam) / (total + (|Sigma|+1) lam) per history; unseen histories
    get the uniform limit."""
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    vocab = table.vocab
    denom_add = vocab.out_dim * lam
    rows = {}
    for h, tot in table.history_count.items():
        rows[h] = (table.row(h) + lam) / (tot + denom_add)
    return ConditionalLM(
        table.order, vocab, rows,
        backstop=uniform_backstop(vocab),
        method="add_lambda", params={"lambda": lam},
    )


# ---------------------------------------------------------------------------
# Good-Turing


def good_turing_adjusted_count(count: int, r: dict[int, int], r0: int) -> float:
    """Adjusted count (c+1) * r_{c+1} / r_c; zero-count cells use r_1 / r_0."""
    if count == 0:
        if r0 <= 0:
            return 0.0
        return r.get(1, 0) / r0
    rc = r.get(count, 0)
    if rc == 0:
        raise RuntimeError(f"count {count} observed but r_{count} == 0 (corrupt table)")
    return (count + 1) * r.get(count + 1, 0) / rc


def good_turing_global(table: CountTable) -> dict[tuple[History, int], float]:
    """Pre-normalization Good-Turing probabilities adjusted_count / total_tokens
    for every observed gram.  Grams whose successor count-of-counts is zero
    get probability zero (the classical defect)."""
    r = table.count_of_counts
    n = table.total_tokens
    return {
        key: good_turing_adjusted_count(c, r, 1) / n
        for key, c in table.gram_count.items()
    }


def _renormalized_rows(
    table: CountTable, weight_of_count, unseen_weight: float
) -> dict[History, np.ndarray]:
    """Build per-history rows from a count -> weight map plus an unseen-cell
    weight, renormalizing each history; an all-zero row falls back to uniform."""
    vocab = table.vocab
    rows = {}
    for h in table.history_count:
        counts = table.row(h)
        v = np.empty(vocab.out_dim)
        for j in range(vocab.out_dim):
            c = int(counts[j])
            v[j] = weight_of_count(c) if c > 0 else unseen_weight
        s = v.sum()
        if s <= 0.0:
            log.warning("history %s: all adjusted weights zero, using uniform",
                        vocab.render_history(h))
            v[:] = 1.0 / vocab.out_dim
        else:
            v /= s
        rows[h] = v
    return rows


def smooth_good_turing(table: CountTable) -> ConditionalLM:
    """Per-history renormalized Good-Turing conditionals.

    The globally normalized form (see good_turing_global) is not a proper
    per-history distribution, so each history's adjusted counts are rescaled
    to sum to 1.  Zeros survive wherever r_{c+1} == 0.
    """
    if not table.gram_count:
        raise ValueError("empty count table")
    r = table.count_of_counts
    r0 = zero_gram_count(table)
    rows = _renormalized_rows(
        table,
        lambda c: good_turing_adjusted_count(c, r, r0),
        good_turing_adjusted_count(0, r, r0),
    )
    return ConditionalLM(
        table.order, table.vocab, rows,
        backstop=uniform_backstop(table.vocab),
        method="good_turing", params={},
    )


# ---------------------------------------------------------------------------
# Simple Good-Turing (Gale & Sampson)


@dataclass(frozen=True)
class SgtFit:
    """Diagnostics of the Gale-Sampson procedure."""

    intercept: float          # a in log r-hat = a + b log c
    slope: float              # b
    switch_at: int            # smallest count using the regressed estimate
    smoothed_count: dict[int, float]
    p0: float                 # total unseen probability r_1 / N
    seen_scale: float         # (1 - p0) / sum(r_c * c*_c), probability per count unit


def sgt_fit(table: CountTable) -> SgtFit:
    """Run the Gale-Sampson procedure on a table's counts-of-counts.

    Z-transform r_c by averaging over neighbor gaps, fit log Z = a + b log c
    by least squares, then walk counts upward using the Turing estimate while
    it differs from the regressed one by more than 1.65 standard errors,
    switching permanently to the regressed estimate afterwards (or as soon as
    the Turing estimate is undefined).
    """
    r = table.count_of_counts
    cs = sorted(r)
    if len(cs) < 2:
        raise ValueError("need at least two distinct count values")
    logs_c = []
    logs_z = []
    for idx, c in enumerate(cs):
        lo = cs[idx - 1] if idx > 0 else 0
        hi = cs[idx + 1] if idx + 1 < len(cs) else 2 * c - lo
        logs_c.append(math.log(c))
        logs_z.append(math.log(r[c] / (0.5 * (hi - lo))))
    slope, intercept = np.polyfit(logs_c, logs_z, 1)
    slope = float(slope)
    intercept = float(intercept)
    if slope > -1.0:
        log.warning("SGT regression slope %.4f > -1; estimates may be unreliable", slope)

    def regressed(c: int) -> float:
        return (c + 1) * ((c + 1) / c) ** slope

    smoothed: dict[int, float] = {}
    switch_at = cs[-1] + 1
    use_turing = True
    for c in cs:
        lgt = regressed(c)
        if use_turing and (c + 1) in r:
            turing = (c + 1) * r[c + 1] / r[c]
            sd = (c + 1) / r[c] * math.sqrt(r[c + 1] * (1 + r[c + 1] / r[c]))
            if abs(turing - lgt) > 1.65 * sd:
                smoothed[c] = turing
                continue
        if use_turing:
            use_turing = False
            switch_at = c
        smoothed[c] = lgt

    n = table.total_tokens
    p0 = r.get(1, 0) / n
    seen_mass = sum(r[c] * smoothed[c] for c in cs)
    seen_scale = (1.0 - p0) / seen_mass if seen_mass > 0 else 0.0
    return SgtFit(intercept, slope, switch_at, smoothed, p0, seen_scale)


def smooth_simple_good_turing(table: CountTable) -> ConditionalLM:
    """Gale-Sampson smoothed conditionals, renormalized per history.

    Falls back to add-lambda (lambda = 1e-3) with a warning when the table
    has fewer than two distinct count values, where the regression is
    undefined.
    """
    try:
        fit = sgt_fit(table)
    except ValueError:
        log.warning("SGT needs >= 2 distinct count values; falling back to add-lambda 1e-3")
        lm = smooth_add_lambda(table, 1e-3)
        lm.method = "simple_good_turing"
        lm.params = {"fallback": "add_lambda", "lambda": 1e-3}
        return lm
    r0 = zero_gram_count(table)
    if r0 > 0:
        if fit.p0 > 0:
            unseen = fit.p0 / r0
        else:
            # no singleton grams: estimate the unseen weight from the regression
            unseen = math.exp(fit.intercept) / table.total_tokens / r0
    else:
        unseen = 0.0
    rows = _renormalized_rows(
        table,
        lambda c: fit.seen_scale * fit.smoothed_count[c],
        unseen,
    )
    return ConditionalLM(
        table.order, table.vocab, rows,
        backstop=uniform_backstop(table.vocab),
        method="simple_good_turing", params={},
    )


# ---------------------------------------------------------------------------
# Jelinek-Mercer


def smooth_jelinek_mercer(table: CountTable, lambdas: list[float]) -> ConditionalLM:
    """Recursive interpolation q~_k = lam_k * MLE_k + (1 - lam_k) * q~_{k-1},
    grounded at the uniform distribution over the emission alphabet.

    `lambdas[k-1]` weights the order-k maximum-likelihood term.  At a history
    unseen at level k the MLE term is undefined and its weight passes down,
    i.e. the level contributes its lower-order distribution unchanged.
    """
    if len(lambdas) != table.order:
        raise ValueError(f"need {table.order} interpolation weights, got {len(lambdas)}")
    for lam in lambdas:
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"interpolation weight {lam} outside [0, 1]")
    vocab = table.vocab
    chain = tables_down_to_unigram(table)
    uniform = np.full(vocab.out_dim, 1.0 / vocab.out_dim)

    levels: list[dict[History, np.ndarray]] = []
    for k, tab in enumerate(chain, start=1):
        lam = lambdas[k - 1]
        lower = levels[-1] if levels else None
        rows = {}
        for h, tot in tab.history_count.items():
            mle = tab.row(h) / float(tot)
            low = uniform if lower is None else lower[h[1:]]
            rows[h] = lam * mle + (1.0 - lam) * low
        levels.append(rows)

    def backstop(history: History) -> np.ndarray:
        # Descend until some suffix is an observed history at its level.
        for k in range(table.order - 1, 0, -1):
            suffix = history[len(history) - (k - 1):] if k > 1 else ()
            v = levels[k - 1].get(suffix)
            if v is not None:
                return v
        return uniform

    return ConditionalLM(
        table.order, vocab, levels[-1],
        backstop=backstop,
        method="jelinek_mercer", params={"lambdas": list(lambdas)},
    )


# ---------------------------------------------------------------------------
# Katz


def smooth_katz(table: CountTable, k: int) -> ConditionalLM:
    """Katz backoff: counts above k trusted, counts in (0, k] discounted with
    Good-Turing-derived factors, freed mass routed to unseen continuations in
    proportion to the next-lower-order Katz distribution.

    The recursion grounds at the order-1 maximum-likelihood distribution:
    every emittable symbol occurs in the corpus, so the unigram level has no
    zero-count event to receive redistributed mass and discounting there
    would be vacuous.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    vocab = table.vocab
    chain = tables_down_to_unigram(table)

    uni = chain[0]
    lower_rows: dict[History, np.ndarray] = {
        h: uni.row(h) / float(tot) for h, tot in uni.history_count.items()
    }
    levels = [lower_rows]

    for tab in chain[1:]:
        r = tab.count_of_counts
        r1 = r.get(1, 0)
        ratio = 0.0
        if r.get(k + 1, 0):
            if r1 == 0:
                raise KatzConfigError(f"k={k}: r_1 == 0 at order {tab.order}, discounts undefined")
            ratio = (k + 1) * r[k + 1] / r1
        if ratio >= 1.0:
            raise KatzConfigError(
                f"k={k}: discount denominator 1 - (k+1) r_(k+1)/r_1 = {1 - ratio:.4g} <= 0"
            )

        def discount(c: int) -> float:
            if c > k:
                return 1.0
            gt_ratio = good_turing_adjusted_count(c, r, 1) / c
            d = (gt_ratio - ratio) / (1.0 - ratio)
            if d < 0.0:
                log.warning("order %d: discount for count %d is %.4g, clamping to 0",
                            tab.order, c, d)
                return 0.0
            return d

        lower = levels[-1]
        rows = {}
        for h, tot in tab.history_count.items():
            counts = tab.row(h)
            seen = counts > 0
            v = np.zeros(vocab.out_dim)
            for j in np.flatnonzero(seen):
                c = int(counts[j])
                v[j] = discount(c) * c / tot
            leftover = 1.0 - v.sum()
            low = lower[h[1:]]
            unseen_mass = float(low[~seen].sum())
            if leftover > 0.0 and unseen_mass > 0.0:
                v[~seen] = leftover * low[~seen] / unseen_mass
            elif leftover != 0.0:
                if leftover < -1e-12:
                    log.warning("order %d history %s: discounted mass exceeds 1, renormalizing",
                                tab.order, vocab.render_history(h))
                s = v.sum()
                if s <= 0.0:
                    log.warning("order %d history %s: no mass survived discounting, "
                                "using lower-order row", tab.order, vocab.render_history(h))
                    v = low.copy()
                else:
                    v /= s
            rows[h] = v
        levels.append(rows)

    def backstop(history: History) -> np.ndarray:
        for k_ord in range(table.order - 1, 0, -1):
            suffix = history[len(history) - (k_ord - 1):] if k_ord > 1 else ()
            v = levels[k_ord - 1].get(suffix)
            if v is not None:
                return v
        return np.full(vocab.out_dim, 1.0 / vocab.out_dim)

    return ConditionalLM(
        table.order, vocab, levels[-1],
        backstop=backstop,
        method="katz", params={"k": k},
    )


# ---------------------------------------------------------------------------
# Kneser-Essen-Ney


@dataclass(frozen=True)
class TypeCountTable:
    """Distinct-context indicators of a count table.

    cont[(h, x)] == 1 iff the gram was observed; left_marginal[x] counts the
    distinct histories preceding x, right_marginal[h] the distinct
    continuations of h, and grand_total the number of distinct observed grams.
    """

    order: int
    cont: dict[tuple[History, int], int]
    left_marginal: dict[int, int]
    right_marginal: dict[History, int]
    grand_total: int


def build_type_counts(table: CountTable) -> TypeCountTable:
    cont = {key: 1 for key in table.gram_count}
    left: Counter[int] = Counter()
    right: Counter[History] = Counter()
    for (h, x) in cont:
        left[x] += 1
        right[h] += 1
    return TypeCountTable(
        order=table.order,
        cont=cont,
        left_marginal=dict(left),
        right_marginal=dict(right),
        grand_total=len(cont),
    )


def smooth_kneser_essen_ney(table: CountTable, D: float = 0.75) -> ConditionalLM:
    """Absolute discounting with type-count continuation probabilities.

    The unigram level is built from bigram type counts (how many distinct
    histories precede each symbol) rather than raw frequencies; higher
    orders discount observed counts by D and add the freed mass times the
    lower-order distribution, which makes every row sum to 1 exactly.
    """
    if not 0.0 < D < 1.0:
        raise ValueError(f"D must lie in (0, 1), got {D}")
    if table.order < 2:
        raise ValueError("Kneser-Essen-Ney needs an order >= 2 table")
    vocab = table.vocab
    chain = tables_down_to_unigram(table)

    bigram_types = build_type_counts(chain[1])
    q1 = np.zeros(vocab.out_dim)
    for x, c in bigram_types.left_marginal.items():
        q1[vocab.out_index(x)] = c / bigram_types.grand_total

    levels: list[dict[History, np.ndarray]] = [{(): q1}]
    for tab in chain[1:]:
        types = build_type_counts(tab)
        lower = levels[-1]
        rows = {}
        for h, tot in tab.history_count.items():
            counts = tab.row(h).astype(float)
            low = lower[h[1:]]
            distinct = types.right_marginal[h]
            rows[h] = (np.maximum(counts - D, 0.0) + D * distinct * low) / tot
        levels.append(rows)

    def backstop(history: History) -> np.ndarray:
        for k_ord in range(table.order - 1, 0, -1):
            suffix = history[len(history) - (k_ord - 1):] if k_ord > 1 else ()
            v = levels[k_ord - 1].get(suffix)
            if v is not None:
                return v
        return q1

    return ConditionalLM(
        table.order, vocab, levels[-1],
        backstop=backstop,
        method="kneser_essen_ney", params={"D": D},
    )
