"""Signed decomposition of a smoothed distribution against an empirical one.

Any smoothed conditional p~ relates to its empirical counterpart p through

    p~ = p + Z+ * p_plus - Z- * p_minus,

where p_plus carries the added mass (normalized), p_minus the removed mass,
and Z+ == Z- is their common scale (the total-variation distance between p
and p~).  Aggregating one decomposition per observed history, weighted by
that history's occurrence count, yields an additive regularizer that can be
attached to any differentiable conditional model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .corpus import CountTable, History
from .ngram import ConditionalLM, cross_entropy, entropy, kl_divergence

RECON_ATOL = 1e-12


class CoverageError(ValueError):
    """The smoothed model is missing histories present in the empirical one."""


@dataclass(frozen=True)
class SignedDecomposition:
    """Difference parts of (empirical, smoothed) with disjoint supports.

    z_plus == z_minus up to float rounding; both are half the L1 distance
    between the inputs.  When the scale is zero, both vectors are zero.
    """

    p_plus: np.ndarray
    p_minus: np.ndarray
    z_plus: float
    z_minus: float


def signed_decompose(empirical: np.ndarray, smoothed: np.ndarray) -> SignedDecomposition:
    """Split smoothed - empirical into normalized positive and negative parts."""
    p = np.asarray(empirical, dtype=float)
    q = np.asarray(smoothed, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    for name, v in (("empirical", p), ("smoothed", q)):
        if np.any(v < 0):
            raise ValueError(f"{name} vector has negative entries")
        s = float(v.sum())
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"{name} vector sums to {s!r}, not 1")
    diff = q - p
    pos = np.maximum(diff, 0.0)
    neg = np.maximum(-diff, 0.0)
    z_plus = float(pos.sum())
    z_minus = float(neg.sum())
    p_plus = pos / z_plus if z_plus > 0 else np.zeros_like(pos)
    p_minus = neg / z_minus if z_minus > 0 else np.zeros_like(neg)
    return SignedDecomposition(p_plus=p_plus, p_minus=p_minus, z_plus=z_plus, z_minus=z_minus)


@dataclass(frozen=True)
class RegularizerBundle:
    """Per-history signed decompositions with occurrence-count weights."""

    order: int
    per_history: dict[History, SignedDecomposition]
    weights: dict[History, int]
    gamma_plus: float
    gamma_minus: float

    @property
    def total_weight(self) -> int:
        return sum(self.weights.values())


def build_regularizer(
    empirical_lm: ConditionalLM,
    smoothed_lm: ConditionalLM,
    table: CountTable,
    gamma_plus: float,
    gamma_minus: float,
) -> RegularizerBundle:
    """Decompose smoothed against empirical on every observed history."""
    if empirical_lm.order != smoothed_lm.order:
        raise ValueError("order mismatch between empirical and smoothed models")
    if gamma_plus < 0 or gamma_minus < 0:
        raise ValueError("gamma weights must be nonnegative")
    missing = [h for h in empirical_lm.table if h not in smoothed_lm.table]
    if missing:
        rendered = ", ".join(table.vocab.render_history(h) for h in missing[:5])
        raise CoverageError(f"smoothed model missing {len(missing)} histories: {rendered}")
    per_history = {}
    weights = {}
    for h, emp in empirical_lm.table.items():
        per_history[h] = signed_decompose(emp, smoothed_lm.table[h])
        weights[h] = table.history_count[h]
    return RegularizerBundle(
        order=empirical_lm.order,
        per_history=per_history,
        weights=weights,
        gamma_plus=gamma_plus,
        gamma_minus=gamma_minus,
    )


def _resolve(q, history: History) -> np.ndarray:
    if callable(q):
        return np.asarray(q(history), dtype=float)
    return np.asarray(q[history], dtype=float)


def regularizer_loss(
    bundle: RegularizerBundle,
    q: Mapping[History, np.ndarray] | Callable[[History], np.ndarray],
) -> float:
    """Weighted additive regularizer value

        sum_h w(h)/W * [g+ Z+(h) KL(p_plus || q(.|h)) + g- Z-(h) KL(p_minus || q(.|h))]

    Returns inf (no exception) when q vanishes where a difference part has mass.
    """
    total = 0.0
    W = bundle.total_weight
    for h, dec in bundle.per_history.items():
        if dec.z_plus == 0.0 and dec.z_minus == 0.0:
            continue
        qv = _resolve(q, h)
        term = 0.0
        if bundle.gamma_plus and dec.z_plus > 0:
            term += bundle.gamma_plus * dec.z_plus * kl_divergence(dec.p_plus, qv)
        if bundle.gamma_minus and dec.z_minus > 0:
            term += bundle.gamma_minus * dec.z_minus * kl_divergence(dec.p_minus, qv)
        if math.isinf(term):
            return math.inf
        total += bundle.weights[h] / W * term
    return total


def exact_bracket(
    empirical: np.ndarray, smoothed: np.ndarray, q: np.ndarray
) -> tuple[float, float]:
    """Both sides of the q-invariance identity for one distribution triple.

    Returns (KL(p~ || q), KL(p || q) + Z+ KL(p_plus || q) - Z- KL(p_minus || q)).
    The difference of the two is independent of q; their q-dependent parts
    agree exactly by linearity of cross-entropy:

        H(p~, q) == H(p, q) + Z+ H(p_plus, q) - Z- H(p_minus, q).
    """
    dec = signed_decompose(empirical, smoothed)
    lhs = kl_divergence(np.asarray(smoothed, float), q)
    rhs = kl_divergence(np.asarray(empirical, float), q)
    if dec.z_plus > 0:
        rhs += dec.z_plus * kl_divergence(dec.p_plus, q)
    if dec.z_minus > 0:
        rhs -= dec.z_minus * kl_divergence(dec.p_minus, q)
    return lhs, rhs


def cross_entropy_sides(
    empirical: np.ndarray, smoothed: np.ndarray, q: np.ndarray
) -> tuple[float, float]:
    """(H(p~, q), H(p, q) + Z+ H(p_plus, q) - Z- H(p_minus, q)); equal exactly."""
    dec = signed_decompose(empirical, smoothed)
    lhs = cross_entropy(np.asarray(smoothed, float), q)
    rhs = cross_entropy(np.asarray(empirical, float), q)
    if dec.z_plus > 0:
        rhs += dec.z_plus * cross_entropy(dec.p_plus, q)
    if dec.z_minus > 0:
        rhs -= dec.z_minus * cross_entropy(dec.p_minus, q)
    return lhs, rhs


def bracket_constant(empirical: np.ndarray, smoothed: np.ndarray) -> float:
    """The q-independent value of KL(p~||q) minus the signed KL bracket:
    H(p) + Z+ H(p_plus) - Z- H(p_minus) - H(p~)."""
    dec = signed_decompose(empirical, smoothed)
    c = entropy(np.asarray(empirical, float)) - entropy(np.asarray(smoothed, float))
    if dec.z_plus > 0:
        c += dec.z_plus * entropy(dec.p_plus)
    if dec.z_minus > 0:
        c -= dec.z_minus * entropy(dec.p_minus)
    return c


def write_decomposition(bundle: RegularizerBundle, vocab, path: str) -> None:
    """TSV export: history, symbol, p_plus, p_minus, z_plus, z_minus per row."""
    rows = []
    for h, dec in bundle.per_history.items():
        rh = vocab.render_history(h)
        for j in range(vocab.out_dim):
            rows.append((
                rh,
                vocab.render(vocab.id_at_out(j)),
                float(dec.p_plus[j]),
                float(dec.p_minus[j]),
                dec.z_plus,
                dec.z_minus,
            ))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("history\tsymbol\tp_plus\tp_minus\tz_plus\tz_minus\n")
        for rh, rx, pp, pm, zp, zm in rows:
            f.write(f"{rh}\t{rx}\t{pp:.12g}\t{pm:.12g}\t{zp:.12g}\t{zm:.12g}\n")
