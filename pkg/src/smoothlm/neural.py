"""Differentiable conditional models and a manual-gradient training loop.

Two architectures: a tabular softmax model (one logit row per history) and a
small fixed-context feedforward net.  Training is full-batch gradient
descent with hand-derived gradients, under one of four objectives:

  mle               mean over emissions of -log q(x | h)
  label_smoothing   mle + gamma_ls/N * sum over occupied histories of
                    KL(uniform || q(.|h))
  smoothed_target   sum_h #(h)/N * KL(p~(.|h) || q(.|h)) for a smoothed p~
  split_regularizer mle + sum_h #(h)/N * [ g+ Z+ KL(p_plus || q(.|h))
                                          - g- Z- KL(p_minus || q(.|h)) ]

The split objective carries the minus sign on the p_minus term so that at
g+ = g- = 1 it equals the smoothed-target objective up to an additive
constant; with g- <= 1 every -log q coefficient stays nonnegative, keeping
the loss bounded below.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Corpus, CountTable, History, Vocabulary, count_ngrams
from .decompose import RegularizerBundle, build_regularizer
from .ngram import entropy as _entropy
from .ngram import empirical_conditional, padded_history

OBJECTIVES = ("mle", "label_smoothing", "smoothed_target", "split_regularizer")


class TrainingError(RuntimeError):
    """Non-finite loss encountered during training."""


@dataclass
class TrainConfig:
    objective: str = "mle"
    method: str | None = None          # smoother behind smoothed_target / split
    method_params: dict | None = None
    gamma_ls: float = 0.0
    gamma_plus: float = 0.0
    gamma_minus: float = 0.0
    lr: float = 0.5
    epochs: int = 200
    patience: int = 20
    seed: int = 0
    init_scale: float = 0.1

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.objective == "label_smoothing" and self.gamma_ls < 0:
            raise ValueError("gamma_ls must be >= 0")


@dataclass
class TrainMetrics:
    train_loss: list[float] = field(default_factory=list)
    heldout_ppl: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    epochs_run: int = 0


def _check_history(vocab: Vocabulary, order: int, history: Sequence[int]) -> History:
    h = tuple(history)
    if len(h) != order - 1:
        raise ValueError(f"history length {len(h)}, expected {order - 1}")
    for i in h:
        if not (0 <= i < vocab.n_symbols or i == vocab.bos_id):
            raise ValueError(f"id {i} is not a symbol or BOS")
    return h


def _log_softmax(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise (log q, q) with max subtraction."""
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    return (z - m) - np.log(s), e / s


class TabularSoftmaxLM:
    """One unconstrained logit row per known history; q(.|h) = softmax(row).

    Histories outside the table get the uniform distribution (the logits of
    a never-updated row).
    """

    architecture = "tabular"

    def __init__(self, order: int, vocab: Vocabulary, histories: Sequence[History]):
        self.order = order
        self.vocab = vocab
        self.history_index = {
            _check_history(vocab, order, h): i for i, h in enumerate(histories)
        }
        self.logits = np.zeros((len(self.history_index), vocab.out_dim))

    @classmethod
    def for_table(cls, table: CountTable) -> "TabularSoftmaxLM":
        return cls(table.order, table.vocab, sorted(table.history_count))

    @classmethod
    def for_corpus(cls, corpus: Corpus, order: int) -> "TabularSoftmaxLM":
        return cls.for_table(count_ngrams(corpus, order))

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {"logits": self.logits}

    def forward(self, history: Sequence[int]) -> np.ndarray:
        h = _check_history(self.vocab, self.order, history)
        i = self.history_index.get(h)
        if i is None:
            return np.full(self.vocab.out_dim, 1.0 / self.vocab.out_dim)
        _, q = _log_softmax(self.logits[i:i + 1])
        return q[0]

    def conditional_table(self) -> dict[History, np.ndarray]:
        _, q = _log_softmax(self.logits)
        return {h: q[i] for h, i in self.history_index.items()}

    def _rows_for(self, hists: list[History]) -> np.ndarray:
        idx = []
        for h in hists:
            i = self.history_index.get(h)
            if i is None:
                raise ValueError(f"tabular model has no row for history {h}")
            idx.append(i)
        return np.asarray(idx, dtype=int)

    def batch_loss_grads(self, hists, alpha):
        idx = self._rows_for(hists)
        logq, q = _log_softmax(self.logits[idx])
        loss = float(-(alpha * logq).sum())
        delta = alpha.sum(axis=1, keepdims=True) * q - alpha
        g = np.zeros_like(self.logits)
        np.add.at(g, idx, delta)
        return loss, {"logits": g}


class FeedForwardLM:
    """Fixed-context feedforward LM.

    forward(h) = softmax(tanh(concat(E[h]) @ W1 + b1) @ W2 + b2).  The
    embedding table has one row per vocabulary id including BOS (the EOS row
    exists but is never indexed, since EOS cannot occur in a history).
    """

    architecture = "feedforward"

    def __init__(
        self,
        order: int,
        vocab: Vocabulary,
        embed_dim: int,
        hidden_dim: int,
        seed: int = 0,
        init_scale: float = 0.1,
    ):
        if order < 2:
            raise ValueError("feedforward model needs order >= 2 (nonempty context)")
        self.order = order
        self.vocab = vocab
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        rng = np.random.default_rng(seed)
        d_in = (order - 1) * embed_dim

        def init(*shape):
            return rng.uniform(-init_scale, init_scale, size=shape)

        self.E = init(vocab.n_symbols + 2, embed_dim)
        self.W1 = init(d_in, hidden_dim)
        self.b1 = init(hidden_dim)
        self.W2 = init(hidden_dim, vocab.out_dim)
        self.b2 = init(vocab.out_dim)

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {"E": self.E, "W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def _embed(self, idx: np.ndarray) -> np.ndarray:
        n = idx.shape[0]
        return self.E[idx].reshape(n, (self.order - 1) * self.embed_dim)

    def forward(self, history: Sequence[int]) -> np.ndarray:
        h = _check_history(self.vocab, self.order, history)
        idx = np.asarray([h], dtype=int)
        e = self._embed(idx)
        a = np.tanh(e @ self.W1 + self.b1)
        _, q = _log_softmax(a @ self.W2 + self.b2)
        return q[0]

    def batch_loss_grads(self, hists, alpha):
        idx = np.asarray(hists, dtype=int).reshape(len(hists), self.order - 1)
        e = self._embed(idx)
        a = np.tanh(e @ self.W1 + self.b1)
        logq, q = _log_softmax(a @ self.W2 + self.b2)
        loss = float(-(alpha * logq).sum())
        delta2 = alpha.sum(axis=1, keepdims=True) * q - alpha
        gW2 = a.T @ delta2
        gb2 = delta2.sum(axis=0)
        dz1 = (delta2 @ self.W2.T) * (1.0 - a * a)
        gW1 = e.T @ dz1
        gb1 = dz1.sum(axis=0)
        de = dz1 @ self.W1.T
        gE = np.zeros_like(self.E)
        d = self.embed_dim
        for j in range(self.order - 1):
            np.add.at(gE, idx[:, j], de[:, j * d:(j + 1) * d])
        return loss, {"E": gE, "W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


# ---------------------------------------------------------------------------
# objectives


def batch_from_corpus(corpus: Corpus, order: int) -> list[tuple[History, int]]:
    """All (padded history, emitted symbol id) pairs of the corpus."""
    out = []
    for seq in corpus.sequences:
        for t in range(len(seq) + 1):
            h = padded_history(corpus.vocab, order, seq[:t])
            x = seq[t] if t < len(seq) else corpus.vocab.eos_id
            out.append((h, x))
    return out


def _aggregate(batch, vocab: Vocabulary) -> tuple[list[History], np.ndarray]:
    counts: Counter[tuple[History, int]] = Counter()
    for h, x in batch:
        counts[(tuple(h), vocab.out_index(x))] += 1
    hists = sorted({h for h, _ in counts})
    pos = {h: i for i, h in enumerate(hists)}
    C = np.zeros((len(hists), vocab.out_dim))
    for (h, j), c in counts.items():
        C[pos[h], j] = c
    return hists, C


def _objective_weights(
    hists: list[History],
    C: np.ndarray,
    config: TrainConfig,
    bundle: RegularizerBundle | None,
    out_dim: int,
) -> tuple[np.ndarray, float]:
    """Per-history coefficient vectors alpha and the theta-independent constant
    such that loss = sum_h alpha_h . (-log q(.|h)) + const."""
    N = C.sum()
    alpha = C / N
    const = 0.0
    if config.objective == "mle":
        return alpha, const
    if config.objective == "label_smoothing":
        g = config.gamma_ls
        alpha = alpha + g / (N * out_dim)
        const = -len(hists) * (g / N) * math.log(out_dim)
        return alpha, const
    if bundle is None:
        raise ValueError(f"objective {config.objective} needs a regularizer bundle")
    if config.objective == "split_regularizer" and bundle.gamma_minus > 1.0:
        raise ValueError(
            "gamma_minus > 1 makes the split objective unbounded below "
            "(the -log q coefficient of an overrepresented symbol turns negative)"
        )
    alpha = alpha.copy()
    for i, h in enumerate(hists):
        dec = bundle.per_history.get(h)
        if dec is None:
            raise ValueError(f"bundle does not cover history {h}")
        w = bundle.weights[h] / N
        if config.objective == "smoothed_target":
            target = C[i] / C[i].sum()
            if dec.z_plus > 0:
                target = target + dec.z_plus * dec.p_plus
            if dec.z_minus > 0:
                target = target - dec.z_minus * dec.p_minus
            target = np.maximum(target, 0.0)
            alpha[i] = w * target
            const -= w * _entropy(target)
        else:
            gp, gm = bundle.gamma_plus, bundle.gamma_minus
            if dec.z_plus > 0:
                alpha[i] += w * gp * dec.z_plus * dec.p_plus
                const -= w * gp * dec.z_plus * _entropy(dec.p_plus)
            if dec.z_minus > 0:
                alpha[i] -= w * gm * dec.z_minus * dec.p_minus
                const += w * gm * dec.z_minus * _entropy(dec.p_minus)
    return alpha, const


def loss_and_grad(
    model,
    batch: list[tuple[Sequence[int], int]],
    config: TrainConfig,
    bundle: RegularizerBundle | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Objective value and exact analytic gradients on one (full) batch."""
    if not batch:
        raise ValueError("batch must be nonempty")
    config.validate()
    hists, C = _aggregate(batch, model.vocab)
    return _loss_and_grad_counts(model, hists, C, config, bundle)


def _loss_and_grad_counts(model, hists, C, config, bundle):
    alpha, const = _objective_weights(hists, C, config, bundle, model.vocab.out_dim)
    loss, grads = model.batch_loss_grads(hists, alpha)
    return loss + const, grads


def model_perplexity(model, corpus: Corpus) -> float:
    """Perplexity of a differentiable model on a corpus (softmax rows are
    strictly positive, so this is always finite barring overflow)."""
    hists, C = _aggregate(batch_from_corpus(corpus, model.order), corpus.vocab)
    nll = 0.0
    for i, h in enumerate(hists):
        q = model.forward(h)
        mask = C[i] > 0
        nll -= float(np.dot(C[i][mask], np.log(q[mask])))
    return math.exp(nll / C.sum())


def make_bundle_for(
    corpus: Corpus, order: int, config: TrainConfig
) -> tuple[CountTable, RegularizerBundle]:
    """Build the regularizer bundle a config's objective asks for."""
    if config.method is None:
        raise ValueError(f"objective {config.objective} needs a smoothing method")
    from .smoothers import smooth  # local import to avoid a cycle

    table = count_ngrams(corpus, order)
    smoothed = smooth(table, config.method, config.method_params)
    bundle = build_regularizer(
        empirical_conditional(table), smoothed, table,
        config.gamma_plus, config.gamma_minus,
    )
    return table, bundle


def train(
    model,
    corpus: Corpus,
    config: TrainConfig,
    bundle: RegularizerBundle | None = None,
    heldout: Corpus | None = None,
) -> tuple[object, TrainMetrics]:
    """Full-batch gradient descent; returns the best-held-out checkpoint.

    Without a held-out corpus all `epochs` steps run and the final state is
    returned.  With one, training stops once held-out perplexity has not
    improved for `patience` consecutive epochs, and the parameters of the
    best epoch are restored.
    """
    config.validate()
    if config.objective in ("smoothed_target", "split_regularizer") and bundle is None:
        _, bundle = make_bundle_for(corpus, model.order, config)
    hists, C = _aggregate(batch_from_corpus(corpus, model.order), corpus.vocab)
    return _train_counts(model, hists, C, config, bundle, heldout)


def train_smoothed_target(model, smoothed_lm, table: CountTable, config: TrainConfig):
    """Fit the model to a smoothed conditional table by gradient descent."""
    cfg = TrainConfig(**{**config.__dict__, "objective": "smoothed_target"})
    bundle = build_regularizer(empirical_conditional(table), smoothed_lm, table, 1.0, 1.0)
    hists = sorted(table.history_count)
    C = np.stack([table.row(h).astype(float) for h in hists])
    model, _ = _train_counts(model, hists, C, cfg, bundle, None)
    return model


def _train_counts(model, hists, C, config, bundle, heldout):
    metrics = TrainMetrics()
    params = model.param_arrays()
    heldout_agg = None
    if heldout is not None:
        heldout_agg = _aggregate(batch_from_corpus(heldout, model.order), heldout.vocab)
    best_ppl = math.inf
    best_params = None
    stale = 0
    for epoch in range(config.epochs):
        loss, grads = _loss_and_grad_counts(model, hists, C, config, bundle)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss!r} at epoch {epoch}")
        for name, arr in params.items():
            arr -= config.lr * grads[name]
        metrics.train_loss.append(loss)
        metrics.epochs_run = epoch + 1
        if heldout_agg is not None:
            ppl = _agg_perplexity(model, heldout_agg)
            metrics.heldout_ppl.append(ppl)
            if ppl < best_ppl:
                best_ppl = ppl
                best_params = {k: v.copy() for k, v in params.items()}
                metrics.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if best_params is not None:
        for name, arr in params.items():
            arr[...] = best_params[name]
    return model, metrics


def _agg_perplexity(model, agg) -> float:
    hists, C = agg
    nll = 0.0
    for i, h in enumerate(hists):
        q = model.forward(h)
        mask = C[i] > 0
        nll -= float(np.dot(C[i][mask], np.log(q[mask])))
    return math.exp(nll / C.sum())


# ---------------------------------------------------------------------------
# serialization


def save_model(model, path: str) -> None:
    """JSON snapshot; floats round-trip exactly (shortest-repr encoding)."""
    doc = {
        "format_version": 1,
        "architecture": model.architecture,
        "order": model.order,
        "vocab": list(model.vocab.symbols),
        "params": {k: v.tolist() for k, v in model.param_arrays().items()},
    }
    if model.architecture == "tabular":
        doc["dims"] = {"histories": len(model.history_index), "out": model.vocab.out_dim}
        doc["histories"] = [
            model.vocab.render_history(h)
            for h, _ in sorted(model.history_index.items(), key=lambda kv: kv[1])
        ]
    else:
        doc["dims"] = {"embed": model.embed_dim, "hidden": model.hidden_dim}
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_model(path: str):
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != 1:
        raise ValueError(f"{path}: unsupported model format {doc.get('format_version')!r}")
    vocab = Vocabulary(symbols=tuple(doc["vocab"]))
    order = doc["order"]
    if doc["architecture"] == "tabular":
        hists = [
            tuple(vocab.parse(t) for t in (s.split(" ") if s else []))
            for s in doc["histories"]
        ]
        model = TabularSoftmaxLM(order, vocab, hists)
        model.logits[...] = np.asarray(doc["params"]["logits"], dtype=float)
        return model
    if doc["architecture"] == "feedforward":
        model = FeedForwardLM(
            order, vocab, doc["dims"]["embed"], doc["dims"]["hidden"], seed=0
        )
        for k, arr in model.param_arrays().items():
            arr[...] = np.asarray(doc["params"][k], dtype=float)
        return model
    raise ValueError(f"{path}: unknown architecture {doc['architecture']!r}")
