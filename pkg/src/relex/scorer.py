"""Pairwise relation scoring and the token-level NER head.

Every encoded token is projected through separate head and tail MLPs;
a bi-affine contraction against one learned d x d matrix per relation
yields the full N x L x N affinity tensor in one shot, with no per-pair
re-encoding. Entity-pair scores pool the affinity cells of all mention
token pairs with LogSumExp per relation, which keeps gradients dense
while approximating the max over mention pairs.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor


def init_scorer_params(d: int, num_relations: int, num_ner_classes: int,
                       rng: np.random.Generator, ps: ParamSet | None = None,
                       prefix: str = "score.", dtype=np.float32) -> ParamSet:
    """Head/tail MLPs (hidden width d), the relation tensor and the NER map."""
    ps = ps if ps is not None else ParamSet()

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    for role in ("head", "tail"):
        ps.add(f"{prefix}{role}.w0", uniform(d, (d, d)))
        ps.add(f"{prefix}{role}.b0", np.zeros(d, dtype=dtype))
        ps.add(f"{prefix}{role}.w1", uniform(d, (d, d)))
        ps.add(f"{prefix}{role}.b1", np.zeros(d, dtype=dtype))
    ps.add(prefix + "relations", uniform(d, (d, num_relations, d)))
    ps.add(prefix + "ner", uniform(d, (d, num_ner_classes)))
    return ps


def _mlp(states: Tensor, params: ParamSet, name: str) -> Tensor:
    hidden = ad.relu(ad.add(ad.matmul(states, params[name + ".w0"]),
                            params[name + ".b0"]))
    return ad.add(ad.matmul(hidden, params[name + ".w1"]), params[name + ".b1"])


def project_head_tail(states: Tensor, params: ParamSet,
                      prefix: str = "score.") -> tuple[Tensor, Tensor]:
    """Two separate MLP views of each token, for its head and tail roles."""
    return _mlp(states, params, prefix + "head"), _mlp(states, params, prefix + "tail")


def biaffine_scores(e_head: Tensor, e_tail: Tensor, relations: Tensor) -> Tensor:
    """Full N x L x N affinity tensor A[i, l, j] = e_head[i] . L[l] . e_tail[j].

    One batched contraction: (N, d) @ (d, L*d) -> (N, L, d) @ (d, N).
    """
    n, d = e_head.shape
    d2, n_rel, d3 = relations.shape
    if d != d2 or d != d3 or e_tail.shape[1] != d:
        raise ValueError(f"biaffine_scores: width mismatch, states {d} vs "
                         f"relation tensor {relations.shape}")
    mixed = ad.matmul(e_head, ad.reshape(relations, (d, n_rel * d)))
    mixed = ad.reshape(mixed, (n, n_rel, d))
    return ad.matmul(mixed, ad.transpose(e_tail, (1, 0)))


def pool_entity_pair(affinity: Tensor, head_tokens, tail_tokens) -> Tensor:
    """LogSumExp over every (head token, tail token) cell, per relation.

    ``head_tokens`` and ``tail_tokens`` are the token indices inside any
    mention of the head/tail entity. Cells are gathered in sorted (i, j)
    order so pooling is bit-stable under mention reordering.
    """
    head_tokens = sorted(set(int(i) for i in head_tokens))
    tail_tokens = sorted(set(int(j) for j in tail_tokens))
    if not head_tokens or not tail_tokens:
        raise ValueError("pool_entity_pair: entity has no mention tokens")
    n = affinity.shape[0]
    if head_tokens[-1] >= n or tail_tokens[-1] >= n or head_tokens[0] < 0 or tail_tokens[0] < 0:
        raise ValueError("pool_entity_pair: token index out of range")
    flat = ad.reshape(ad.transpose(affinity, (0, 2, 1)), (n * n, affinity.shape[1]))
    cells = [i * n + j for i in head_tokens for j in tail_tokens]
    picked = ad.gather_rows(flat, np.asarray(cells, dtype=np.int64))
    return ad.logsumexp(picked, axis=0)


def ner_logits(states: Tensor, params: ParamSet, prefix: str = "score.") -> Tensor:
    """Per-token class scores for the BIO-augmented entity labels."""
    return ad.matmul(states, params[prefix + "ner"])


# ---------------------------------------------------------------------------
# prediction records


class PairPrediction:
    """Pooled scores and class probabilities for one entity pair."""

    __slots__ = ("doc_id", "head", "tail", "scores", "probs")

    def __init__(self, doc_id: str, head: str, tail: str,
                 scores: dict[str, float], probs: dict[str, float]):
        self.doc_id = doc_id
        self.head = head
        self.tail = tail
        self.scores = scores
        self.probs = probs

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.doc_id, self.head, self.tail)

    @classmethod
    def from_scores(cls, doc_id, head, tail, labels: list[str],
                    pooled: np.ndarray) -> "PairPrediction":
        shifted = pooled - pooled.max()
        probs = np.exp(shifted) / np.exp(shifted).sum()
        return cls(doc_id, head, tail,
                   scores={l: float(s) for l, s in zip(labels, pooled)},
                   probs={l: float(p) for l, p in zip(labels, probs)})


def write_predictions(path, predictions: list[PairPrediction]) -> None:
    """Line-delimited dump, one row per (pair, relation), tab separated."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("doc_id\thead\ttail\trelation\tpooled_score\tprobability\n")
        for p in sorted(predictions, key=lambda p: p.key):
            for rel in sorted(p.scores):
                fh.write(f"{p.doc_id}\t{p.head}\t{p.tail}\t{rel}\t"
                         f"{p.scores[rel]!r}\t{p.probs[rel]!r}\n")


def read_predictions(path) -> list[PairPrediction]:
    rows: dict[tuple, PairPrediction] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("doc_id\t"):
            raise ValueError(f"{path}: not a prediction dump")
        for line in fh:
            doc_id, head, tail, rel, score, prob = line.rstrip("\n").split("\t")
            key = (doc_id, head, tail)
            if key not in rows:
                rows[key] = PairPrediction(doc_id, head, tail, {}, {})
            rows[key].scores[rel] = float(score)
            rows[key].probs[rel] = float(prob)
    return list(rows.values())
