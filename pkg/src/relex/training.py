"""Joint maximum-likelihood training of the relation and NER objectives.

One optimizer step: sample an all-positive or all-NULL minibatch with
probability 0.5, encode each distinct document once (with token-to-UNK
word dropout), pool the sampled entity pairs, and minimize

    relation_nll + ner_weight * ner_nll.

Gradients are clipped to a global norm, then perturbed with annealed
Gaussian noise of variance eta / (1 + t)^0.55 before the Adam update.
Everything is driven by one seeded generator on a single worker, so a
fixed seed gives a bit-identical trajectory.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import scorer
from .autodiff import ParamSet, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Document, NULL_LABEL
from .encoder import EncoderConfig
from .metrics import classify, gold_pair_labels, prf1, tune_thresholds

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Training hit non-finite values repeatedly and cannot continue."""


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 32
    adam_eps: float = 1e-4
    adam_beta1: float = 0.1
    adam_beta2: float = 0.9
    clip_norm: float = 10.0
    noise_eta: float = 0.1
    noise_decay: float = 0.55
    noise_after_clip: bool = True
    keep_word: float = 0.85
    keep_interior: float = 0.95
    keep_final: float = 0.35
    ner_weight: float = 1.0     # lambda on the NER objective
    pos_prob: float = 0.5
    patience: int = 5
    eval_every: int = 0         # 0 = one epoch-equivalent (examples/batch)
    max_steps: int = 2000
    resplit_dev: int = 0        # >0: merge train+dev and re-split this many
    seed: int = 0

    def __post_init__(self):
        for name in ("keep_word", "keep_interior", "keep_final", "pos_prob"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# model bundle


@dataclass
class Model:
    enc_cfg: EncoderConfig
    params: ParamSet
    labels: list[str]        # relation classes, NULL at index 0
    ner_classes: list[str]   # BIO tag inventory, O first
    unk_id: int = 0

    def label_index(self) -> dict[str, int]:
        return {l: i for i, l in enumerate(self.labels)}

    def ner_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.ner_classes)}


def ner_class_inventory(entity_types: list[str]) -> list[str]:
    classes = ["O"]
    for t in sorted(entity_types):
        classes.extend([f"B-{t}", f"I-{t}"])
    return classes


def build_model(enc_cfg: EncoderConfig, labels: list[str], ner_classes: list[str],
                seed: int, unk_id: int = 0) -> Model:
    if labels[0] != NULL_LABEL:
        raise ValueError("label space must put NULL first")
    rng = np.random.default_rng(seed)
    params = enc.init_encoder_params(enc_cfg, rng)
    scorer.init_scorer_params(enc_cfg.d, len(labels), len(ner_classes), rng,
                              ps=params, dtype=enc_cfg.np_dtype)
    return Model(enc_cfg=enc_cfg, params=params, labels=labels,
                 ner_classes=ner_classes, unk_id=unk_id)


def forward_document(model: Model, token_ids, mask=None,
                     rng: np.random.Generator | None = None,
                     train: bool = False) -> tuple[Tensor, Tensor, Tensor]:
    """Encode once; return (states, pairwise affinity tensor, NER logits)."""
    states = enc.encode_document(token_ids, model.enc_cfg, model.params,
                                 mask=mask, rng=rng, train=train)
    scored = enc.dropout(states, model.enc_cfg.keep_final, rng, train)
    e_head, e_tail = scorer.project_head_tail(scored, model.params)
    affinity = scorer.biaffine_scores(e_head, e_tail,
                                      model.params["score.relations"])
    return states, affinity, scorer.ner_logits(states, model.params)


def entity_token_index(doc: Document, entity: str) -> list[int]:
    tokens: list[int] = []
    for s, e in doc.mention_token_spans(entity):
        tokens.extend(range(s, e))
    return sorted(set(tokens))


# ---------------------------------------------------------------------------
# losses


def relation_loss(pair_logits: Tensor, labels) -> Tensor:
    """Mean NLL over entity pairs, probabilities by softmax over classes."""
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = pair_logits.shape[1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ValueError(f"relation label outside the {n_classes}-class schema")
    lse = ad.logsumexp(pair_logits, axis=1)
    picked = ad.take_per_row(pair_logits, labels)
    return ad.tmean(ad.add(lse, ad.neg(picked)))


def ner_loss(logits: Tensor, tag_ids, pad_mask=None) -> Tensor:
    """Mean per-token NLL; padded positions are excluded from the mean."""
    tag_ids = np.asarray(tag_ids, dtype=np.int64)
    if tag_ids.shape[0] != logits.shape[0]:
        raise ValueError(f"ner_loss: {logits.shape[0]} logits vs "
                         f"{tag_ids.shape[0]} tags")
    if pad_mask is not None:
        real = np.flatnonzero(~np.asarray(pad_mask, dtype=bool))
        logits = ad.gather_rows(logits, real)
        tag_ids = tag_ids[real]
    lse = ad.logsumexp(logits, axis=1)
    picked = ad.take_per_row(logits, tag_ids)
    return ad.tmean(ad.add(lse, ad.neg(picked)))


# ---------------------------------------------------------------------------
# optimizer pieces


class Adam:
    """Bias-corrected Adam: p -= lr * m_hat / (sqrt(v_hat) + eps)."""

    def __init__(self, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParamSet, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m += (1 - self.beta1) * (g - m)
            v += (1 - self.beta2) * (g * g - v)
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.data.dtype, copy=False)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float
                   ) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients so the global norm is at most ``max_norm``."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        grads = {name: g * scale for name, g in grads.items()}
    return grads, total


def add_gradient_noise(grads: dict[str, np.ndarray], eta: float, t: int,
                       decay: float, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Annealed Gaussian noise, variance eta / (1 + t)^decay."""
    if eta <= 0:
        return grads
    sigma = math.sqrt(eta / (1 + t) ** decay)
    return {name: g + rng.normal(0.0, sigma, size=g.shape)
            for name, g in grads.items()}


# ---------------------------------------------------------------------------
# batching


@dataclass
class DatasetIndex:
    docs: list[Document]
    positives: list[tuple[int, int]] = field(default_factory=list)
    negatives: list[tuple[int, int]] = field(default_factory=list)

    @classmethod
    def build(cls, docs: list[Document]) -> "DatasetIndex":
        index = cls(docs=docs)
        for di, doc in enumerate(docs):
            for pi, pair in enumerate(doc.pairs):
                stratum = index.negatives if pair.relation == NULL_LABEL else index.positives
                stratum.append((di, pi))
        return index

    @property
    def examples(self) -> int:
        return len(self.positives) + len(self.negatives)


def sample_minibatch(index: DatasetIndex, rng: np.random.Generator,
                     batch_size: int, pos_prob: float = 0.5
                     ) -> list[tuple[int, list[int]]]:
    """A coin flip picks the positive or NULL stratum; sampled pair
    instances are grouped per document so each is encoded once."""
    want_pos = rng.random() < pos_prob
    stratum = index.positives if want_pos else index.negatives
    if not stratum:
        other = "negative" if want_pos else "positive"
        log.warning("requested stratum is empty; falling back to %s pairs", other)
        stratum = index.negatives if want_pos else index.positives
        if not stratum:
            raise ValueError("dataset has no labeled pairs at all")
    take = min(batch_size, len(stratum))
    chosen = rng.choice(len(stratum), size=take, replace=False)
    grouped: dict[int, list[int]] = {}
    for di, pi in sorted(stratum[i] for i in chosen):
        grouped.setdefault(di, []).append(pi)
    return sorted(grouped.items())


# ---------------------------------------------------------------------------
# one optimizer step


@dataclass
class TrainState:
    model: Model
    optimizer: Adam
    cfg: TrainConfig
    rng: np.random.Generator
    step: int = 0
    consecutive_aborts: int = 0


def _word_dropout(ids: np.ndarray, keep: float, unk_id: int,
                  rng: np.random.Generator) -> np.ndarray:
    if keep >= 1.0:
        return ids
    out = ids.copy()
    out[rng.random(len(ids)) >= keep] = unk_id
    return out


def joint_step(batch: list[tuple[int, list[int]]], index: DatasetIndex,
               state: TrainState) -> dict:
    """One update; returns the step log record. A non-finite loss aborts
    the step (no update) and is counted."""
    model, cfg = state.model, state.cfg
    label_index = model.label_index()
    ner_index = model.ner_index()
    state.step += 1
    try:
        pooled_rows = []
        labels = []
        ner_terms = []
        ner_tags = []
        for di, pair_ids in batch:
            doc = index.docs[di]
            ids = np.asarray(doc.tokens.token_ids, dtype=np.int64)
            ids = _word_dropout(ids, cfg.keep_word, model.unk_id, state.rng)
            states, affinity, ner = forward_document(
                model, ids, rng=state.rng, train=True)
            for pi in pair_ids:
                pair = doc.pairs[pi]
                pooled = scorer.pool_entity_pair(
                    affinity,
                    entity_token_index(doc, pair.head),
                    entity_token_index(doc, pair.tail))
                pooled_rows.append(ad.reshape(pooled, (1, len(model.labels))))
                labels.append(label_index[pair.relation])
            ner_terms.append(ner)
            ner_tags.extend(ner_index[t] for t in doc.bio_tags)
        pair_logits = ad.concat(pooled_rows, axis=0)
        rel = relation_loss(pair_logits, labels)
        nl = ner_loss(ad.concat(ner_terms, axis=0), ner_tags)
        total = ad.add(rel, ad.mul(nl, cfg.ner_weight))
        ad.backward(total, model.params.tensors())
    except ad.NonFiniteError as exc:
        state.consecutive_aborts += 1
        batch_docs = [index.docs[di].doc_id for di, _ in batch]
        log.error("step %d aborted (%s) on batch %s", state.step, exc, batch_docs)
        if state.consecutive_aborts >= 5:
            raise NumericError(f"{state.consecutive_aborts} consecutive "
                               f"non-finite steps") from exc
        return {"step": state.step, "aborted": True}
    state.consecutive_aborts = 0

    grads = model.params.grads()
    grads, norm = clip_gradients(grads, cfg.clip_norm)
    grads = add_gradient_noise(grads, cfg.noise_eta, state.step,
                               cfg.noise_decay, state.rng)
    state.optimizer.step(model.params, grads)
    model.params.zero_grads()
    return {"step": state.step, "relation_loss": float(rel.data),
            "ner_loss": float(nl.data), "loss": float(total.data),
            "grad_norm": norm}


# ---------------------------------------------------------------------------
# prediction and evaluation helpers


def predict_documents(model: Model, docs: list[Document]) -> list[scorer.PairPrediction]:
    """Pooled scores and softmax probabilities for every candidate pair."""
    out = []
    with ad.no_grad():
        for doc in docs:
            if not doc.pairs:
                continue
            _, affinity, _ = forward_document(model, doc.tokens.token_ids)
            for head, tail in sorted({(p.head, p.tail) for p in doc.pairs}):
                pooled = scorer.pool_entity_pair(
                    affinity, entity_token_index(doc, head),
                    entity_token_index(doc, tail))
                out.append(scorer.PairPrediction.from_scores(
                    doc.doc_id, head, tail, model.labels, pooled.data))
    return out


def predict_ner_tags(model: Model, docs: list[Document]) -> list[list[str]]:
    out = []
    with ad.no_grad():
        for doc in docs:
            _, _, ner = forward_document(model, doc.tokens.token_ids)
            out.append([model.ner_classes[i] for i in ner.data.argmax(axis=1)])
    return out


def evaluate_relations(model: Model, docs: list[Document],
                       thresholds: dict[str, float] | None = None
                       ) -> tuple[float, dict[str, float]]:
    """Dev-style evaluation: tune thresholds unless given, return micro F1."""
    preds = predict_documents(model, docs)
    gold = gold_pair_labels(docs)
    if thresholds is None:
        thresholds = tune_thresholds(preds, gold)
    labels = {p.key: classify(p.probs, thresholds) for p in preds}
    report = prf1(labels, gold)
    return report.micro.f1, thresholds


class EarlyStopper:
    """Stop once the dev metric has failed to improve ``patience`` times."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.failures = 0

    def update(self, metric: float) -> bool:
        if metric > self.best:
            self.best = metric
            self.failures = 0
            return True
        self.failures += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.failures >= self.patience


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class TrainResult:
    best_metric: float
    best_arrays: dict[str, np.ndarray]
    thresholds: dict[str, float]
    history: list[dict]
    steps: int


def resplit(docs: list[Document], n_dev: int, rng: np.random.Generator
            ) -> list[Document]:
    """Merge train+dev and deterministically re-draw a dev set."""
    pool = sorted([d for d in docs if d.split in ("train", "dev")],
                  key=lambda d: d.doc_id)
    rest = [d for d in docs if d.split not in ("train", "dev")]
    order = rng.permutation(len(pool))
    dev_ids = {pool[i].doc_id for i in order[:n_dev]}
    for doc in pool:
        doc.split = "dev" if doc.doc_id in dev_ids else "train"
    return pool + rest


def train(docs: list[Document], model: Model, cfg: TrainConfig,
          log_fh=None) -> TrainResult:
    """Run joint steps with periodic dev evaluation and early stopping.

    Returns the best parameter snapshot (also restored into the model)
    plus the dev-tuned thresholds that achieved it.
    """
    rng = np.random.default_rng(cfg.seed)
    if cfg.resplit_dev > 0:
        docs = resplit(docs, cfg.resplit_dev, rng)
    train_docs = [d for d in docs if (d.split or "train") == "train"]
    dev_docs = [d for d in docs if d.split == "dev"]
    if not train_docs:
        raise ValueError("no training documents")
    if not dev_docs:
        raise ValueError("no dev documents for early stopping")
    index = DatasetIndex.build(train_docs)
    eval_every = cfg.eval_every or max(1, index.examples // cfg.batch_size)

    state = TrainState(model=model, optimizer=Adam(cfg.lr, cfg.adam_beta1,
                                                   cfg.adam_beta2, cfg.adam_eps),
                       cfg=cfg, rng=rng)
    stopper = EarlyStopper(cfg.patience)
    history: list[dict] = []
    best_arrays = {k: v.copy() for k, v in model.params.arrays().items()}
    best_thresholds: dict[str, float] = {}

    def emit(record: dict) -> None:
        history.append(record)
        if log_fh is not None:
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")

    while state.step < cfg.max_steps:
        batch = sample_minibatch(index, rng, cfg.batch_size, cfg.pos_prob)
        emit(joint_step(batch, index, state))
        if state.step % eval_every == 0:
            f1, thresholds = evaluate_relations(model, dev_docs)
            improved = stopper.update(f1)
            emit({"step": state.step, "dev_micro_f1": f1, "improved": improved})
            if improved:
                best_arrays = {k: v.copy() for k, v in model.params.arrays().items()}
                best_thresholds = thresholds
            if stopper.should_stop:
                break
    model.params.load(best_arrays)
    return TrainResult(best_metric=stopper.best, best_arrays=best_arrays,
                       thresholds=best_thresholds, history=history,
                       steps=state.step)


# ---------------------------------------------------------------------------
# checkpoint plumbing


def save_model(path, model: Model, thresholds: dict[str, float] | None = None,
               extra: dict | None = None) -> None:
    meta = {
        "encoder": model.enc_cfg.to_dict(),
        "labels": model.labels,
        "ner_classes": model.ner_classes,
        "unk_id": model.unk_id,
        "thresholds": thresholds or {},
    }
    meta.update(extra or {})
    save_checkpoint(path, model.params.arrays(), meta=meta)


def load_model(path) -> tuple[Model, dict]:
    tensors, meta = load_checkpoint(path)
    enc_cfg = EncoderConfig.from_dict(meta["encoder"])
    model = build_model(enc_cfg, list(meta["labels"]), list(meta["ner_classes"]),
                        seed=0, unk_id=int(meta.get("unk_id", 0)))
    model.params.load(tensors)
    return model, meta


def save_train_state(path, state: TrainState, thresholds=None) -> None:
    """Full resumable state: parameters, moments, step and rng state."""
    tensors = dict(state.model.params.arrays())
    for name, m in state.optimizer.m.items():
        tensors[f"adam.m.{name}"] = m
    for name, v in state.optimizer.v.items():
        tensors[f"adam.v.{name}"] = v
    meta = {
        "encoder": state.model.enc_cfg.to_dict(),
        "labels": state.model.labels,
        "ner_classes": state.model.ner_classes,
        "unk_id": state.model.unk_id,
        "train": state.cfg.to_dict(),
        "step": state.step,
        "adam_t": state.optimizer.t,
        "rng_state": json.loads(json.dumps(state.rng.bit_generator.state)),
        "thresholds": thresholds or {},
    }
    save_checkpoint(path, tensors, meta=meta)


def load_train_state(path) -> TrainState:
    tensors, meta = load_checkpoint(path)
    enc_cfg = EncoderConfig.from_dict(meta["encoder"])
    cfg = TrainConfig(**meta["train"])
    model = build_model(enc_cfg, list(meta["labels"]), list(meta["ner_classes"]),
                        seed=0, unk_id=int(meta.get("unk_id", 0)))
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    model.params.load(params)
    optimizer = Adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    optimizer.t = int(meta["adam_t"])
    for key, value in tensors.items():
        if key.startswith("adam.m."):
            optimizer.m[key[len("adam.m."):]] = value
        elif key.startswith("adam.v."):
            optimizer.v[key[len("adam.v."):]] = value
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    return TrainState(model=model, optimizer=optimizer, cfg=cfg, rng=rng,
                      step=int(meta["step"]))
