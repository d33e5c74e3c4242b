"""Templated synthetic abstract corpus for end-to-end checks.

Three entity types (compound, protein, phenotype) and four relation
types; each relation instance is rendered either inside a sentence or
across two sentences whose mentions are guaranteed to sit more than
eleven words apart. A share of positive pairs gets extra non-expressing
mentions so pooled scores must pick out the one expressing mention
pair. Co-occurring entities without a statement become NULL candidates
through the ordinary negative generation path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bpe
from .data import (Document, LabeledPair, Mention, RelationSchema, RelationType,
                   attach_tokens, generate_negatives)

COMPOUND, PROTEIN, PHENOTYPE = "Compound", "Protein", "Phenotype"

RELATIONS = [
    RelationType("activates", COMPOUND, PROTEIN),
    RelationType("inhibits", COMPOUND, PROTEIN),
    RelationType("induces", COMPOUND, PHENOTYPE),
    RelationType("regulates", PROTEIN, PHENOTYPE),
]

_WITHIN = {
    "activates": ["{H}", "robustly", "activates", "{T}", "signaling", "in",
                  "treated", "cells", "."],
    "inhibits": ["{H}", "strongly", "inhibits", "{T}", "activity", "under",
                 "standard", "conditions", "."],
    "induces": ["{H}", "exposure", "frequently", "induces", "{T}", "in", "the",
                "study", "group", "."],
    "regulates": ["{H}", "tightly", "regulates", "{T}", "during", "early",
                  "development", "."],
}

# head sentence + tail sentence; the word gap between mentions is > 11 by
# construction (counted below and asserted in tests)
_CROSS = {
    "activates": (["{H}", "was", "administered", "to", "the", "cohort", "daily",
                   "throughout", "the", "extended", "trial", "period", "."],
                  ["panels", "later", "revealed", "robust", "activation", "of",
                   "{T}", "in", "most", "samples", "."]),
    "inhibits": (["{H}", "was", "administered", "continuously", "across", "the",
                  "full", "monitoring", "window", "in", "all", "arms", "."],
                 ["assays", "later", "showed", "marked", "inhibition", "of",
                  "{T}", "throughout", "."]),
    "induces": (["{H}", "was", "administered", "to", "every", "enrolled",
                 "participant", "during", "the", "initial", "phase", "."],
                ["clinicians", "subsequently", "recorded", "emergent", "{T}",
                 "in", "numerous", "cases", "."]),
    "regulates": (["{H}", "expression", "was", "profiled", "extensively",
                   "across", "the", "longitudinal", "sampling", "series", "."],
                  ["downstream", "records", "indicated", "sustained",
                   "regulation", "of", "{T}", "over", "time", "."]),
}

_FILLER = [
    ["baseline", "levels", "of", "{E}", "remained", "stable", "."],
    ["{E}", "was", "measured", "in", "all", "samples", "."],
    ["routine", "panels", "included", "{E}", "as", "a", "control", "."],
]

_EXTRA_MENTION = [
    ["{E}", "readings", "were", "archived", "for", "review", "."],
    ["followup", "confirmed", "the", "earlier", "{E}", "values", "."],
]

_OPENERS = [
    ["this", "report", "summarizes", "a", "routine", "screening", "series", "."],
    ["we", "describe", "observations", "from", "a", "small", "cohort", "."],
    ["records", "from", "the", "registry", "were", "reviewed", "."],
]


def _entity_inventory() -> dict[str, list[tuple[str, str]]]:
    """(entity_id, surface) per type; surfaces are unique made-up tokens."""
    compounds = ["velsartan", "dorzamide", "makribine", "trizolane", "fenoprex",
                 "bexarol", "curzepine", "lamivort", "pirastat", "zolmudine"]
    proteins = ["akt1", "mapk3", "tgfb2", "il6r", "ras9", "src4", "jak7", "erk5"]
    adjectives = ["hepatic", "renal", "cardiac"]
    nouns = ["necrosis", "edema", "fibrosis"]
    phenotypes = [f"{a} {n}" for a in adjectives for n in nouns]
    return {
        COMPOUND: [(f"CMP{i:02d}", s) for i, s in enumerate(compounds)],
        PROTEIN: [(f"PRT{i:02d}", s) for i, s in enumerate(proteins)],
        PHENOTYPE: [(f"PHE{i:02d}", s) for i, s in enumerate(phenotypes)],
    }


@dataclass
class SyntheticCorpus:
    docs: list[Document]
    schema: RelationSchema
    cross_pairs: set = field(default_factory=set)
    # pair key -> (head mention char span, tail mention char span) of the
    # one expressing mention pair
    expressing: dict = field(default_factory=dict)
    multi_instance: set = field(default_factory=set)


class _DocBuilder:
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        self.words: list[str] = []
        self.mentions: list[Mention] = []
        self.pairs: list[LabeledPair] = []

    def _char_pos(self) -> int:
        return sum(len(w) + 1 for w in self.words)

    def add_sentence(self, template: list[str], slots: dict) -> dict:
        """Render a template; returns char spans of the placed entities."""
        spans = {}
        for word in template:
            if word.startswith("{") and word.endswith("}"):
                entity_id, etype, surface = slots[word[1:-1]]
                start = self._char_pos()
                self.words.extend(surface.split(" "))
                end = start + len(surface)
                self.mentions.append(Mention(start, end, entity_id, etype, surface))
                spans[word[1:-1]] = (start, end)
            else:
                self.words.append(word)
        return spans

    def document(self) -> Document:
        return Document(doc_id=self.doc_id, text=" ".join(self.words),
                        mentions=sorted(self.mentions, key=lambda m: (m.start, m.end)),
                        pairs=sorted(self.pairs, key=lambda p: (p.head, p.tail, p.relation)))


def generate_corpus(n_docs: int = 200, seed: int = 0,
                    cross_fraction: float = 0.35) -> SyntheticCorpus:
    """Deterministic corpus with at least ``cross_fraction`` of the
    relation instances expressed across sentence boundaries."""
    rng = np.random.default_rng(seed)
    inventory = _entity_inventory()
    schema = RelationSchema(relations=list(RELATIONS))
    corpus = SyntheticCorpus(docs=[], schema=schema)
    cross_done = 0
    relations_done = 0

    for i in range(n_docs):
        b = _DocBuilder(f"SYN{i:04d}")
        b.add_sentence(_OPENERS[int(rng.integers(len(_OPENERS)))], {})
        used: set[str] = set()

        n_rel = int(rng.integers(1, 3))
        for r in range(n_rel):
            rel = RELATIONS[int(rng.integers(len(RELATIONS)))]
            head = _pick(rng, inventory[rel.head_type], used)
            tail = _pick(rng, inventory[rel.tail_type], used)
            if head is None or tail is None:
                continue
            used.update((head[0], tail[0]))
            key = (b.doc_id, head[0], tail[0])
            relations_done += 1
            # greedy quota keeps the cross-sentence share at the target;
            # only the first relation of a document may go cross-sentence
            go_cross = (r == 0 and
                        cross_done < cross_fraction * relations_done)
            if go_cross:
                cross_done += 1
                head_t, tail_t = _CROSS[rel.name]
                h_spans = b.add_sentence(head_t, {"H": (head[0], rel.head_type, head[1])})
                t_spans = b.add_sentence(tail_t, {"T": (tail[0], rel.tail_type, tail[1])})
                corpus.cross_pairs.add(key)
                corpus.expressing[key] = (h_spans["H"], t_spans["T"])
            else:
                spans = b.add_sentence(_WITHIN[rel.name],
                                       {"H": (head[0], rel.head_type, head[1]),
                                        "T": (tail[0], rel.tail_type, tail[1])})
                corpus.expressing[key] = (spans["H"], spans["T"])
                # extra non-expressing mentions make the pair multi-instance
                if rng.random() < 0.5:
                    extra = head if rng.random() < 0.5 else tail
                    etype = rel.head_type if extra is head else rel.tail_type
                    template = _EXTRA_MENTION[int(rng.integers(len(_EXTRA_MENTION)))]
                    b.add_sentence(template, {"E": (extra[0], etype, extra[1])})
                    corpus.multi_instance.add(key)
            b.pairs.append(LabeledPair(head=head[0], relation=rel.name, tail=tail[0]))

        # bystander entity for NULL candidates
        for _ in range(int(rng.integers(1, 3))):
            etype = (COMPOUND, PROTEIN, PHENOTYPE)[int(rng.integers(3))]
            bystander = _pick(rng, inventory[etype], used)
            if bystander is None:
                continue
            used.add(bystander[0])
            template = _FILLER[int(rng.integers(len(_FILLER)))]
            b.add_sentence(template, {"E": (bystander[0], etype, bystander[1])})

        doc = b.document()
        doc.split = "dev" if i % 10 == 8 else "test" if i % 10 == 9 else "train"
        corpus.docs.append(generate_negatives(doc, schema))
    return corpus


def _pick(rng, candidates, used):
    free = [c for c in candidates if c[0] not in used]
    if not free:
        return None
    return free[int(rng.integers(len(free)))]


def tokenize_corpus(corpus: SyntheticCorpus, budget: int = 220,
                    mode: str = "bpe") -> bpe.Vocab:
    """Train a vocabulary on the train split and tokenize every document."""
    train_text = [d.text for d in corpus.docs if d.split == "train"]
    if mode == "bpe":
        vocab = bpe.train_bpe(train_text, budget=budget)
    else:
        vocab = bpe.train_word_vocab(train_text, min_count=1, budget=budget)
    corpus.docs[:] = [attach_tokens(d, vocab) for d in corpus.docs]
    return vocab


def expressing_token_cells(corpus: SyntheticCorpus, doc: Document,
                           key: tuple) -> tuple[list[int], list[int]]:
    """Token index sets of the expressing head/tail mentions of a pair."""
    h_span, t_span = corpus.expressing[key]

    def covered(span):
        return [i for i, (ts, te) in enumerate(doc.tokens.char_offsets)
                if ts < span[1] and te > span[0]]

    return covered(h_span), covered(t_span)
