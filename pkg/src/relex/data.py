"""Corpus ingestion and document-level training example construction.

Covers the PubTator-style text format (title/abstract lines plus
tab-separated mention and relation lines), NULL negative generation
over type-valid entity pairs, hypernym filtering of disease arguments
against a controlled-vocabulary tree, and the strong-distant-supervision
build that recovers curated relations inside tagged abstracts.

Builders are deterministic: documents, pairs and relations are always
emitted in sorted order, and split assignment hashes the document id,
so rebuilding from identical inputs is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace

from . import bpe

log = logging.getLogger(__name__)

NULL_LABEL = "NULL"


class DataError(ValueError):
    """Unusable input data (unreadable file, malformed schema, ...)."""


@dataclass(frozen=True)
class Mention:
    start: int
    end: int
    entity_id: str
    entity_type: str
    text: str = ""


@dataclass(frozen=True)
class LabeledPair:
    head: str
    relation: str
    tail: str


@dataclass
class Document:
    doc_id: str
    text: str
    mentions: list[Mention] = field(default_factory=list)
    pairs: list[LabeledPair] = field(default_factory=list)
    split: str | None = None
    tokens: bpe.TokenizedText | None = None
    bio_tags: list[str] | None = None

    def entity_types(self) -> dict[str, str]:
        """entity_id -> type; conflicting annotations keep the first, logged."""
        out: dict[str, str] = {}
        for m in self.mentions:
            if m.entity_id in out and out[m.entity_id] != m.entity_type:
                log.warning("%s: entity %s has conflicting types %s/%s",
                            self.doc_id, m.entity_id, out[m.entity_id], m.entity_type)
                continue
            out.setdefault(m.entity_id, m.entity_type)
        return out

    def mention_token_spans(self, entity_id: str) -> list[tuple[int, int]]:
        """Half-open sub-word token spans of every mention of an entity."""
        if self.tokens is None:
            raise ValueError(f"{self.doc_id}: document is not tokenized")
        spans = []
        for m in self.mentions:
            if m.entity_id != entity_id:
                continue
            covered = [i for i, (ts, te) in enumerate(self.tokens.char_offsets)
                       if ts < m.end and te > m.start]
            if covered:
                spans.append((covered[0], covered[-1] + 1))
        return spans


@dataclass(frozen=True)
class RelationType:
    name: str
    head_type: str
    tail_type: str


@dataclass
class RelationSchema:
    """Relation inventory (NULL implicit) and the valid argument type pairs."""

    relations: list[RelationType]
    hierarchy: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        names = [r.name for r in self.relations]
        if len(set(names)) != len(names):
            raise DataError("duplicate relation names in schema")
        if NULL_LABEL in names:
            raise DataError("NULL is implicit and cannot be declared")

    def labels(self) -> list[str]:
        """Dense label space with NULL at index 0."""
        return [NULL_LABEL] + sorted(r.name for r in self.relations)

    def label_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.labels())}

    def valid_pairs(self) -> set[tuple[str, str]]:
        return {(r.head_type, r.tail_type) for r in self.relations}

    def by_name(self) -> dict[str, RelationType]:
        return {r.name: r for r in self.relations}


def save_schema(path, schema: RelationSchema) -> None:
    payload = {
        "relations": [{"name": r.name, "head_type": r.head_type,
                       "tail_type": r.tail_type} for r in schema.relations],
        "hierarchy": schema.hierarchy,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_schema(path) -> RelationSchema:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    rels = [RelationType(r["name"], r["head_type"], r["tail_type"])
            for r in payload["relations"]]
    return RelationSchema(relations=rels, hierarchy=payload.get("hierarchy", {}))


class MeshTree:
    """Controlled-vocabulary hierarchy: node -> parents, with ancestor closure."""

    def __init__(self, parents: dict[str, set[str]]):
        self.parents = {k: set(v) for k, v in parents.items()}
        self._check_acyclic()

    @classmethod
    def from_file(cls, path) -> "MeshTree":
        parents: dict[str, set[str]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected 'child<TAB>parent'")
                child, parent = parts
                parents.setdefault(child, set()).add(parent)
        return cls(parents)

    def _check_acyclic(self) -> None:
        state: dict[str, int] = {}

        def visit(node):
            state[node] = 1
            for p in self.parents.get(node, ()):
                s = state.get(p)
                if s == 1:
                    raise DataError(f"mesh tree contains a cycle through {node!r}")
                if s is None:
                    visit(p)
            state[node] = 2

        for node in list(self.parents):
            if node not in state:
                visit(node)

    def ancestors(self, node: str) -> set[str]:
        out: set[str] = set()
        frontier = list(self.parents.get(node, ()))
        while frontier:
            cur = frontier.pop()
            if cur in out:
                continue
            out.add(cur)
            frontier.extend(self.parents.get(cur, ()))
        return out

    def __contains__(self, node: str) -> bool:
        return node in self.parents


# ---------------------------------------------------------------------------
# PubTator-style parsing


@dataclass
class ParseStats:
    documents: int = 0
    skipped_mentions: int = 0
    skipped_relations: int = 0
    skipped_documents: int = 0

    @property
    def skipped(self) -> int:
        return self.skipped_mentions + self.skipped_relations + self.skipped_documents


def parse_pubtator(path) -> tuple[list[Document], ParseStats]:
    """Parse one PubTator-style file into documents.

    Per-record problems (bad offsets, mention text that does not match
    the document, relation entities without mentions) are logged and
    counted; an unreadable file is fatal.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            content = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    stats = ParseStats()
    docs: list[Document] = []
    for block in content.split("\n\n"):
        lines = [ln for ln in block.split("\n") if ln]
        if not lines:
            continue
        doc = _parse_block(lines, stats)
        if doc is None:
            stats.skipped_documents += 1
        else:
            docs.append(doc)
            stats.documents += 1
    return docs, stats


def _parse_block(lines: list[str], stats: ParseStats) -> Document | None:
    title = abstract = None
    doc_id = None
    rest = []
    for line in lines:
        parts = line.split("|", 2)
        if len(parts) == 3 and parts[1] in ("t", "a"):
            doc_id = doc_id or parts[0]
            if parts[1] == "t":
                title = parts[2]
            else:
                abstract = parts[2]
        else:
            rest.append(line)
    if doc_id is None or title is None:
        log.warning("block without a title line skipped: %r", lines[0][:60])
        return None
    text = title if abstract is None else f"{title} {abstract}"
    doc = Document(doc_id=doc_id, text=text)

    relations = []
    for line in rest:
        parts = line.split("\t")
        if len(parts) == 6 and parts[0] == doc_id:
            try:
                start, end = int(parts[1]), int(parts[2])
            except ValueError:
                stats.skipped_mentions += 1
                log.warning("%s: malformed mention line %r", doc_id, line)
                continue
            if not (0 <= start < end <= len(text)) or text[start:end] != parts[3]:
                stats.skipped_mentions += 1
                log.warning("%s: mention span (%d, %d) invalid or text mismatch",
                            doc_id, start, end)
                continue
            doc.mentions.append(Mention(start, end, entity_id=parts[5],
                                        entity_type=parts[4], text=parts[3]))
        elif len(parts) == 4 and parts[0] == doc_id:
            relations.append(LabeledPair(head=parts[2], relation=parts[1], tail=parts[3]))
        else:
            stats.skipped_mentions += 1
            log.warning("%s: unrecognized annotation line %r", doc_id, line)

    present = {m.entity_id for m in doc.mentions}
    for rel in relations:
        if rel.head in present and rel.tail in present:
            doc.pairs.append(rel)
        else:
            stats.skipped_relations += 1
            log.warning("%s: relation %s(%s, %s) references unmentioned entity",
                        doc_id, rel.relation, rel.head, rel.tail)
    doc.mentions.sort(key=lambda m: (m.start, m.end, m.entity_id))
    doc.pairs.sort(key=lambda p: (p.head, p.tail, p.relation))
    return doc


# ---------------------------------------------------------------------------
# candidate pair construction


def generate_negatives(doc: Document, schema: RelationSchema) -> Document:
    """Label every type-valid, unannotated entity pair as NULL.

    Annotated pairs are never touched; self pairs are excluded. The
    result is a new document with pairs in sorted order.
    """
    types = doc.entity_types()
    annotated = {(p.head, p.tail) for p in doc.pairs}
    valid = schema.valid_pairs()
    negatives = []
    for head in sorted(types):
        for tail in sorted(types):
            if head == tail or (head, tail) in annotated:
                continue
            if (types[head], types[tail]) in valid:
                negatives.append(LabeledPair(head=head, relation=NULL_LABEL, tail=tail))
    pairs = sorted(doc.pairs + negatives, key=lambda p: (p.head, p.tail, p.relation))
    return replace(doc, pairs=pairs)


def filter_hypernyms(doc: Document, mesh: MeshTree) -> Document:
    """Drop a candidate pair (c, d) when the same document also pairs c
    with a strict descendant of d.

    Checks run against the original pair set, so the outcome is order
    independent and the operation is idempotent. Entities missing from
    the tree are kept (logged at debug level).
    """
    ancestors: dict[str, set[str]] = {}
    for p in doc.pairs:
        if p.tail not in ancestors:
            if p.tail in mesh:
                ancestors[p.tail] = mesh.ancestors(p.tail)
            else:
                ancestors[p.tail] = set()
                log.debug("%s: %s not in mesh tree, kept", doc.doc_id, p.tail)
    by_head: dict[str, set[str]] = {}
    for p in doc.pairs:
        by_head.setdefault(p.head, set()).add(p.tail)
    kept = []
    for p in doc.pairs:
        tails = by_head[p.head]
        if any(p.tail in ancestors[other] for other in tails if other != p.tail):
            log.debug("%s: (%s, %s) removed, more specific pair present",
                      doc.doc_id, p.head, p.tail)
            continue
        kept.append(p)
    return replace(doc, pairs=kept)


def assign_split(doc_id: str, fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)) -> str:
    """Deterministic train/dev/test assignment by hashing the doc id."""
    digest = hashlib.md5(doc_id.encode("utf-8")).hexdigest()
    u = int(digest[:8], 16) / 0x100000000
    if u < fractions[0]:
        return "train"
    if u < fractions[0] + fractions[1]:
        return "dev"
    return "test"


# ---------------------------------------------------------------------------
# CTD strong-distant-supervision build


@dataclass(frozen=True)
class CuratedRelation:
    pmid: str
    relation: str
    head_id: str
    tail_id: str


def load_curated_relations(path) -> list[CuratedRelation]:
    """Read 'pmid<TAB>relation<TAB>head_id<TAB>tail_id' rows."""
    out = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 4:
                    raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
                out.append(CuratedRelation(*parts))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return out


def lift_to_parent(relation: str, hierarchy: dict[str, str]) -> str:
    """Map a relation type to its highest parent in the hierarchy."""
    seen = set()
    while relation in hierarchy:
        if relation in seen:
            raise DataError(f"relation hierarchy contains a cycle at {relation!r}")
        seen.add(relation)
        relation = hierarchy[relation]
    return relation


_VARIANT_PREFIXES = ("affects", "increase", "decrease")


def collapse_chemgene_hierarchy(relation_counts: dict[str, int],
                                hierarchy: dict[str, str]) -> dict[str, str | None]:
    """Resolve affects/increase/decrease variants after lifting to parents.

    Counts are taken over the raw curated data. Within each parent group
    {affects_X, increase_X, decrease_X}: when the affects variant is
    strictly more common than each directional variant, the directional
    ones fold into it; otherwise the affects examples are dropped (None)
    and the directional types stay distinct. Types without an affects
    variant map to themselves.
    """
    parent_counts: Counter = Counter()
    for raw, count in relation_counts.items():
        parent_counts[lift_to_parent(raw, hierarchy)] += count

    groups: dict[str, dict[str, str]] = {}
    for parent in parent_counts:
        head, _, rest = parent.partition("_")
        if head in _VARIANT_PREFIXES and rest:
            groups.setdefault(rest, {})[head] = parent

    parent_final: dict[str, str | None] = {p: p for p in parent_counts}
    for rest, variants in sorted(groups.items()):
        if "affects" not in variants:
            continue
        affects = variants["affects"]
        directional = [variants[v] for v in ("increase", "decrease") if v in variants]
        if directional and all(parent_counts[affects] > parent_counts[d]
                               for d in directional):
            for d in directional:
                parent_final[d] = affects
        elif directional:
            parent_final[affects] = None

    return {raw: parent_final[lift_to_parent(raw, hierarchy)]
            for raw in relation_counts}


@dataclass
class CtdBuildStats:
    curated_relations: int = 0
    dropped_missing_abstract: int = 0
    dropped_unrecovered: int = 0
    dropped_affects: int = 0
    discarded_no_relation: int = 0
    discarded_too_long: int = 0
    documents: int = 0
    positives: int = 0
    negatives: int = 0


def build_ctd_dataset(curated: list[CuratedRelation], tagged_abstracts: list[Document],
                      hierarchy: dict[str, str], max_tokens: int = 500,
                      fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
                      ) -> tuple[list[Document], RelationSchema, CtdBuildStats]:
    """Document-level dataset from curated relations plus tagged abstracts.

    A curated relation becomes a positive example when both of its
    entities appear among the abstract's tagged mentions; abstracts with
    no recovered relation, or longer than ``max_tokens`` pre-sub-word
    tokens, are discarded. Multiple relation types for one entity pair
    become separate positives. Remaining type-valid pairs get NULL.
    """
    stats = CtdBuildStats(curated_relations=len(curated))
    raw_counts = Counter(rel.relation for rel in curated)
    mapping = collapse_chemgene_hierarchy(dict(raw_counts), hierarchy)

    by_id = {doc.doc_id: doc for doc in tagged_abstracts}
    recovered: dict[str, set[LabeledPair]] = {}
    rel_types: dict[str, tuple[str, str]] = {}
    for rel in sorted(curated, key=lambda r: (r.pmid, r.head_id, r.tail_id, r.relation)):
        doc = by_id.get(rel.pmid)
        if doc is None:
            stats.dropped_missing_abstract += 1
            log.warning("curated relation for %s: no abstract available", rel.pmid)
            continue
        final = mapping[rel.relation]
        if final is None:
            stats.dropped_affects += 1
            continue
        types = doc.entity_types()
        if rel.head_id not in types or rel.tail_id not in types:
            stats.dropped_unrecovered += 1
            continue
        signature = (types[rel.head_id], types[rel.tail_id])
        known = rel_types.setdefault(final, signature)
        if known != signature:
            log.warning("relation %s seen with argument types %s and %s",
                        final, known, signature)
        recovered.setdefault(rel.pmid, set()).add(
            LabeledPair(head=rel.head_id, relation=final, tail=rel.tail_id))

    schema = RelationSchema(relations=[
        RelationType(name=name, head_type=ht, tail_type=tt)
        for name, (ht, tt) in sorted(rel_types.items())])

    documents = []
    for pmid in sorted(recovered):
        doc = by_id[pmid]
        n_words = len(bpe._words_with_offsets(doc.text, "word"))
        if n_words > max_tokens:
            stats.discarded_too_long += 1
            continue
        doc = replace(doc, pairs=sorted(recovered[pmid],
                                        key=lambda p: (p.head, p.tail, p.relation)))
        doc = generate_negatives(doc, schema)
        doc.split = assign_split(pmid, fractions)
        documents.append(doc)
        stats.documents += 1
        stats.positives += sum(1 for p in doc.pairs if p.relation != NULL_LABEL)
        stats.negatives += sum(1 for p in doc.pairs if p.relation == NULL_LABEL)
    stats.discarded_no_relation = len(by_id) - len(recovered)
    return documents, schema, stats


# ---------------------------------------------------------------------------
# tokenization attachment and dataset serialization


def attach_tokens(doc: Document, vocab: bpe.Vocab) -> Document:
    """Tokenize the text and project mention spans to BIO sub-word tags."""
    tokens = bpe.encode(doc.text, vocab)
    tags = bpe.project_mention_labels(
        [(m.start, m.end, m.entity_id, m.entity_type) for m in doc.mentions], tokens)
    return replace(doc, tokens=tokens, bio_tags=tags)


def doc_to_record(doc: Document) -> dict:
    record = {
        "doc_id": doc.doc_id,
        "text": doc.text,
        "mentions": [[m.start, m.end, m.entity_id, m.entity_type, m.text]
                     for m in doc.mentions],
        "pairs": [[p.head, p.relation, p.tail] for p in doc.pairs],
        "split": doc.split,
    }
    if doc.tokens is not None:
        record["tokens"] = {
            "ids": doc.tokens.token_ids,
            "offsets": [list(o) for o in doc.tokens.char_offsets],
            "word_starts": [int(b) for b in doc.tokens.word_starts],
        }
    if doc.bio_tags is not None:
        record["bio_tags"] = doc.bio_tags
    return record


def doc_from_record(record: dict) -> Document:
    doc = Document(
        doc_id=record["doc_id"],
        text=record["text"],
        mentions=[Mention(m[0], m[1], m[2], m[3], m[4]) for m in record["mentions"]],
        pairs=[LabeledPair(p[0], p[1], p[2]) for p in record["pairs"]],
        split=record.get("split"),
    )
    if "tokens" in record:
        t = record["tokens"]
        doc.tokens = bpe.TokenizedText(
            token_ids=list(t["ids"]),
            char_offsets=[tuple(o) for o in t["offsets"]],
            word_starts=[bool(b) for b in t["word_starts"]],
        )
    if "bio_tags" in record:
        doc.bio_tags = list(record["bio_tags"])
    return doc


def write_dataset(path, docs: list[Document]) -> None:
    """One JSON record per line, keys sorted, deterministic bytes."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc_to_record(doc), sort_keys=True,
                                separators=(",", ":")))
            fh.write("\n")


def read_dataset(path) -> list[Document]:
    docs = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    docs.append(doc_from_record(json.loads(line)))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return docs


# ---------------------------------------------------------------------------
# statistics report


def dataset_stats(docs: list[Document]) -> dict:
    """Counts shaped like the usual corpus tables: per split, per
    entity-type pair, and per relation type per split."""
    splits = ("train", "dev", "test")
    per_split = {s: {"docs": 0, "pos": 0, "neg": 0} for s in splits}
    per_kind: dict[str, dict[str, int]] = {}
    per_relation: dict[str, dict[str, int]] = {}
    for doc in docs:
        split = doc.split or "train"
        row = per_split.setdefault(split, {"docs": 0, "pos": 0, "neg": 0})
        row["docs"] += 1
        types = doc.entity_types()
        kinds_seen = set()
        for p in doc.pairs:
            kind = f"{types.get(p.head, '?')}/{types.get(p.tail, '?')}"
            krow = per_kind.setdefault(kind, {"docs": 0, "pos": 0, "neg": 0})
            if kind not in kinds_seen:
                krow["docs"] += 1
                kinds_seen.add(kind)
            if p.relation == NULL_LABEL:
                row["neg"] += 1
                krow["neg"] += 1
            else:
                row["pos"] += 1
                krow["pos"] += 1
                rrow = per_relation.setdefault(p.relation, {s: 0 for s in splits})
                rrow[split] = rrow.get(split, 0) + 1
    total = {"docs": sum(r["docs"] for r in per_split.values()),
             "pos": sum(r["pos"] for r in per_split.values()),
             "neg": sum(r["neg"] for r in per_split.values())}
    return {"per_split": per_split, "per_kind": per_kind,
            "per_relation": per_relation, "total": total}


def format_stats(stats: dict) -> str:
    lines = ["Data split\tDocs\tPos\tNeg"]
    for split, row in stats["per_split"].items():
        lines.append(f"{split}\t{row['docs']}\t{row['pos']}\t{row['neg']}")
    t = stats["total"]
    lines.append(f"total\t{t['docs']}\t{t['pos']}\t{t['neg']}")
    lines.append("")
    lines.append("Types\tDocs\tPos\tNeg")
    for kind in sorted(stats["per_kind"]):
        row = stats["per_kind"][kind]
        lines.append(f"{kind}\t{row['docs']}\t{row['pos']}\t{row['neg']}")
    lines.append("")
    lines.append("Relation\tTrain\tDev\tTest")
    for rel in sorted(stats["per_relation"]):
        row = stats["per_relation"][rel]
        lines.append(f"{rel}\t{row.get('train', 0)}\t{row.get('dev', 0)}\t{row.get('test', 0)}")
    return "\n".join(lines) + "\n"
