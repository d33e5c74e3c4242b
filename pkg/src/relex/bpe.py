"""Sub-word and word vocabularies with span-aware tokenization.

Byte-pair encoding is trained by greedily merging the most frequent
adjacent symbol pair, starting from single characters, until the vocab
budget is reached or no pair repeats. Merges never cross whitespace
word boundaries, and ties on pair frequency are broken by lexicographic
order of the pair so retraining is deterministic.

Word mode (used for the word-vs-BPE comparison) splits on whitespace
and punctuation and maps rare words to UNK.

Every tokenization carries per-token character offsets into the source
text plus word-boundary flags, which is what lets mention spans and BIO
labels be projected onto sub-words exactly.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

UNK_TOKEN = "<unk>"

_WORD_RE = re.compile(r"\S+")
_WORD_PUNCT_RE = re.compile(r"\w+|[^\w\s]")


@dataclass
class Vocab:
    """A trained vocabulary: token table plus, in bpe mode, the merge list."""

    mode: str                               # "bpe" | "word"
    tokens: dict[str, int]
    merges: list[tuple[str, str]] = field(default_factory=list)
    budget: int = 0
    min_count: int = 1

    def __post_init__(self):
        if self.mode not in ("bpe", "word"):
            raise ValueError(f"unknown vocab mode: {self.mode}")
        if UNK_TOKEN not in self.tokens:
            raise ValueError("token table must contain the UNK token")
        ids = sorted(self.tokens.values())
        if ids != list(range(len(self.tokens))):
            raise ValueError("token ids must be dense in [0, |tokens|)")

    @property
    def unk_id(self) -> int:
        return self.tokens[UNK_TOKEN]

    def __len__(self) -> int:
        return len(self.tokens)

    def id_to_token(self) -> list[str]:
        out = [""] * len(self.tokens)
        for tok, i in self.tokens.items():
            out[i] = tok
        return out


@dataclass
class TokenizedText:
    """Token ids with char offsets (half-open) and word-boundary flags.

    Offsets cover exactly the non-separator characters of the source;
    ``word_starts[i]`` is True when token i begins at the start of text
    or right after whitespace.
    """

    token_ids: list[int]
    char_offsets: list[tuple[int, int]]
    word_starts: list[bool]

    def __len__(self) -> int:
        return len(self.token_ids)


def _words_with_offsets(text: str, mode: str):
    rx = _WORD_RE if mode == "bpe" else _WORD_PUNCT_RE
    return [(m.group(), m.start(), m.end()) for m in rx.finditer(text)]


def _pair_counts(seqs: list[tuple[list[str], int]]) -> Counter:
    counts: Counter = Counter()
    for symbols, weight in seqs:
        for pair in zip(symbols, symbols[1:]):
            counts[pair] += weight
    return counts


def _merge_symbols(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    merged = pair[0] + pair[1]
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def train_bpe(corpus, budget: int, min_count: int = 1) -> Vocab:
    """Grow a sub-word vocabulary by most-frequent-pair merges.

    ``corpus`` is a string or an iterable of strings. Merging stops when
    the number of distinct symbols in the segmented corpus reaches
    ``budget`` or no adjacent pair occurs twice. Symbols rarer than
    ``min_count`` in the final segmentation are dropped from the table
    (they encode to UNK).
    """
    texts = [corpus] if isinstance(corpus, str) else list(corpus)
    word_counts: Counter = Counter()
    for text in texts:
        for word, _, _ in _words_with_offsets(text, "bpe"):
            word_counts[word] += 1
    if not word_counts:
        raise ValueError("train_bpe: empty corpus")

    charset = sorted({ch for w in word_counts for ch in w})
    if budget < len(charset):
        raise ValueError(f"train_bpe: budget {budget} below charset size {len(charset)}")

    seqs: list[tuple[list[str], int]] = [
        (list(w), c) for w, c in sorted(word_counts.items())]
    merges: list[tuple[str, str]] = []

    def vocab_size() -> int:
        return len({s for symbols, _ in seqs for s in symbols})

    while vocab_size() < budget:
        counts = _pair_counts(seqs)
        if not counts:
            break
        best_count = max(counts.values())
        if best_count < 2:
            break
        pair = min(p for p, c in counts.items() if c == best_count)
        merges.append(pair)
        seqs = [(_merge_symbols(sym, pair), c) for sym, c in seqs]

    symbol_counts: Counter = Counter()
    for symbols, c in seqs:
        for s in symbols:
            symbol_counts[s] += c
    kept = sorted(s for s, c in symbol_counts.items() if c >= min_count)
    tokens = {UNK_TOKEN: 0}
    for i, tok in enumerate(kept, start=1):
        tokens[tok] = i
    return Vocab(mode="bpe", tokens=tokens, merges=merges,
                 budget=budget, min_count=min_count)


def train_word_vocab(corpus, min_count: int = 5, budget: int = 0) -> Vocab:
    """Word-mode vocabulary: whitespace/punct tokens above a count cutoff.

    A nonzero ``budget`` additionally caps the table at the most
    frequent words (ties broken alphabetically).
    """
    texts = [corpus] if isinstance(corpus, str) else list(corpus)
    counts: Counter = Counter()
    for text in texts:
        for word, _, _ in _words_with_offsets(text, "word"):
            counts[word] += 1
    if not counts:
        raise ValueError("train_word_vocab: empty corpus")
    kept = [w for w, c in counts.items() if c >= min_count]
    kept.sort(key=lambda w: (-counts[w], w))
    if budget:
        kept = kept[:budget]
    tokens = {UNK_TOKEN: 0}
    for i, tok in enumerate(sorted(kept), start=1):
        tokens[tok] = i
    return Vocab(mode="word", tokens=tokens, budget=budget, min_count=min_count)


def _apply_merges(symbols: list, ranks: dict[tuple[str, str], int]) -> list:
    """Replay merges in training order on one word's (symbol, start, end) list."""
    while len(symbols) > 1:
        best_rank = None
        for a, b in zip(symbols, symbols[1:]):
            r = ranks.get((a[0], b[0]))
            if r is not None and (best_rank is None or r < best_rank):
                best_rank = r
        if best_rank is None:
            break
        pair = None
        out = []
        i = 0
        while i < len(symbols):
            if (i + 1 < len(symbols)
                    and ranks.get((symbols[i][0], symbols[i + 1][0])) == best_rank):
                a, b = symbols[i], symbols[i + 1]
                out.append((a[0] + b[0], a[1], b[2]))
                i += 2
            else:
                out.append(symbols[i])
                i += 1
        symbols = out
    return symbols


def encode(text: str, vocab: Vocab) -> TokenizedText:
    """Tokenize ``text``; a pure function of (text, vocab).

    BPE mode replays the merge list in training order within each
    whitespace-delimited word; residual symbols missing from the table
    become UNK. Word mode looks tokens up directly.
    """
    ids: list[int] = []
    offsets: list[tuple[int, int]] = []
    starts: list[bool] = []
    if vocab.mode == "word":
        for word, s, e in _words_with_offsets(text, "word"):
            ids.append(vocab.tokens.get(word, vocab.unk_id))
            offsets.append((s, e))
            starts.append(s == 0 or text[s - 1].isspace())
        return TokenizedText(ids, offsets, starts)

    ranks = {pair: i for i, pair in enumerate(vocab.merges)}
    for word, ws, _ in _words_with_offsets(text, "bpe"):
        symbols = [(ch, ws + i, ws + i + 1) for i, ch in enumerate(word)]
        for sym, s, e in _apply_merges(symbols, ranks):
            ids.append(vocab.tokens.get(sym, vocab.unk_id))
            offsets.append((s, e))
            starts.append(s == 0 or text[s - 1].isspace())
    return TokenizedText(ids, offsets, starts)


def decode(encoded, vocab: Vocab) -> str:
    """Invert ``encode`` up to UNK loss and whitespace normalization.

    Accepts a TokenizedText (word boundaries known, so separators are
    restored as single spaces) or a bare id sequence, which in bpe mode
    concatenates pieces and in word mode joins them with spaces. UNK ids
    render as the UNK placeholder.
    """
    if isinstance(encoded, TokenizedText):
        id_list = encoded.token_ids
        starts = encoded.word_starts
    else:
        id_list = list(encoded)
        starts = [vocab.mode == "word"] * len(id_list)
    table = vocab.id_to_token()
    parts = []
    for i, tok_id in enumerate(id_list):
        if not 0 <= tok_id < len(table):
            raise ValueError(f"decode: id {tok_id} out of range for vocab of {len(table)}")
        if i > 0 and starts[i]:
            parts.append(" ")
        parts.append(table[tok_id])
    return "".join(parts)


def save_vocab(path, vocab: Vocab) -> None:
    """Write the line-oriented vocab file (header, merges, token table)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"mode\t{vocab.mode}\n")
        fh.write(f"budget\t{vocab.budget}\n")
        fh.write(f"min_count\t{vocab.min_count}\n")
        fh.write(f"merges\t{len(vocab.merges)}\n")
        for a, b in vocab.merges:
            fh.write(f"{a}\t{b}\n")
        fh.write(f"tokens\t{len(vocab.tokens)}\n")
        for tok, i in sorted(vocab.tokens.items(), key=lambda kv: kv[1]):
            fh.write(f"{tok}\t{i}\n")


def load_vocab(path) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    pos = 0

    def take(expect: str) -> str:
        nonlocal pos
        key, _, value = lines[pos].partition("\t")
        if key != expect:
            raise ValueError(f"vocab file: expected '{expect}' line, got {lines[pos]!r}")
        pos += 1
        return value

    mode = take("mode")
    budget = int(take("budget"))
    min_count = int(take("min_count"))
    n_merges = int(take("merges"))
    merges = []
    for _ in range(n_merges):
        a, _, b = lines[pos].partition("\t")
        merges.append((a, b))
        pos += 1
    n_tokens = int(take("tokens"))
    tokens = {}
    for _ in range(n_tokens):
        tok, _, i = lines[pos].partition("\t")
        tokens[tok] = int(i)
        pos += 1
    return Vocab(mode=mode, tokens=tokens, merges=merges,
                 budget=budget, min_count=min_count)


def project_mention_labels(mentions, tokenization: TokenizedText) -> list[str]:
    """BIO tags over sub-word tokens from character-level mention spans.

    ``mentions`` is an iterable of (start, end, entity_id, entity_type).
    The first token of each mention span gets B-type, later tokens
    I-type. Spans that do not land exactly on token boundaries are
    snapped outward to the smallest covering token span (logged).
    Overlapping mentions of different entities are rejected; overlapping
    spans of the same entity merge into one span.
    """
    tags = ["O"] * len(tokenization)
    spans: list[list] = []  # [first_token, last_token, entity_id, entity_type]
    for start, end, entity_id, entity_type in sorted(mentions):
        covered = [i for i, (ts, te) in enumerate(tokenization.char_offsets)
                   if ts < end and te > start]
        if not covered:
            log.warning("mention (%d, %d) of %s covers no tokens; skipped",
                        start, end, entity_id)
            continue
        ts0 = tokenization.char_offsets[covered[0]][0]
        te1 = tokenization.char_offsets[covered[-1]][1]
        if ts0 != start or te1 != end:
            log.warning("mention (%d, %d) of %s snapped outward to token span (%d, %d)",
                        start, end, entity_id, ts0, te1)
        first, last = covered[0], covered[-1]
        merged = False
        for span in spans:
            if span[0] <= last and first <= span[1]:
                if span[2] != entity_id:
                    raise ValueError(
                        f"overlapping mentions of different entities: "
                        f"{span[2]} vs {entity_id} at tokens {first}..{last}")
                span[0] = min(span[0], first)
                span[1] = max(span[1], last)
                merged = True
                break
        if not merged:
            spans.append([first, last, entity_id, entity_type])
    for first, last, _, entity_type in sorted(spans):
        tags[first] = f"B-{entity_type}"
        for k in range(first + 1, last + 1):
            tags[k] = f"I-{entity_type}"
    return tags
