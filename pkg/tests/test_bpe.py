import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relex import bpe
from oracles import bpe_reference_merges

CORPUS = ("the kinase inhibitor binds the receptor . "
          "receptor activation alters kinase signaling in cells .")


def test_first_merge_on_abab_is_ab():
    vocab = bpe.train_bpe("abab", budget=3)
    assert vocab.merges[0] == ("a", "b")


def test_budget_equal_to_charset_means_no_merges():
    vocab = bpe.train_bpe("abc cab bca", budget=3)
    assert vocab.merges == []
    assert set(vocab.tokens) == {bpe.UNK_TOKEN, "a", "b", "c"}


def test_budget_below_charset_rejected():
    with pytest.raises(ValueError, match="charset"):
        bpe.train_bpe("abcdef", budget=3)


def test_empty_corpus_rejected():
    with pytest.raises(ValueError, match="empty"):
        bpe.train_bpe("   ", budget=10)


@pytest.mark.parametrize("text,budget", [
    ("abab", 3),
    ("aaabdaaabac", 6),
    (CORPUS, 18),
    ("low lower lowest low low slow slower", 12),
])
def test_merges_match_bruteforce_reference(text, budget):
    vocab = bpe.train_bpe(text, budget=budget)
    assert vocab.merges == bpe_reference_merges([text], budget)


@settings(max_examples=60, deadline=None)
@given(st.text(alphabet="abcd ", min_size=1, max_size=60), st.integers(4, 12))
def test_merges_match_reference_on_random_corpora(text, budget):
    if not text.split():
        return
    vocab = bpe.train_bpe(text, budget=budget)
    assert vocab.merges == bpe_reference_merges([text], budget)


def test_retraining_is_deterministic():
    a = bpe.train_bpe(CORPUS, budget=20)
    b = bpe.train_bpe(CORPUS, budget=20)
    assert a.merges == b.merges and a.tokens == b.tokens


def test_encode_with_no_merges_is_per_character():
    vocab = bpe.train_bpe("abc cab", budget=3)
    enc = bpe.encode("cab", vocab)
    assert [vocab.id_to_token()[i] for i in enc.token_ids] == ["c", "a", "b"]


def test_encode_decode_round_trip():
    vocab = bpe.train_bpe(CORPUS, budget=24)
    enc = bpe.encode(CORPUS, vocab)
    assert bpe.decode(enc, vocab) == CORPUS
    assert all(i != vocab.unk_id for i in enc.token_ids)


def test_encode_is_pure():
    vocab = bpe.train_bpe(CORPUS, budget=20)
    a = bpe.encode("kinase binds", vocab)
    b = bpe.encode("kinase binds", vocab)
    assert a.token_ids == b.token_ids and a.char_offsets == b.char_offsets


def test_unseen_character_maps_to_unk():
    vocab = bpe.train_bpe("abc abc", budget=3)  # character vocabulary
    enc = bpe.encode("axc", vocab)
    toks = [vocab.id_to_token()[i] for i in enc.token_ids]
    assert toks == ["a", bpe.UNK_TOKEN, "c"]


def test_decode_empty_and_unk_and_range():
    vocab = bpe.train_bpe("ab ab", budget=3)
    assert bpe.decode([], vocab) == ""
    assert bpe.UNK_TOKEN in bpe.decode([vocab.unk_id], vocab)
    with pytest.raises(ValueError, match="out of range"):
        bpe.decode([999], vocab)


def test_offsets_cover_exactly_non_separator_chars():
    vocab = bpe.train_bpe(CORPUS, budget=24)
    enc = bpe.encode(CORPUS, vocab)
    covered = []
    for s, e in enc.char_offsets:
        covered.extend(range(s, e))
    expected = [i for i, ch in enumerate(CORPUS) if not ch.isspace()]
    assert covered == expected  # non-overlapping, monotone, complete


@settings(max_examples=60, deadline=None)
@given(st.lists(st.text(alphabet="abcde", min_size=1, max_size=8), min_size=1, max_size=10))
def test_round_trip_property(words):
    text = " ".join(words)
    vocab = bpe.train_bpe(text, budget=len(set("".join(words))) + 4)
    assert bpe.decode(bpe.encode(text, vocab), vocab) == text


def test_word_mode_min_count_cutoff():
    corpus = " ".join(["common"] * 6 + ["rare"] * 4)
    vocab = bpe.train_word_vocab(corpus, min_count=5)
    enc = bpe.encode("common rare", vocab)
    toks = [vocab.id_to_token()[i] for i in enc.token_ids]
    assert toks == ["common", bpe.UNK_TOKEN]


def test_word_mode_splits_punctuation():
    vocab = bpe.train_word_vocab("cells , cells . signal signal signal", min_count=1)
    enc = bpe.encode("cells, signal.", vocab)
    toks = [vocab.id_to_token()[i] for i in enc.token_ids]
    assert toks == ["cells", ",", "signal", "."]
    # punctuation glued to a word is not a word start, so decode restores it
    assert bpe.decode(enc, vocab) == "cells, signal."


def test_bpe_min_count_drops_rare_tokens():
    corpus = "abab abab abab xy"
    vocab = bpe.train_bpe(corpus, budget=10, min_count=3)
    assert "x" not in vocab.tokens and "y" not in vocab.tokens
    enc = bpe.encode("xy", vocab)
    assert all(i == vocab.unk_id for i in enc.token_ids)


def test_vocab_file_round_trip(tmp_path):
    vocab = bpe.train_bpe(CORPUS, budget=22, min_count=1)
    path = tmp_path / "vocab.txt"
    bpe.save_vocab(path, vocab)
    loaded = bpe.load_vocab(path)
    assert loaded == vocab
    # stable across runs: re-saving produces identical bytes
    path2 = tmp_path / "vocab2.txt"
    bpe.save_vocab(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


# ---------------------------------------------------------------------------
# BIO projection


def enc_for(text, budget=30):
    vocab = bpe.train_bpe(text, budget=budget)
    return bpe.encode(text, vocab)


def test_bio_multi_subword_mention():
    text = "xqzv causes pain"
    vocab = bpe.train_bpe("ab ab", budget=3)  # no merges, chars unknown -> per char
    enc = bpe.encode(text, vocab)
    # mention covers the 4 sub-words of "xqzv"
    tags = bpe.project_mention_labels([(0, 4, "C1", "Chem")], enc)
    assert tags[:4] == ["B-Chem", "I-Chem", "I-Chem", "I-Chem"]
    assert set(tags[4:]) == {"O"}


def test_bio_no_mentions_all_outside():
    enc = enc_for("nothing here")
    assert bpe.project_mention_labels([], enc) == ["O"] * len(enc)


def test_bio_adjacent_mentions_not_bridged():
    text = "ab cd"
    vocab = bpe.train_bpe("zz zz", budget=2)
    enc = bpe.encode(text, vocab)  # tokens: a b c d
    tags = bpe.project_mention_labels(
        [(0, 2, "E1", "Chem"), (3, 5, "E2", "Chem")], enc)
    assert tags == ["B-Chem", "I-Chem", "B-Chem", "I-Chem"]


def test_bio_overlap_different_entities_rejected():
    enc = enc_for("abcdef gh")
    with pytest.raises(ValueError, match="different entities"):
        bpe.project_mention_labels(
            [(0, 4, "E1", "Chem"), (2, 6, "E2", "Disease")], enc)


def test_bio_misaligned_span_snaps_outward(caplog):
    text = "kinases bind"
    vocab = bpe.train_bpe(text + " " + text, budget=9)
    enc = bpe.encode(text, vocab)
    with caplog.at_level(logging.WARNING, logger="relex.bpe"):
        tags = bpe.project_mention_labels([(0, 3, "E1", "Prot")], enc)
    assert any("snapped" in rec.message for rec in caplog.records)
    assert tags[0] == "B-Prot"


def _bio_valid(tags):
    prev = "O"
    for tag in tags:
        if tag.startswith("I-"):
            if prev == "O" or prev[2:] != tag[2:]:
                return False
        prev = tag
    return True


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_bio_validity_property(seed):
    import numpy as np
    rng = np.random.default_rng(seed)
    words = ["alpha", "beta", "gamma", "delta", "kappa"]
    text = " ".join(words[rng.integers(len(words))] for _ in range(8))
    vocab = bpe.train_bpe(text, budget=14)
    enc = bpe.encode(text, vocab)
    mentions = []
    pos = 0
    for mid in range(rng.integers(0, 4)):
        starts = [s for s, _ in enc.char_offsets if s >= pos]
        if not starts:
            break
        s = int(rng.choice(starts))
        ends = [e for _, e in enc.char_offsets if e > s]
        e = int(rng.choice(ends[:3]))
        mentions.append((s, e, f"E{mid}", ["Chem", "Gene"][int(rng.integers(2))]))
        pos = e + 1
    tags = bpe.project_mention_labels(mentions, enc)
    assert _bio_valid(tags)
