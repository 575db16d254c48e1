import pytest

from transferlab.errors import InvalidId
from transferlab.vocab import BOS, EOS, PAD, UNK, Vocab, build_vocab, decode, encode


def test_build_vocab_ordering():
    v = build_vocab(["a b a"])
    assert v.size == 6
    assert v.id_of["a"] == 4 and v.id_of["b"] == 5


def test_frequency_ties_broken_lexicographically():
    v = build_vocab(["z y x", "y"])
    assert v.token_of[4:] == ("y", "x", "z")


def test_empty_corpus_specials_only():
    v = build_vocab([])
    assert v.size == 4
    assert (PAD, UNK, BOS, EOS) == (0, 1, 2, 3)
    assert v.token_of[:4] == ("<pad>", "<unk>", "<s>", "</s>")


def test_min_freq_filters():
    v = build_vocab(["a b a"], min_freq=2)
    assert v.size == 5 and "b" not in v


def test_round_trip_and_unknowns():
    v = build_vocab(["find . -name x", "ls -l"])
    s = "ls -l . x"
    assert decode(v, encode(v, s)) == s
    assert encode(v, "ls --weird")[1] == UNK
    assert encode(v, "", frame=True) == [BOS, EOS]


def test_decode_examples():
    v = build_vocab(["a b a"])
    assert decode(v, [BOS, 4, EOS]) == "a"
    assert decode(v, []) == ""
    assert decode(v, [BOS, 4, EOS], keep_specials=True) == "<s> a </s>"
    with pytest.raises(InvalidId):
        decode(v, [v.size])


def test_ids_deterministic_under_corpus_order():
    a = build_vocab(["x y z z", "y q"])
    b = build_vocab(["y q", "x y z z"])
    assert a == b


def test_id_maps_are_inverse():
    v = build_vocab(["the cat sat on the mat"])
    for token, i in v.id_of.items():
        assert v.token_of[i] == token


def test_text_serialisation_round_trip(tmp_path):
    v = build_vocab(["a b a c"])
    path = tmp_path / "v.vocab"
    v.save(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#") and "k+4" in lines[0]
    assert lines[1] == "a"  # body line 0 -> id 4
    assert Vocab.load(path) == v
    assert Vocab.load(path).content_hash() == v.content_hash()
