import pytest
from hypothesis import given

from shiftcast.corpus import SynthProfile, stats, synthesize, windowize
from shiftcast.template import MONTHS, WEEKDAYS, render_prompt, render_target
from shiftcast.tokenizer import (BOS_ID, EOS_ID, EmptyCorpus, UnknownId, Vocabulary, build_vocab,
                                 decode, encode, split_words)

from conftest import GOLDEN_PROMPT, GOLDEN_TARGET, samples


def test_specials_and_order():
    v = build_vocab(["a a b"])
    assert v.id_to_token == ("<s>", "</s>", "<pad>", "<unk>", "a", "b")
    assert build_vocab(["a a b"]) == v


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_vocab([])


def test_split_punctuation():
    assert split_words("POI 81.") == ["POI", "81", "."]
    assert split_words("Wednesday to August 28, 2020, Friday,") == [
        "Wednesday", "to", "August", "28", ",", "2020", ",", "Friday", ","]


def test_encode_words():
    v = build_vocab([GOLDEN_TARGET])
    ids = encode("there will be 21 people", v)
    assert [v.id_to_token[i] for i in ids] == ["there", "will", "be", "21", "people"]
    assert encode("POI 81.", v, add_specials=True)[0] == BOS_ID
    assert encode("POI 81.", v, add_specials=True)[-1] == EOS_ID


def test_digit_fallback():
    v = build_vocab(["9 1 2"])
    ids = encode("99999", v)
    assert [v.id_to_token[i] for i in ids] == ["9"] * 5
    assert decode(ids, v) == "99999"


def test_unknown_word_maps_to_unk():
    v = build_vocab(["a"])
    assert encode("zebra", v) == [3]


def test_decode_strips_specials():
    v = build_vocab(["a"])
    assert decode([BOS_ID, v.token_to_id["a"], EOS_ID], v) == "a"
    with pytest.raises(UnknownId):
        decode([99], v)


@pytest.mark.parametrize("text", [GOLDEN_PROMPT, GOLDEN_TARGET])
def test_golden_round_trip(text):
    v = build_vocab([GOLDEN_PROMPT, GOLDEN_TARGET])
    assert decode(encode(text, v), v) == text


def test_json_round_trip(tmp_path):
    v = build_vocab([GOLDEN_PROMPT])
    v.save(tmp_path / "v.json")
    w = Vocabulary.load(tmp_path / "v.json")
    assert w == v and w.hash == v.hash


def test_synthetic_vocab_coverage():
    ds = synthesize(SynthProfile(num_pois=30, num_categories=10, days=40, seed=1))
    ss = windowize(ds, 7)
    v = build_vocab([t for s in ss for t in (render_prompt(s), render_target(s))])
    for n in range(stats(ds).max_visits + 1):
        if any(n in s.obs_values for s in ss):
            assert str(n) in v
    dates_months = {s.target_date.month for s in ss}
    for m in dates_months:
        assert MONTHS[m - 1] in v
    assert all(d in v for d in WEEKDAYS)
    for cat in {p.category for p in ds.pois}:
        assert all(w in v for w in cat.split())


@given(samples())
def test_round_trip_with_small_vocab(s):
    # digit fallback makes even a tiny vocabulary lossless for numbers
    v = build_vocab([GOLDEN_PROMPT, GOLDEN_TARGET, " ".join(str(i) for i in range(10)),
                     s.category, "Monday Tuesday Wednesday Thursday Friday Saturday Sunday",
                     " ".join(MONTHS), "(POI) Place-of-Interest an a"])
    for text in (render_prompt(s), render_target(s)):
        assert decode(encode(text, v), v) == text
