import itertools
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcsl.languages import (
    EOS,
    LANGUAGES,
    ExhaustionError,
    InvalidInput,
    InvalidRange,
    Task,
    count_permutations,
    enumerate_negatives_scramble,
    enumerate_ood_crossing,
    enumerate_positives,
    get_language,
    iter_permutations,
    membership,
    next_char_targets,
    sample_negatives_random,
    unrank_permutation,
)

from oracles import ALPHABETS, all_strings, is_member, members_up_to, multinomial, prefix_targets

# longest string checked exhaustively, by alphabet size
EXHAUSTIVE_LEN = {2: 12, 3: 9, 4: 7, 5: 6}


def test_registry_shape():
    assert len(LANGUAGES) == 11
    sizes = {k: len(v.alphabet) for k, v in LANGUAGES.items()}
    assert sizes == {k: len(v) for k, v in ALPHABETS.items()}
    classify = {k for k, v in LANGUAGES.items() if v.task is Task.CLASSIFY}
    assert classify == {"wwr", "ww", "www", "mix", "o2"}
    assert get_language("copy").id == "ww"
    with pytest.raises(KeyError):
        get_language("dyck")


@pytest.mark.parametrize("lang", sorted(LANGUAGES))
def test_membership_matches_bruteforce(lang):
    spec = get_language(lang)
    for s in all_strings(ALPHABETS[lang], EXHAUSTIVE_LEN[len(spec.alphabet)]):
        assert membership(spec, s) == is_member(lang, s), s


@pytest.mark.parametrize("lang", sorted(LANGUAGES))
def test_empty_string_not_member(lang):
    assert membership(get_language(lang), "") is False


def test_membership_examples():
    assert membership(get_language("ww"), "abab")
    assert membership(get_language("mix"), "acb")
    assert not membership(get_language("mix"), "ab")
    assert membership(get_language("crossing"), "abbcdd")
    with pytest.raises(InvalidInput):
        membership(get_language("ab"), "abc")


def test_o2_strict_requires_every_symbol():
    o2 = get_language("o2")
    assert membership(o2, "ac") and not membership(o2, "ac", strict=True)
    assert membership(o2, "abcd", strict=True)


@pytest.mark.parametrize("lang", sorted(LANGUAGES))
def test_positives_are_members_sorted_unique(lang):
    spec = get_language(lang)
    hi = {"o2": 2, "mix": 3}.get(lang, 4)
    pos = enumerate_positives(spec, 1, hi)
    assert pos and len(pos) == len(set(pos))
    assert pos == sorted(pos, key=lambda s: (len(s), s))
    assert all(is_member(lang, s) for s in pos)
    assert enumerate_positives(spec, 1, hi) == pos


def test_positive_counts():
    copy = get_language("ww")
    assert len(enumerate_positives(copy, 1, 11)) == 4094 == sum(2**k for k in range(1, 12))
    for k in range(1, 13):
        assert len(enumerate_positives(copy, k, k)) == 2**k
    mix = get_language("mix")
    for n in range(1, 5):
        assert len(enumerate_positives(mix, n, n)) == multinomial(n, n, n)
    assert len(enumerate_positives(mix, 1, 4)) == 36426 == 6 + 90 + 1680 + 34650
    assert enumerate_positives(get_language("crossing"), 1, 1) == ["abcd"]
    assert enumerate_positives(copy, 3, 2) == []


def test_o2_positive_counts():
    o2 = get_language("o2")
    expect = sum(multinomial(n, m, n, m) for n in (1, 2) for m in (1, 2))
    assert len(enumerate_positives(o2, 1, 2)) == expect


def test_ood_crossing():
    crossing = get_language("crossing")
    assert len(enumerate_ood_crossing(crossing, 50, 51, 100)) == 7500 == 100**2 - 50**2
    assert len(enumerate_ood_crossing(crossing, 100, 101, 150)) == 12500 == 150**2 - 100**2
    nesting = get_language("nesting")
    got = enumerate_ood_crossing(nesting, 1, 2, 2)
    assert sorted(got) == sorted(["abbccd", "aabcdd", "aabbccdd"])
    with pytest.raises(InvalidRange):
        enumerate_ood_crossing(crossing, 50, 50, 100)


def test_negatives_random():
    ww = get_language("ww")
    pos = enumerate_positives(ww, 12, 12)
    neg = sample_negatives_random(ww, {24: 4095}, pos, seed=3, count=4095)
    assert len(neg) == len(set(neg)) == 4095
    assert all(len(s) == 24 and not is_member("ww", s) for s in neg)
    assert sample_negatives_random(ww, {2: 1}, {"aa", "bb"}, seed=0)[0] in {"ab", "ba"}
    www = get_language("www")
    got = sample_negatives_random(www, {3: 4}, {"aaa", "bbb"}, seed=1)
    brute = {s for s in all_strings("ab", 3) if len(s) == 3 and not is_member("www", s)}
    assert len(brute) == 6 and len(set(got)) == 4 and set(got) <= brute


def test_negatives_exhaustion_and_determinism():
    ww = get_language("ww")
    with pytest.raises(ExhaustionError):
        sample_negatives_random(ww, {2: 3}, {"aa", "bb"})
    a = sample_negatives_random(ww, {8: 50, 10: 50}, seed=9)
    b = sample_negatives_random(ww, {8: 50, 10: 50}, seed=9)
    c = sample_negatives_random(ww, {8: 50, 10: 50}, seed=10)
    assert a == b and a != c
    with pytest.raises(InvalidInput):
        sample_negatives_random(get_language("mix"), {2: 1})


def test_negatives_scramble_examples():
    mix = get_language("mix")
    assert len(enumerate_negatives_scramble(mix, 2)) == 12
    assert len(enumerate_negatives_scramble(mix, 3)) == 39 - 6 == 33
    o2 = get_language("o2")
    neg = enumerate_negatives_scramble(o2, 2)
    assert len(neg) == 16
    assert {"ac", "ca", "bd", "db"}.isdisjoint(neg)


@pytest.mark.parametrize("lang", ["mix", "o2"])
def test_negatives_scramble_bruteforce(lang):
    neg = enumerate_negatives_scramble(get_language(lang), 5)
    brute = [s for s in all_strings(ALPHABETS[lang], 5) if not is_member(lang, s)]
    assert neg == brute


def test_next_char_examples():
    ab = get_language("ab")
    A, B = frozenset("ab"), frozenset("b")
    assert next_char_targets(ab, "aabb") == [A, A, B, frozenset([EOS])]
    got = next_char_targets(get_language("crossing"), "abbcdd")
    bc, d = frozenset("bc"), frozenset("d")
    assert got == [A, bc, bc, d, d, frozenset([EOS])]
    got = next_char_targets(get_language("abcde"), "abcde")
    assert got == [A, frozenset("c"), frozenset("d"), frozenset("e"), frozenset([EOS])]
    with pytest.raises(InvalidInput):
        next_char_targets(ab, "abb")
    with pytest.raises(InvalidInput):
        next_char_targets(get_language("ww"), "abab")


@pytest.mark.parametrize("lang", ["nesting", "crossing", "ab", "abc", "abcd", "abcde"])
def test_next_char_equals_prefix_semantics(lang):
    spec = get_language(lang)
    universe = members_up_to(lang, 8)
    for s in sorted(members_up_to(lang, 4)):
        assert next_char_targets(spec, s) == prefix_targets(s, universe), s


def test_permutation_helpers():
    counts = (2, 1, 2)
    perms = list(iter_permutations(counts, "abc"))
    brute = sorted({"".join(p) for p in itertools.permutations("aabcc")})
    assert perms == brute
    assert count_permutations(counts) == len(brute)
    assert [unrank_permutation(counts, "abc", r) for r in range(len(brute))] == brute
    with pytest.raises(InvalidInput):
        unrank_permutation(counts, "abc", len(brute))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=3, max_size=3).filter(lambda c: sum(c) > 0), st.data())
def test_unrank_roundtrip(counts, data):
    total = count_permutations(counts)
    rank = data.draw(st.integers(0, total - 1))
    s = unrank_permutation(counts, "abc", rank)
    assert Counter(s) == Counter({sym: c for sym, c in zip("abc", counts) if c})
