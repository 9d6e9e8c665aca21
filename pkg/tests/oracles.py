"""Brute-force reference oracles, written from the language definitions alone.

Nothing here imports the package's enumeration or target code.
"""

from __future__ import annotations

import itertools
from collections import Counter

EOS = "<eos>"

ALPHABETS = {
    "wwr": "ab", "ww": "ab", "www": "ab", "ab": "ab",
    "abc": "abc", "mix": "abc",
    "nesting": "abcd", "crossing": "abcd", "abcd": "abcd", "o2": "abcd",
    "abcde": "abcde",
}


def all_strings(alphabet: str, max_len: int):
    for k in range(1, max_len + 1):
        for t in itertools.product(alphabet, repeat=k):
            yield "".join(t)


def members_up_to(lang: str, max_param: int) -> set[str]:
    """Every member whose structural parameters are all <= max_param."""
    out = set()
    r = range(1, max_param + 1)
    if lang in ("ww", "wwr", "www"):
        for k in r:
            for t in itertools.product("ab", repeat=k):
                w = "".join(t)
                out.add({"ww": w + w, "wwr": w + w[::-1], "www": w + w + w}[lang])
    elif lang == "nesting":
        out = {"a" * n + "b" * m + "c" * m + "d" * n for n in r for m in r}
    elif lang == "crossing":
        out = {"a" * n + "b" * m + "c" * n + "d" * m for n in r for m in r}
    elif lang in ("ab", "abc", "abcd", "abcde"):
        out = {"".join(ch * n for ch in lang) for n in r}
    return out


def is_member(lang: str, s: str) -> bool:
    """Set-definition membership by direct counting / comparison."""
    if not s:
        return False
    c = Counter(s)
    n = len(s)
    if lang == "ww":
        return n % 2 == 0 and s[: n // 2] == s[n // 2 :]
    if lang == "wwr":
        return n % 2 == 0 and s == s[::-1]
    if lang == "www":
        return n % 3 == 0 and s == s[: n // 3] * 3
    if lang == "mix":
        return c["a"] == c["b"] == c["c"]
    if lang == "o2":
        return c["a"] == c["c"] and c["b"] == c["d"]
    if lang in ("nesting", "crossing"):
        na, nb = c["a"], c["b"]
        if lang == "nesting":
            want = "a" * na + "b" * nb + "c" * nb + "d" * na
        else:
            want = "a" * na + "b" * nb + "c" * na + "d" * nb
        return na > 0 and nb > 0 and s == want
    k = len(lang)
    return n % k == 0 and s == "".join(ch * (n // k) for ch in lang)


def prefix_targets(s: str, members: set[str]) -> list[frozenset[str]]:
    """Next-symbol sets by extending each prefix of s against a finite member set."""
    out = []
    for i in range(1, len(s) + 1):
        prefix = s[:i]
        allowed = set()
        for m in members:
            if m.startswith(prefix):
                allowed.add(EOS if len(m) == i else m[i])
        out.append(frozenset(allowed))
    return out


def multinomial(*counts: int) -> int:
    from math import factorial

    r = factorial(sum(counts))
    for c in counts:
        r //= factorial(c)
    return r
