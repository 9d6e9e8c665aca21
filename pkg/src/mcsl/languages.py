"""The eleven formal languages: membership, enumeration, negatives, next-char targets.

Strings are plain ``str`` over lowercase letters. The end marker is never part
of a language string; it only appears inside next-character target sets.
"""

from __future__ import annotations

import enum
import itertools
import random
import re
from collections import Counter
from dataclasses import dataclass
from math import factorial
from typing import Iterable, Iterator, Mapping, Sequence

EOS = "<eos>"


class Task(str, enum.Enum):
    CLASSIFY = "classify"
    NEXTCHAR = "nextchar"


class Family(str, enum.Enum):
    COPYING = "copying"
    DEPENDENCY = "dependency"
    AGREEMENT = "agreement"
    SCRAMBLE = "scramble"


class InvalidInput(ValueError):
    """A string or argument that violates an operation's precondition."""


class InvalidRange(ValueError):
    pass


class ExhaustionError(RuntimeError):
    """Not enough distinct candidates exist to satisfy a sampling request."""


@dataclass(frozen=True)
class LanguageSpec:
    id: str
    alphabet: tuple[str, ...]
    task: Task
    family: Family
    display: str

    @property
    def vocab(self) -> tuple[str, ...]:
        return self.alphabet + (EOS,)


_SPECS = [
    LanguageSpec("wwr", ("a", "b"), Task.CLASSIFY, Family.COPYING, "ww^R"),
    LanguageSpec("ww", ("a", "b"), Task.CLASSIFY, Family.COPYING, "ww"),
    LanguageSpec("www", ("a", "b"), Task.CLASSIFY, Family.COPYING, "www"),
    LanguageSpec("nesting", ("a", "b", "c", "d"), Task.NEXTCHAR, Family.DEPENDENCY, "a^n b^m c^m d^n"),
    LanguageSpec("crossing", ("a", "b", "c", "d"), Task.NEXTCHAR, Family.DEPENDENCY, "a^n b^m c^n d^m"),
    LanguageSpec("ab", ("a", "b"), Task.NEXTCHAR, Family.AGREEMENT, "a^n b^n"),
    LanguageSpec("abc", ("a", "b", "c"), Task.NEXTCHAR, Family.AGREEMENT, "a^n b^n c^n"),
    LanguageSpec("abcd", ("a", "b", "c", "d"), Task.NEXTCHAR, Family.AGREEMENT, "a^n b^n c^n d^n"),
    LanguageSpec("abcde", ("a", "b", "c", "d", "e"), Task.NEXTCHAR, Family.AGREEMENT, "a^n b^n c^n d^n e^n"),
    LanguageSpec("mix", ("a", "b", "c"), Task.CLASSIFY, Family.SCRAMBLE, "MIX"),
    LanguageSpec("o2", ("a", "b", "c", "d"), Task.CLASSIFY, Family.SCRAMBLE, "O2"),
]

LANGUAGES: dict[str, LanguageSpec] = {spec.id: spec for spec in _SPECS}

_ALIASES = {"palindrome": "wwr", "copy": "ww", "doublecopy": "www", "O2": "o2", "MIX": "mix"}


def get_language(name: str | LanguageSpec) -> LanguageSpec:
    if isinstance(name, LanguageSpec):
        return name
    key = _ALIASES.get(name, name)
    try:
        return LANGUAGES[key]
    except KeyError:
        raise KeyError(f"unknown language {name!r}; choose from {sorted(LANGUAGES)}") from None


def _check_alphabet(spec: LanguageSpec, s: str) -> None:
    bad = set(s) - set(spec.alphabet)
    if bad:
        raise InvalidInput(f"{spec.id}: symbols {sorted(bad)} not in alphabet {spec.alphabet}")


_DEP_RE = re.compile(r"^(a+)(b+)(c+)(d+)$")


def dependency_params(spec: LanguageSpec, s: str) -> tuple[int, int] | None:
    """(n, m) for a nesting/crossing member, else None."""
    match = _DEP_RE.match(s)
    if not match:
        return None
    na, nb, nc, nd = (len(g) for g in match.groups())
    if spec.id == "nesting" and na == nd and nb == nc:
        return na, nb
    if spec.id == "crossing" and na == nc and nb == nd:
        return na, nb
    return None


def membership(spec: LanguageSpec, s: str, strict: bool = False) -> bool:
    """True iff ``s`` is in the language. The empty string is never a member.

    ``strict`` only matters for O2: the set definition admits strings such as
    ``ac`` with no b/d at all, which the generated datasets label negative.
    With ``strict=True`` every alphabet symbol must occur at least once.
    """
    spec = get_language(spec)
    _check_alphabet(spec, s)
    if not s:
        return False
    k = len(s)
    if spec.id == "ww":
        return k % 2 == 0 and s[: k // 2] == s[k // 2 :]
    if spec.id == "wwr":
        return k % 2 == 0 and s == s[::-1]
    if spec.id == "www":
        t = k // 3
        return k % 3 == 0 and s[:t] == s[t : 2 * t] == s[2 * t :]
    if spec.family is Family.DEPENDENCY:
        return dependency_params(spec, s) is not None
    if spec.family is Family.AGREEMENT:
        width = len(spec.alphabet)
        if k % width:
            return False
        n = k // width
        return s == "".join(sym * n for sym in spec.alphabet)
    counts = Counter(s)
    if spec.id == "mix":
        return counts["a"] == counts["b"] == counts["c"]
    # o2
    ok = counts["a"] == counts["c"] and counts["b"] == counts["d"]
    if strict:
        ok = ok and all(counts[sym] > 0 for sym in spec.alphabet)
    return ok


# -- combinatorics over symbol-count vectors ---------------------------------


def count_permutations(counts: Sequence[int]) -> int:
    """Number of distinct strings with the given per-symbol counts."""
    total = factorial(sum(counts))
    for c in counts:
        total //= factorial(c)
    return total


def iter_permutations(counts: Sequence[int], alphabet: Sequence[str]) -> Iterator[str]:
    """All distinct strings with ``counts``, in lexicographic order."""
    counts = list(counts)
    length = sum(counts)
    buf: list[str] = []

    def rec() -> Iterator[str]:
        if len(buf) == length:
            yield "".join(buf)
            return
        for i, sym in enumerate(alphabet):
            if counts[i]:
                counts[i] -= 1
                buf.append(sym)
                yield from rec()
                buf.pop()
                counts[i] += 1

    yield from rec()


def unrank_permutation(counts: Sequence[int], alphabet: Sequence[str], rank: int) -> str:
    """The ``rank``-th string (0-based, lexicographic) of :func:`iter_permutations`."""
    counts = list(counts)
    remaining = count_permutations(counts)
    if not 0 <= rank < remaining:
        raise InvalidInput(f"rank {rank} out of range for counts {counts}")
    out = []
    for left in range(sum(counts), 0, -1):
        for i, sym in enumerate(alphabet):
            if not counts[i]:
                continue
            # strings starting with sym: remaining * counts[i] / left
            block = remaining * counts[i] // left
            if rank < block:
                out.append(sym)
                counts[i] -= 1
                remaining = block
                break
            rank -= block
    return "".join(out)


# -- positive enumeration -----------------------------------------------------


def enumerate_positives(spec: LanguageSpec, lo: int, hi: int) -> list[str]:
    """Every member whose native parameter(s) lie in ``[lo, hi]``.

    The native parameter is |w| for the copying family, both n and m for
    nesting/crossing and O2, n for the agreements, and the shared symbol
    count for MIX. Output is length-ascending and lexicographic within a length.
    """
    spec = get_language(spec)
    if lo < 1:
        lo = 1
    if hi < lo:
        return []
    out: list[str] = []
    if spec.family is Family.COPYING:
        for k in range(lo, hi + 1):
            for letters in itertools.product(spec.alphabet, repeat=k):
                w = "".join(letters)
                if spec.id == "ww":
                    out.append(w + w)
                elif spec.id == "wwr":
                    out.append(w + w[::-1])
                else:
                    out.append(w * 3)
        return out
    if spec.family is Family.DEPENDENCY:
        pairs = [(n, m) for n in range(lo, hi + 1) for m in range(lo, hi + 1)]
        return sorted((dependency_string(spec, n, m) for n, m in pairs), key=_canonical)
    if spec.family is Family.AGREEMENT:
        return ["".join(sym * n for sym in spec.alphabet) for n in range(lo, hi + 1)]
    if spec.id == "mix":
        for n in range(lo, hi + 1):
            out.extend(iter_permutations((n, n, n), spec.alphabet))
        return out
    comps = sorted(
        ((n, m, n, m) for n in range(lo, hi + 1) for m in range(lo, hi + 1)),
        key=lambda c: (sum(c), tuple(-x for x in c)),
    )
    for comp in comps:
        out.extend(iter_permutations(comp, spec.alphabet))
    return sorted(out, key=_canonical)


def _canonical(s: str) -> tuple[int, str]:
    return len(s), s


def dependency_string(spec: LanguageSpec, n: int, m: int) -> str:
    if spec.id == "nesting":
        return "a" * n + "b" * m + "c" * m + "d" * n
    if spec.id == "crossing":
        return "a" * n + "b" * m + "c" * n + "d" * m
    raise InvalidInput(f"{spec.id} is not a dependency language")


def dependency_pairs_ood(in_max: int, lo: int, hi: int) -> list[tuple[int, int]]:
    if lo <= in_max:
        raise InvalidRange(f"OOD range start {lo} must exceed in-distribution max {in_max}")
    return [(n, m) for n in range(1, hi + 1) for m in range(1, hi + 1) if max(n, m) >= lo]


def enumerate_ood_crossing(spec: LanguageSpec, in_max: int, lo: int, hi: int) -> list[str]:
    """Nesting/crossing strings with ``(n, m)`` in ``[1,hi]^2`` minus ``[1,lo-1]^2``."""
    spec = get_language(spec)
    if spec.family is not Family.DEPENDENCY:
        raise InvalidInput(f"{spec.id} is not a dependency language")
    pairs = dependency_pairs_ood(in_max, lo, hi)
    return sorted((dependency_string(spec, n, m) for n, m in pairs), key=_canonical)


# -- negatives ----------------------------------------------------------------


def _members_of_length(spec: LanguageSpec, length: int) -> int:
    if spec.id in ("ww", "wwr"):
        return 2 ** (length // 2) if length % 2 == 0 and length else 0
    if spec.id == "www":
        return 2 ** (length // 3) if length % 3 == 0 and length else 0
    raise InvalidInput(f"{spec.id} is not in the copying family")


def sample_negatives_random(
    spec: LanguageSpec,
    lengths: Mapping[int, int],
    positives: Iterable[str] = (),
    seed: int | str = 0,
    count: int | None = None,
    exclude: Iterable[str] = (),
) -> list[str]:
    """Distinct uniformly random non-members with a prescribed length histogram.

    ``lengths`` maps string length to how many negatives of that length to draw.
    Strings in ``positives`` or ``exclude`` (and any oracle member) are never
    returned.
    """
    spec = get_language(spec)
    if spec.family is not Family.COPYING:
        raise InvalidInput("random negatives are only defined for the copying family")
    total = sum(lengths.values())
    if count is not None and count != total:
        raise InvalidInput(f"count {count} disagrees with length histogram total {total}")
    rng = random.Random(seed)
    banned = set(positives) | set(exclude)
    k = len(spec.alphabet)
    out: list[str] = []
    for length in sorted(lengths):
        want = lengths[length]
        if want <= 0:
            continue
        banned_here = {s for s in banned if len(s) == length and not membership(spec, s)}
        available = k**length - _members_of_length(spec, length) - len(banned_here)
        if want > available:
            raise ExhaustionError(
                f"{spec.id}: asked for {want} negatives of length {length}, only {available} exist"
            )
        if want * 2 > available:
            pool = [
                "".join(t)
                for t in itertools.product(spec.alphabet, repeat=length)
                if "".join(t) not in banned_here and not membership(spec, "".join(t))
            ]
            out.extend(rng.sample(pool, want))
            continue
        chosen: set[str] = set()
        picked: list[str] = []
        while len(picked) < want:
            s = "".join(rng.choice(spec.alphabet) for _ in range(length))
            if s in chosen or s in banned_here or membership(spec, s):
                continue
            chosen.add(s)
            picked.append(s)
        out.extend(picked)
    return out


def enumerate_negatives_scramble(spec: LanguageSpec, max_len: int) -> list[str]:
    """Every non-member of length 1..max_len (set-definition oracle)."""
    spec = get_language(spec)
    if spec.family is not Family.SCRAMBLE:
        raise InvalidInput(f"{spec.id} is not a scramble language")
    out = []
    for length in range(1, max_len + 1):
        for letters in itertools.product(spec.alphabet, repeat=length):
            s = "".join(letters)
            if not membership(spec, s):
                out.append(s)
    return out


def scramble_positive_counts(spec: LanguageSpec, counts: Sequence[int]) -> bool:
    """Whether a count vector is a generated (strict) scramble positive."""
    if any(c < 1 for c in counts):
        return False
    if spec.id == "mix":
        return counts[0] == counts[1] == counts[2]
    return counts[0] == counts[2] and counts[1] == counts[3]


def scramble_compositions(spec: LanguageSpec, lo: int, hi: int) -> list[tuple[int, ...]]:
    """Count vectors with every entry in ``[0, hi]`` and maximum entry in ``[lo, hi]``."""
    k = len(spec.alphabet)
    comps = [
        c
        for c in itertools.product(range(hi + 1), repeat=k)
        if sum(c) > 0 and lo <= max(c) <= hi
    ]
    return sorted(comps, key=lambda c: (sum(c), tuple(-x for x in c)))


# -- next-character targets ---------------------------------------------------


def next_char_targets(spec: LanguageSpec, s: str) -> list[frozenset[str]]:
    """Per-position set of symbols that may follow ``s[:i+1]``.

    Implements the (a/b)^n b^(n-1)... schemes for the agreements and the
    (a/b)^n (b/c)^m ... schemes for nesting and crossing.
    """
    spec = get_language(spec)
    if spec.task is not Task.NEXTCHAR:
        raise InvalidInput(f"{spec.id} is a classification language")
    if not membership(spec, s):
        raise InvalidInput(f"{s!r} is not in {spec.id}")
    a_or_b = frozenset("ab")
    eos = frozenset([EOS])
    if spec.family is Family.AGREEMENT:
        n = len(s) // len(spec.alphabet)
        targets = [a_or_b] * n + [frozenset("b")] * (n - 1)
        for sym in spec.alphabet[2:]:
            targets += [frozenset(sym)] * n
        return targets + [eos]
    n, m = dependency_params(spec, s)
    b_or_c = frozenset("bc")
    tail = m if spec.id == "nesting" else n
    last = n if spec.id == "nesting" else m
    return [a_or_b] * n + [b_or_c] * m + [frozenset("c")] * (tail - 1) + [frozenset("d")] * last + [eos]
