"""Dataset construction, capping, serialization and statistics."""

from __future__ import annotations

import bisect
import copy
import json
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from . import presets
from .languages import (
    EOS,
    Family,
    LanguageSpec,
    Task,
    count_permutations,
    dependency_pairs_ood,
    dependency_string,
    enumerate_positives,
    get_language,
    iter_permutations,
    membership,
    next_char_targets,
    sample_negatives_random,
    scramble_compositions,
    scramble_positive_counts,
    unrank_permutation,
)

SPLITS = ("train", "dev", "test", "ood1", "ood2")
IN_SPLITS = ("train", "dev", "test")
SCHEMA_VERSION = 1


class InvalidConfig(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    s: str
    label: int | None = None
    targets: tuple[frozenset[str], ...] | None = None

    def __post_init__(self):
        if (self.label is None) == (self.targets is None):
            raise ValueError("an example carries exactly one of label / targets")
        if self.targets is not None and len(self.targets) != len(self.s):
            raise ValueError(f"{self.s!r}: {len(self.targets)} target sets for {len(self.s)} symbols")


@dataclass
class DatasetBundle:
    language: str
    splits: dict[str, list[Example]]
    manifest: dict = field(default_factory=dict)

    @property
    def spec(self) -> LanguageSpec:
        return get_language(self.language)


def make_example(spec: LanguageSpec, s: str, label: int | None = None) -> Example:
    if spec.task is Task.NEXTCHAR:
        return Example(s, targets=tuple(next_char_targets(spec, s)))
    if label is None:
        label = int(membership(spec, s, strict=True))
    return Example(s, label=label)


# -- splitting ---------------------------------------------------------------


def split_sizes(n: int, ratios=(0.7, 0.15, 0.15)) -> tuple[int, int, int]:
    n_train = round(n * ratios[0])
    n_dev = round(n * ratios[1])
    return n_train, n_dev, n - n_train - n_dev


def _random_split(items: list, rng: random.Random) -> tuple[list, list, list]:
    items = list(items)
    rng.shuffle(items)
    n_train, n_dev, _ = split_sizes(len(items))
    return items[:n_train], items[n_train : n_train + n_dev], items[n_train + n_dev :]


def _rng(seed, purpose: str) -> random.Random:
    return random.Random(f"{seed}:{purpose}")


# -- range validation ----------------------------------------------------------


def _interval(ranges: dict, key: str) -> tuple[int, int] | None:
    if key not in ranges or ranges[key] is None:
        return None
    lo, hi = ranges[key]
    if lo < 1 or hi < lo:
        raise InvalidConfig(f"bad interval {key}={ranges[key]}")
    return int(lo), int(hi)


def _check_ranges(spec: LanguageSpec, ranges: dict) -> tuple[tuple[int, int], tuple | None, tuple | None]:
    if "in" not in ranges:
        raise InvalidConfig("ranges need an 'in' interval")
    known = {"in", "ood1", "ood2"}
    if spec.family is Family.AGREEMENT:
        known |= {"test", "dev"}
    extra = set(ranges) - known
    if extra:
        raise InvalidConfig(f"{spec.id}: unexpected range keys {sorted(extra)}")
    inr = _interval(ranges, "in")
    ood1 = _interval(ranges, "ood1")
    ood2 = _interval(ranges, "ood2")
    if ood1 and ood1[0] <= inr[1]:
        raise InvalidConfig(f"ood1 {list(ood1)} overlaps in-distribution {list(inr)}")
    if ood2 and ood2[0] <= (ood1 or inr)[1]:
        raise InvalidConfig(f"ood2 {list(ood2)} overlaps earlier ranges")
    return inr, ood1, ood2


def held_out_values(ranges: dict) -> tuple[list[int], list[int]]:
    """(test, dev) values of n for the agreement languages."""
    lo, hi = ranges["in"]
    test = ranges.get("test")
    dev = ranges.get("dev")
    if test is None:
        test = [n for n in range(lo, hi + 1) if n % 10 == 5]
    if dev is None:
        dev = [n for n in range(lo, hi + 1) if n % 10 == 6]
    test, dev = sorted(int(n) for n in test), sorted(int(n) for n in dev)
    if set(test) & set(dev):
        raise InvalidConfig("test and dev values of n overlap")
    if any(not lo <= n <= hi for n in test + dev):
        raise InvalidConfig("held-out n outside the in-distribution range")
    return test, dev


# -- caps --------------------------------------------------------------------


def composition(spec: LanguageSpec, s: str) -> tuple[int, ...]:
    counts = Counter(s)
    return tuple(counts[sym] for sym in spec.alphabet)


def _sample_group(
    spec: LanguageSpec, comps: list[tuple[int, ...]], cap: int | None, rng: random.Random
) -> list[str]:
    """All strings with the given count vectors, or a uniform sample of ``cap`` of them."""
    sizes = [count_permutations(c) for c in comps]
    total = sum(sizes)
    if cap is None or total <= cap:
        out = []
        for c in comps:
            out.extend(iter_permutations(c, spec.alphabet))
        return out
    offsets = []
    acc = 0
    for size in sizes:
        offsets.append(acc)
        acc += size
    out = []
    for rank in sorted(rng.sample(range(total), cap)):
        i = bisect.bisect_right(offsets, rank) - 1
        out.append(unrank_permutation(comps[i], spec.alphabet, rank - offsets[i]))
    return out


def _normalize_caps(caps: dict | None) -> dict:
    caps = copy.deepcopy(caps) if caps else {}
    by = caps.get("by", "composition")
    if by not in ("composition", "length"):
        raise InvalidConfig(f"caps.by must be 'composition' or 'length', got {by!r}")
    norm = {"by": by}
    for group in ("in", "ood"):
        entry = caps.get(group) or {}
        norm[group] = {"pos": entry.get("pos"), "neg": entry.get("neg")}
    return norm


def _scramble_pool(
    spec: LanguageSpec, lo: int, hi: int, caps: dict, group: str, rng: random.Random
) -> tuple[list[Example], dict]:
    comps = scramble_compositions(spec, lo, hi)
    grouped: dict[tuple, list[tuple[int, ...]]] = defaultdict(list)
    for c in comps:
        label = int(scramble_positive_counts(spec, c))
        key = c if caps["by"] == "composition" else sum(c)
        grouped[(label, key)].append(c)
    examples: list[Example] = []
    pre = {"pos": 0, "neg": 0}
    for label, key in sorted(grouped, key=lambda k: (str(k[1]), k[0])):
        members = grouped[(label, key)]
        tag = "pos" if label else "neg"
        pre[tag] += sum(count_permutations(c) for c in members)
        for s in _sample_group(spec, members, caps[group][tag], rng):
            examples.append(Example(s, label=label))
    examples.sort(key=lambda e: (len(e.s), e.s))
    return examples, pre


# -- builders ------------------------------------------------------------------


def build_splits(
    language,
    ranges: dict | None = None,
    seed: int = 0,
    caps: dict | None = None,
) -> DatasetBundle:
    """Build train/dev/test/ood1/ood2 for one language.

    ``ranges`` defaults to the full-scale row for the language and ``caps`` to
    the full-scale caps (scramble languages only). Missing OOD keys give empty
    OOD splits.
    """
    spec = get_language(language)
    if ranges is None:
        ranges = presets.ranges_for(spec)
    ranges = copy.deepcopy(ranges)
    inr, ood1, ood2 = _check_ranges(spec, ranges)
    if caps is None and spec.family is Family.SCRAMBLE:
        caps = presets.caps_for(spec)
    builder = {
        Family.COPYING: _build_copying,
        Family.DEPENDENCY: _build_dependency,
        Family.AGREEMENT: _build_agreement,
        Family.SCRAMBLE: _build_scramble,
    }[spec.family]
    splits, extra = builder(spec, ranges, inr, ood1, ood2, seed, caps)
    for name in SPLITS:
        splits.setdefault(name, [])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "language": spec.id,
        "task": spec.task.value,
        "seed": seed,
        "ranges": ranges,
        "caps": _normalize_caps(caps) if spec.family is Family.SCRAMBLE else None,
        **extra,
    }
    bundle = DatasetBundle(spec.id, {k: splits[k] for k in SPLITS}, manifest)
    manifest["counts"] = {k: dict(zip(("pos", "neg"), v)) for k, v in dataset_stats(bundle).items()}
    return bundle


def _build_copying(spec, ranges, inr, ood1, ood2, seed, caps):
    positives = enumerate_positives(spec, *inr)
    pos_split = _random_split(positives, _rng(seed, "split"))
    # one pool-wide negative draw at the positives' length histogram, then each
    # negative follows a same-length positive into its split
    negatives = sample_negatives_random(
        spec, Counter(len(s) for s in positives), positives, seed=f"{seed}:neg:in"
    )
    by_len: dict[int, list[str]] = defaultdict(list)
    for s in negatives:
        by_len[len(s)].append(s)
    splits = {}
    for name, part in zip(IN_SPLITS, pos_split):
        exs = [Example(s, label=1) for s in part]
        for s in part:
            exs.append(Example(by_len[len(s)].pop(), label=0))
        _rng(seed, f"order:{name}").shuffle(exs)
        splits[name] = exs
    for name, interval in (("ood1", ood1), ("ood2", ood2)):
        if interval is None:
            continue
        pos = enumerate_positives(spec, *interval)
        neg = sample_negatives_random(spec, Counter(len(s) for s in pos), pos, seed=f"{seed}:neg:{name}")
        splits[name] = [Example(s, label=1) for s in pos] + [Example(s, label=0) for s in neg]
    return splits, {"negative_policy": "random, length-matched to positives, sampled once per pool"}


def _build_dependency(spec, ranges, inr, ood1, ood2, seed, caps):
    positives = enumerate_positives(spec, *inr)
    parts = _random_split(positives, _rng(seed, "split"))
    splits = {name: [make_example(spec, s) for s in part] for name, part in zip(IN_SPLITS, parts)}
    for name, interval, prev in (("ood1", ood1, inr), ("ood2", ood2, ood1)):
        if interval is None:
            continue
        pairs = dependency_pairs_ood((prev or inr)[1], *interval)
        strings = sorted((dependency_string(spec, n, m) for n, m in pairs), key=lambda s: (len(s), s))
        splits[name] = [make_example(spec, s) for s in strings]
    return splits, {}


def _build_agreement(spec, ranges, inr, ood1, ood2, seed, caps):
    test, dev = held_out_values(ranges)
    ranges["test"], ranges["dev"] = test, dev
    word = lambda n: "".join(sym * n for sym in spec.alphabet)  # noqa: E731
    ns = range(inr[0], inr[1] + 1)
    splits = {
        "train": [make_example(spec, word(n)) for n in ns if n not in test and n not in dev],
        "dev": [make_example(spec, word(n)) for n in dev],
        "test": [make_example(spec, word(n)) for n in test],
    }
    for name, interval in (("ood1", ood1), ("ood2", ood2)):
        if interval is not None:
            splits[name] = [make_example(spec, word(n)) for n in range(interval[0], interval[1] + 1)]
    return splits, {}


def _build_scramble(spec, ranges, inr, ood1, ood2, seed, caps):
    caps = _normalize_caps(caps)
    pool, pre_in = _scramble_pool(spec, inr[0], inr[1], caps, "in", _rng(seed, "cap:in"))
    by_len: dict[int, list[Example]] = defaultdict(list)
    for ex in pool:
        by_len[len(ex.s)].append(ex)
    splits = {name: [] for name in IN_SPLITS}
    split_rng = _rng(seed, "split")
    for length in sorted(by_len):
        for name, part in zip(IN_SPLITS, _random_split(by_len[length], split_rng)):
            splits[name].extend(part)
    precap = {"in": pre_in}
    for name, interval in (("ood1", ood1), ("ood2", ood2)):
        if interval is None:
            continue
        exs, pre = _scramble_pool(spec, interval[0], interval[1], caps, "ood", _rng(seed, f"cap:{name}"))
        splits[name] = exs
        precap[name] = pre
    in_strings = {e.s for e in pool}
    for name in ("ood1", "ood2"):
        if any(e.s in in_strings for e in splits.get(name, [])):
            raise AssertionError(f"{name} shares strings with the in-distribution pool")
    return splits, {"precap": precap, "negative_policy": "all non-members with bounded symbol counts"}


def apply_caps(bundle: DatasetBundle, caps: dict, seed: int = 0) -> DatasetBundle:
    """Downsample each split so no (label, group) exceeds its cap.

    Groups are symbol-count vectors or string lengths per ``caps['by']``.
    Train/dev/test use the ``in`` caps and the OOD splits the ``ood`` caps.
    """
    caps = _normalize_caps(caps)
    spec = bundle.spec
    new_splits = {}
    log = {}
    for name, examples in bundle.splits.items():
        group = "in" if name in IN_SPLITS else "ood"
        buckets: dict[tuple, list[int]] = defaultdict(list)
        for i, ex in enumerate(examples):
            key = composition(spec, ex.s) if caps["by"] == "composition" else len(ex.s)
            buckets[(ex.label, key)].append(i)
        keep: set[int] = set()
        rng = _rng(seed, f"apply-cap:{name}")
        for (label, key), idx in sorted(buckets.items(), key=lambda kv: (str(kv[0][1]), str(kv[0][0]))):
            cap = caps[group]["neg" if label == 0 else "pos"]
            if cap is not None and len(idx) > cap:
                idx = rng.sample(idx, cap)
            keep.update(idx)
        new_splits[name] = [ex for i, ex in enumerate(examples) if i in keep]
        log[name] = {"pre": len(examples), "post": len(new_splits[name])}
    manifest = copy.deepcopy(bundle.manifest)
    manifest.setdefault("cap_log", []).append({"caps": caps, "seed": seed, "counts": log})
    out = DatasetBundle(bundle.language, new_splits, manifest)
    manifest["counts"] = {k: dict(zip(("pos", "neg"), v)) for k, v in dataset_stats(out).items()}
    return out


# -- statistics ----------------------------------------------------------------


def dataset_stats(bundle: DatasetBundle) -> dict[str, tuple[int, int | None]]:
    """Per split (positives, negatives); negatives are None for next-char data."""
    nextchar = bundle.spec.task is Task.NEXTCHAR
    stats = {}
    for name in SPLITS:
        exs = bundle.splits.get(name, [])
        if nextchar:
            stats[name] = (len(exs), None)
        else:
            pos = sum(1 for e in exs if e.label == 1)
            stats[name] = (pos, len(exs) - pos)
    return stats


def format_stats(bundle: DatasetBundle) -> str:
    cells = []
    for pos, neg in dataset_stats(bundle).values():
        cells.append(f"{pos}/{'—' if neg is None else neg}")
    return ", ".join(cells)


# -- serialization ---------------------------------------------------------------


def example_to_record(ex: Example, spec: LanguageSpec) -> dict:
    if ex.targets is None:
        return {"s": ex.s, "label": ex.label}
    order = {sym: i for i, sym in enumerate(spec.vocab)}
    return {"s": ex.s, "targets": [sorted(t, key=order.__getitem__) for t in ex.targets]}


def _dump(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False)


def write_dataset(bundle: DatasetBundle, path) -> Path:
    """Write ``<split>.jsonl`` files and ``manifest.json`` into directory ``path``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    spec = bundle.spec
    for name in SPLITS:
        with open(root / f"{name}.jsonl", "w", encoding="utf-8") as fh:
            for ex in bundle.splits.get(name, []):
                fh.write(_dump(example_to_record(ex, spec)))
                fh.write("\n")
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(bundle.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return root


def _parse_record(line: str, where: str, spec: LanguageSpec, validate: bool) -> Example:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{where}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict) or not isinstance(rec.get("s"), str):
        raise DatasetFormatError(f"{where}: record needs a string field 's'")
    s = rec["s"]
    vocab = set(spec.vocab)
    try:
        if "targets" in rec:
            targets = tuple(frozenset(t) for t in rec["targets"])
            if any(not t or not t <= vocab for t in targets):
                raise DatasetFormatError(f"{where}: target symbols outside {spec.vocab}")
            ex = Example(s, targets=targets)
        elif rec.get("label") in (0, 1) and not isinstance(rec["label"], bool):
            ex = Example(s, label=rec["label"])
        else:
            raise DatasetFormatError(f"{where}: record needs 'label' (0/1) or 'targets'")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DatasetFormatError):
            raise
        raise DatasetFormatError(f"{where}: {exc}") from None
    if validate:
        if set(s) - set(spec.alphabet):
            raise DatasetFormatError(f"{where}: symbols outside alphabet in {s!r}")
        if ex.targets is not None:
            if not membership(spec, s) or ex.targets != tuple(next_char_targets(spec, s)):
                raise DatasetFormatError(f"{where}: targets disagree with the {spec.id} oracle")
        elif ex.label != int(membership(spec, s, strict=True)):
            raise DatasetFormatError(f"{where}: label {ex.label} disagrees with the {spec.id} oracle")
    return ex


def read_dataset(path, validate: bool = True) -> DatasetBundle:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FileNotFoundError(f"no dataset manifest under {root}") from None
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{root / 'manifest.json'}: invalid JSON ({exc.msg})") from None
    spec = get_language(manifest["language"])
    splits = {}
    for name in SPLITS:
        file = root / f"{name}.jsonl"
        exs = []
        if file.exists():
            with open(file, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if line.strip():
                        exs.append(_parse_record(line, f"{file}:{lineno}", spec, validate))
        splits[name] = exs
    return DatasetBundle(spec.id, splits, manifest)


def iter_strings(examples: Iterable[Example]) -> list[str]:
    return [e.s for e in examples]


__all__ = [
    "EOS",
    "SPLITS",
    "DatasetBundle",
    "DatasetFormatError",
    "Example",
    "InvalidConfig",
    "apply_caps",
    "build_splits",
    "dataset_stats",
    "format_stats",
    "read_dataset",
    "write_dataset",
]
