"""Attention alignment and block statistics, and the counting probe.

Attention matrices passed to the scoring functions cover the string symbols
only: EOS and padding rows/columns are sliced off beforehand.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .languages import Family, LanguageSpec, get_language, membership
from .model import CAUSAL, CLASSIFY
from .train import EarlyStopping

# query symbol -> dependent symbol
DEPENDENTS = {
    "crossing": {"a": "c", "c": "a", "b": "d", "d": "b"},
    "nesting": {"a": "d", "d": "a", "b": "c", "c": "b"},
}


def gold_alignment(spec: LanguageSpec, s: str, causal: bool = False) -> np.ndarray:
    """Boolean (T, T) matrix of the keys an ideal head would attend to from each query."""
    spec = get_language(spec)
    if not membership(spec, s):
        raise ValueError(f"{s!r} is not in {spec.id}")
    T = len(s)
    gold = np.zeros((T, T), dtype=bool)
    if spec.family is Family.COPYING:
        w = T // 3 if spec.id == "www" else T // 2
        for i in range(T):
            if spec.id == "ww":
                gold[i, (i + w) % T] = True
            elif spec.id == "wwr":
                gold[i, T - 1 - i] = True
            else:
                for shift in (-2 * w, -w, w, 2 * w):
                    if 0 <= i + shift < T:
                        gold[i, i + shift] = True
    elif spec.family is Family.DEPENDENCY:
        dep = DEPENDENTS[spec.id]
        arr = np.array(list(s))
        for i, sym in enumerate(s):
            gold[i] = (arr == sym) | (arr == dep[sym])
    else:
        raise ValueError(f"no gold alignment is defined for {spec.id}")
    if causal:
        gold &= np.tril(np.ones((T, T), dtype=bool))
    return gold


def visible_keys(T: int, causal: bool) -> np.ndarray:
    return np.tril(np.ones((T, T), dtype=bool)) if causal else np.ones((T, T), dtype=bool)


def _check(att: np.ndarray, gold: np.ndarray) -> None:
    if att.ndim != 2 or att.shape != gold.shape:
        raise ValueError(f"attention shape {att.shape} does not match gold shape {gold.shape}")


def argmax_hits(att, gold: np.ndarray) -> np.ndarray:
    """Per-row credit for the argmax key being gold.

    Tied maxima share the credit: a row scores |gold ∩ argmax set| / |argmax set|,
    i.e. the hit rate under uniformly random tie-breaking. Rows without any
    gold key are dropped.
    """
    att = np.asarray(att, dtype=np.float64)
    _check(att, gold)
    rows = gold.any(1)
    top = att == att.max(1, keepdims=True)
    credit = (top & gold).sum(1) / top.sum(1)
    return credit[rows]


def alignment_argmax_score(att, gold: np.ndarray) -> float:
    return float(argmax_hits(att, gold).mean())


def mass_per_row(att, gold: np.ndarray) -> np.ndarray:
    att = np.asarray(att, dtype=np.float64)
    _check(att, gold)
    rows = gold.any(1)
    return (att * gold).sum(1)[rows]


def alignment_mass_score(att, gold: np.ndarray) -> float:
    """Mean over query rows of the attention mass that falls on gold keys."""
    return float(mass_per_row(att, gold).mean())


def chance_argmax(gold: np.ndarray, causal: bool = False) -> float:
    """Expected argmax score when the argmax key is uniform over visible keys."""
    vis = visible_keys(gold.shape[0], causal)
    rows = gold.any(1)
    return float(((gold & vis).sum(1) / vis.sum(1))[rows].mean())


def doublecopy_subalignments(att, s: str) -> dict[tuple[int, int], np.ndarray]:
    """Per-row argmax credit for each of the six third-to-third alignments of www.

    Sub-alignment (p, q) restricts queries to third p and keys to third q;
    the gold key is the same offset within q.
    """
    att = np.asarray(att, dtype=np.float64)
    w = len(s) // 3
    out = {}
    for p in range(3):
        for q in range(3):
            if p == q:
                continue
            block = att[p * w : (p + 1) * w, q * w : (q + 1) * w]
            out[(p, q)] = argmax_hits(block, np.eye(w, dtype=bool))
    return out


def block_stats(att, s: str, causal: bool = False) -> dict[tuple[str, str], tuple[float, float]]:
    """Mean and std of attention from every occurrence of one symbol to every (visible) occurrence of another."""
    att = np.asarray(att, dtype=np.float64)
    T = len(s)
    if att.shape != (T, T):
        raise ValueError(f"attention shape {att.shape} does not match string length {T}")
    vis = visible_keys(T, causal)
    arr = np.array(list(s))
    out = {}
    for q in sorted(set(s)):
        for k in sorted(set(s)):
            sel = (arr == q)[:, None] & (arr == k)[None, :] & vis
            if sel.any():
                vals = att[sel]
                out[(q, k)] = (float(vals.mean()), float(vals.std()))
    return out


# -- traces -------------------------------------------------------------------------


@torch.no_grad()
def attention_maps(model, strings: Sequence[str]) -> list[list[np.ndarray]]:
    """For each string, a (layers, heads, T, T) array restricted to the string symbols."""
    model.eval()
    trace = model.run(list(strings))
    stacked = torch.stack(trace.attention, 1).double().numpy()  # B, L, H, T, T
    return [stacked[i, :, :, : len(s), : len(s)] for i, s in enumerate(strings)]


@torch.no_grad()
def hidden_states(model, strings: Sequence[str], batch_size: int = 256) -> list[np.ndarray]:
    """Final-layer per-symbol representations (EOS excluded)."""
    model.eval()
    out = []
    for i in range(0, len(strings), batch_size):
        chunk = list(strings[i : i + batch_size])
        trace = model.run(chunk)
        h = trace.hidden.double().numpy()
        out.extend(h[j, : len(s)] for j, s in enumerate(chunk))
    return out


def head_scores(model, spec: LanguageSpec, strings: Sequence[str], kind: str = "argmax") -> np.ndarray:
    """(layers, heads) alignment scores pooled over all query rows of all strings."""
    spec = get_language(spec)
    causal = model.config.attention == CAUSAL
    cfg = model.config
    pooled = [[[] for _ in range(cfg.n_heads)] for _ in range(cfg.n_layers)]
    for s, maps in zip(strings, _batched_maps(model, strings)):
        gold = gold_alignment(spec, s, causal=causal)
        for layer in range(cfg.n_layers):
            for head in range(cfg.n_heads):
                fn = argmax_hits if kind == "argmax" else mass_per_row
                pooled[layer][head].append(fn(maps[layer, head], gold))
    return np.array([[np.concatenate(h).mean() for h in layer] for layer in pooled])


def _batched_maps(model, strings, batch_size: int = 128):
    for i in range(0, len(strings), batch_size):
        yield from attention_maps(model, strings[i : i + batch_size])


def chance_level(spec: LanguageSpec, strings: Sequence[str], causal: bool = False) -> float:
    """Row-pooled argmax chance level over a set of strings."""
    rows = []
    for s in strings:
        gold = gold_alignment(spec, s, causal=causal)
        vis = visible_keys(len(s), causal)
        keep = gold.any(1)
        rows.append(((gold & vis).sum(1) / vis.sum(1))[keep])
    return float(np.concatenate(rows).mean())


def doublecopy_report(model, strings: Sequence[str]) -> dict:
    """Per head: the six sub-alignment scores, sorted best first."""
    cfg = model.config
    pooled: dict = defaultdict(list)
    for s, maps in zip(strings, _batched_maps(model, strings)):
        for layer in range(cfg.n_layers):
            for head in range(cfg.n_heads):
                for key, hits in doublecopy_subalignments(maps[layer, head], s).items():
                    pooled[(layer, head, key)].append(hits)
    report = {}
    for layer in range(cfg.n_layers):
        for head in range(cfg.n_heads):
            scores = {f"{p}->{q}": float(np.concatenate(pooled[(layer, head, (p, q))]).mean())
                      for p in range(3) for q in range(3) if p != q}
            report[f"L{layer}H{head}"] = dict(sorted(scores.items(), key=lambda kv: -kv[1]))
    return report


def block_report(model, strings: Sequence[str]) -> dict:
    """Per head, block mean/std averaged over strings."""
    causal = model.config.attention == CAUSAL
    cfg = model.config
    acc: dict = defaultdict(list)
    for s, maps in zip(strings, _batched_maps(model, strings)):
        for layer in range(cfg.n_layers):
            for head in range(cfg.n_heads):
                for pair, stat in block_stats(maps[layer, head], s, causal).items():
                    acc[(layer, head, pair)].append(stat)
    report: dict = {}
    for (layer, head, pair), stats in sorted(acc.items()):
        arr = np.array(stats)
        report.setdefault(f"L{layer}H{head}", {})[f"{pair[0]}->{pair[1]}"] = {
            "mean": float(arr[:, 0].mean()),
            "std": float(arr[:, 1].mean()),
        }
    return report


def dump_attention(model, strings: Sequence[str], path) -> Path:
    """JSONL records {string, layer, head, weights} with row-major weights over the model input."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.eval()
    with torch.no_grad(), open(path, "w") as fh:
        for s in strings:
            trace = model.run([s])
            n = int(trace.mask[0].sum())
            for layer, w in enumerate(trace.attention):
                for head in range(w.shape[1]):
                    rec = {"string": s, "layer": layer, "head": head,
                           "weights": w[0, head, :n, :n].double().tolist()}
                    fh.write(json.dumps(rec) + "\n")
    return path


def save_heatmap(att, s: str, path, title: str = "") -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(np.asarray(att), cmap="viridis", vmin=0)
    ax.set_xticks(range(len(s)), list(s))
    ax.set_yticks(range(len(s)), list(s))
    ax.set_xlabel("key")
    ax.set_ylabel("query")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


# -- counting probe -------------------------------------------------------------------


def counting_targets(s: str, alphabet: Sequence[str]) -> np.ndarray:
    """Row t holds the running count of each alphabet symbol in s[:t+1]."""
    index = {sym: i for i, sym in enumerate(alphabet)}
    out = np.zeros((len(s), len(alphabet)), dtype=np.int64)
    running = np.zeros(len(alphabet), dtype=np.int64)
    for t, ch in enumerate(s):
        running[index[ch]] += 1
        out[t] = running
    return out


def control_targets(counts: np.ndarray, seed: int) -> np.ndarray:
    """A seeded shuffle of the rows of a counting target."""
    return counts[np.random.default_rng(seed).permutation(len(counts))]


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.std() == 0 or b.std() == 0:
        return math.nan
    return float(np.corrcoef(a, b)[0, 1])


@dataclass
class ProbeFit:
    mse: float
    pearson: float
    epochs: int

    @property
    def pearson_undefined(self) -> bool:
        return math.isnan(self.pearson)


@dataclass
class ProbeReport:
    mse_counting: float
    mse_control: float
    pearson: float
    pearson_control: float
    n_train: int
    n_test: int

    @property
    def pearson_undefined(self) -> bool:
        return math.isnan(self.pearson)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pearson_undefined"] = self.pearson_undefined
        return d


def train_probe(
    X_train: np.ndarray,
    Y_train: np.ndarray,
    X_test: np.ndarray,
    Y_test: np.ndarray,
    X_dev: np.ndarray | None = None,
    Y_dev: np.ndarray | None = None,
    hidden: int = 64,
    max_epochs: int = 300,
    patience: int = 10,
    min_delta: float = 1e-4,
    lr: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
) -> ProbeFit:
    """One-hidden-layer ReLU MLP regressor with MSE loss and dev early stopping."""
    X_train, Y_train = np.asarray(X_train), np.asarray(Y_train)
    if X_train.shape[0] != Y_train.shape[0] or X_test.shape[0] != Y_test.shape[0]:
        raise ValueError("probe inputs and targets differ in number of rows")
    if X_train.shape[1] != X_test.shape[1] or Y_train.shape[1] != Y_test.shape[1]:
        raise ValueError("train and test feature/target dimensions differ")
    gen = torch.Generator().manual_seed(seed)
    if X_dev is None:
        perm = torch.randperm(len(X_train), generator=gen).numpy()
        n_dev = max(1, len(X_train) // 10)
        X_dev, Y_dev = X_train[perm[:n_dev]], Y_train[perm[:n_dev]]
        X_train, Y_train = X_train[perm[n_dev:]], Y_train[perm[n_dev:]]
    t = lambda a: torch.as_tensor(np.asarray(a), dtype=torch.float32)  # noqa: E731
    xtr, ytr, xdv, ydv, xte = t(X_train), t(Y_train), t(X_dev), t(Y_dev), t(X_test)
    torch.manual_seed(seed)
    net = nn.Sequential(nn.Linear(xtr.shape[1], hidden), nn.ReLU(), nn.Linear(hidden, ytr.shape[1]))
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    loss_fn = nn.MSELoss()
    stopper = EarlyStopping(min_delta, patience)
    best = {k: v.clone() for k, v in net.state_dict().items()}
    epochs = 0
    for epoch in range(1, max_epochs + 1):
        epochs = epoch
        order = torch.randperm(len(xtr), generator=gen)
        for start in range(0, len(xtr), batch_size):
            idx = order[start : start + batch_size]
            loss = loss_fn(net(xtr[idx]), ytr[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        with torch.no_grad():
            dev = loss_fn(net(xdv), ydv).item()
        new_best, stop = stopper.step(epoch, dev)
        if new_best:
            best = {k: v.clone() for k, v in net.state_dict().items()}
        if stop:
            break
    net.load_state_dict(best)
    with torch.no_grad():
        pred = net(xte).double().numpy()
    target = np.asarray(Y_test, dtype=np.float64)
    return ProbeFit(float(((pred - target) ** 2).mean()), pearson(pred, target), epochs)


def _probe_arrays(model, strings, alphabet, control_seed: int | None):
    hs = hidden_states(model, strings)
    ys = []
    for i, s in enumerate(strings):
        y = counting_targets(s, alphabet)
        if control_seed is not None:
            y = control_targets(y, control_seed * 1_000_003 + i)
        ys.append(y)
    return np.concatenate(hs), np.concatenate(ys).astype(np.float64)


def run_counting_probe(model, bundle, seed: int = 0, **probe_kwargs) -> ProbeReport:
    """Probe the positive train/dev/test strings for running counts and the shuffled control."""
    if model.config.head != CLASSIFY:
        raise ValueError("the counting probe expects a classification model")
    spec = bundle.spec
    pos = {name: [e.s for e in bundle.splits[name] if e.label == 1] for name in ("train", "dev", "test")}
    fits = {}
    for kind, cseed in (("counting", None), ("control", seed)):
        arrays = {name: _probe_arrays(model, strings, spec.alphabet, cseed) for name, strings in pos.items()}
        fits[kind] = train_probe(
            *arrays["train"], *arrays["test"], *arrays["dev"], seed=seed, **probe_kwargs
        )
    n_train = sum(len(s) for s in pos["train"])
    n_test = sum(len(s) for s in pos["test"])
    return ProbeReport(
        fits["counting"].mse, fits["control"].mse, fits["counting"].pearson, fits["control"].pearson, n_train, n_test
    )
