"""Small Transformer encoder/decoder and LSTM baseline with the two task heads."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .languages import EOS

TRANSFORMER = "transformer"
LSTM = "lstm"
CLASSIFY = "classify"
NEXTCHAR = "nextchar"
BIDIRECTIONAL = "bidirectional"
CAUSAL = "causal"


class VocabularyError(ValueError):
    pass


@dataclass
class ModelConfig:
    family: str = TRANSFORMER
    alphabet: tuple[str, ...] = ("a", "b")
    head: str = CLASSIFY
    d_model: int = 64
    n_layers: int = 1
    n_heads: int = 1
    use_pe: bool = True
    attention: str | None = None
    # mean-pool over EOS as well as the symbols of w
    pool_eos: bool = True
    ff_mult: int = 4
    init: str = "embeddings U[-0.1,0.1]; matrices xavier-uniform; biases 0; layernorm 1/0"

    def __post_init__(self):
        self.alphabet = tuple(self.alphabet)
        if self.family not in (TRANSFORMER, LSTM):
            raise ValueError(f"unknown family {self.family!r}")
        if self.head not in (CLASSIFY, NEXTCHAR):
            raise ValueError(f"unknown head {self.head!r}")
        expected = BIDIRECTIONAL if self.head == CLASSIFY else CAUSAL
        if self.attention is None:
            self.attention = expected
        if self.attention != expected:
            raise ValueError(f"{self.head} head requires {expected} attention")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    @property
    def vocab(self) -> tuple[str, ...]:
        return self.alphabet + (EOS,)

    @property
    def eos_id(self) -> int:
        return len(self.alphabet)

    @property
    def pad_id(self) -> int:
        return len(self.alphabet) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphabet"] = list(self.alphabet)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ForwardTrace:
    logits: torch.Tensor  # (B,) for classify, (B, T, |vocab|) for next-char
    attention: list[torch.Tensor] = field(default_factory=list)  # per layer (B, H, T, T)
    hidden: torch.Tensor | None = None  # (B, T, d_model)
    mask: torch.Tensor | None = None  # (B, T) True on real tokens


def encode(strings: Sequence[str], config: ModelConfig, add_eos: bool | None = None):
    """Token ids right-padded with the pad id, plus the real-token mask.

    Classification inputs get EOS appended unless ``add_eos`` says otherwise.
    """
    if add_eos is None:
        add_eos = config.head == CLASSIFY
    index = {sym: i for i, sym in enumerate(config.alphabet)}
    rows = []
    for s in strings:
        try:
            ids = [index[ch] for ch in s]
        except KeyError as exc:
            raise VocabularyError(f"symbol {exc.args[0]!r} not in vocabulary {config.vocab}") from None
        if add_eos:
            ids.append(config.eos_id)
        rows.append(ids)
    width = max((len(r) for r in rows), default=0)
    tokens = torch.full((len(rows), width), config.pad_id, dtype=torch.long)
    for i, ids in enumerate(rows):
        tokens[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
    return tokens, tokens != config.pad_id


def sinusoidal_pe(positions, d_model: int) -> torch.Tensor:
    """Sine on even dims, cosine on odd dims, wavelengths 2pi .. 10000*2pi."""
    pos = torch.as_tensor(positions, dtype=torch.float64).reshape(-1, 1)
    i = torch.arange(0, d_model, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d_model)
    pe = torch.zeros(pos.shape[0], d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : d_model // 2])
    return pe


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(self, x, allowed):
        B, T, D = x.shape
        split = lambda t: t.view(B, T, self.n_heads, self.d_head).transpose(1, 2)  # noqa: E731
        q, k, v = split(self.q_proj(x)), split(self.k_proj(x)), split(self.v_proj(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        weights = torch.softmax(scores.masked_fill(~allowed, float("-inf")), dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(B, T, D)
        return self.out_proj(out), weights


class EncoderBlock(nn.Module):
    """Post-LN residual block: attention then a ReLU feed-forward, no dropout."""

    def __init__(self, d_model: int, n_heads: int, ff_mult: int):
        super().__init__()
        self.attn = SelfAttention(d_model, n_heads)
        self.norm1 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, ff_mult * d_model), nn.ReLU(), nn.Linear(ff_mult * d_model, d_model))
        self.norm2 = nn.LayerNorm(d_model)

    def forward(self, x, allowed):
        a, weights = self.attn(x, allowed)
        x = self.norm1(x + a)
        x = self.norm2(x + self.ff(x))
        return x, weights


class _Base(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        n_out = 1 if config.head == CLASSIFY else len(config.vocab)
        self.embed = nn.Embedding(len(config.vocab) + 1, config.d_model)
        self.out = nn.Linear(config.d_model, n_out)

    def run(self, strings: Sequence[str]) -> ForwardTrace:
        tokens, mask = encode(strings, self.config)
        return self(tokens, mask)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.startswith("embed"):
                    nn.init.uniform_(p, -0.1, 0.1, generator=gen)
                elif ".norm" in name:
                    nn.init.ones_(p) if name.endswith("weight") else nn.init.zeros_(p)
                elif p.dim() >= 2:
                    nn.init.xavier_uniform_(p, generator=gen)
                else:
                    nn.init.zeros_(p)


class TransformerModel(_Base):
    def __init__(self, config: ModelConfig):
        super().__init__(config)
        self.layers = nn.ModuleList(
            EncoderBlock(config.d_model, config.n_heads, config.ff_mult) for _ in range(config.n_layers)
        )

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor | None = None) -> ForwardTrace:
        cfg = self.config
        if mask is None:
            mask = tokens != cfg.pad_id
        B, T = tokens.shape
        x = self.embed(tokens) * math.sqrt(cfg.d_model)
        if cfg.use_pe:
            x = x + sinusoidal_pe(torch.arange(T), cfg.d_model).to(x.dtype)
        allowed = mask[:, None, None, :]
        if cfg.attention == CAUSAL:
            allowed = allowed & torch.ones(T, T, dtype=torch.bool).tril()
        attention = []
        for layer in self.layers:
            x, w = layer(x, allowed)
            attention.append(w)
        if cfg.head == CLASSIFY:
            pool = mask.clone()
            if not cfg.pool_eos:
                pool &= tokens != cfg.eos_id
            pw = pool.to(x.dtype).unsqueeze(-1)
            pooled = (x * pw).sum(1) / pw.sum(1).clamp(min=1)
            logits = self.out(pooled).squeeze(-1)
        else:
            logits = self.out(x)
        return ForwardTrace(logits, attention, x, mask)


class LSTMModel(_Base):
    def __init__(self, config: ModelConfig):
        super().__init__(config)
        self.lstm = nn.LSTM(config.d_model, config.d_model, batch_first=True)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor | None = None) -> ForwardTrace:
        cfg = self.config
        if mask is None:
            mask = tokens != cfg.pad_id
        h, _ = self.lstm(self.embed(tokens))
        if cfg.head == CLASSIFY:
            # right padding: the EOS state is at the last real position
            last = mask.long().sum(1) - 1
            pooled = h[torch.arange(h.shape[0]), last]
            logits = self.out(pooled).squeeze(-1)
        else:
            logits = self.out(h)
        return ForwardTrace(logits, [], h, mask)


def build_model(config: ModelConfig, seed: int = 0) -> _Base:
    """Fresh model with deterministic initial parameters for ``seed``."""
    model = TransformerModel(config) if config.family == TRANSFORMER else LSTMModel(config)
    model.reset_parameters(seed)
    return model


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, torch.Tensor]:
    return build_model(config, seed).state_dict()


@torch.no_grad()
def predict(model: _Base, strings: Sequence[str], batch_size: int = 256):
    """Class labels (list of int) or per-string k-hot boolean tensors (T, |vocab|)."""
    model.eval()
    out = []
    for i in range(0, len(strings), batch_size):
        trace = model.run(strings[i : i + batch_size])
        # sigmoid(x) >= 0.5 exactly when x >= 0
        hits = trace.logits >= 0
        if model.config.head == CLASSIFY:
            out.extend(int(v) for v in hits.tolist())
        else:
            lengths = trace.mask.sum(1).tolist()
            out.extend(hits[j, :n] for j, n in enumerate(lengths))
    return out


def khot(targets: Sequence[frozenset], vocab: Sequence[str]) -> torch.Tensor:
    index = {sym: i for i, sym in enumerate(vocab)}
    t = torch.zeros(len(targets), len(vocab))
    for pos, allowed in enumerate(targets):
        for sym in allowed:
            t[pos, index[sym]] = 1.0
    return t


def save_checkpoint(model: _Base, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"format": "mcsl-checkpoint", "version": 1, "config": model.config.to_dict(), "state_dict": model.state_dict()}, path)
    return path


def load_checkpoint(path) -> _Base:
    blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    if blob.get("format") != "mcsl-checkpoint":
        raise ValueError(f"{path} is not a model checkpoint")
    config = ModelConfig.from_dict(blob["config"])
    model = TransformerModel(config) if config.family == TRANSFORMER else LSTMModel(config)
    model.load_state_dict(blob["state_dict"])
    model.to(next(iter(blob["state_dict"].values())).dtype)
    return model
