"""Losses, the mini-batch training loop with early stopping, and grid search."""

from __future__ import annotations

import copy
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

from . import presets
from .data import DatasetBundle, Example
from .languages import Task, get_language
from .model import CLASSIFY, LSTM, NEXTCHAR, TRANSFORMER, ModelConfig, build_model, encode, khot, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    min_delta: float = 1e-4
    seed: int = 0
    # AdamW defaults
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["betas"] = tuple(d.get("betas", (0.9, 0.999)))
        return cls(**d)


def default_configs(
    language, family: str = TRANSFORMER, use_pe: bool | None = None, seed: int = 0, preset: str = "full"
):
    """Final hyperparameters and early-stopping settings for a language."""
    spec = get_language(language)
    hp = presets.hparams_for(spec, family, preset)
    row = presets.search_row(spec, family)
    head = CLASSIFY if spec.task is Task.CLASSIFY else NEXTCHAR
    mcfg = ModelConfig(
        family=family,
        alphabet=spec.alphabet,
        head=head,
        d_model=hp["d_model"],
        n_layers=hp.get("n_layers", 1),
        n_heads=hp.get("n_heads", 1),
        use_pe=presets.default_use_pe(spec) if use_pe is None else use_pe,
    )
    tcfg = TrainConfig(
        learning_rate=hp["lr"],
        max_epochs=row["max_epochs"],
        patience=row["patience"],
        min_delta=row["min_delta"],
        seed=seed,
    )
    return mcfg, tcfg


# -- losses ----------------------------------------------------------------------


def classification_loss(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy of sigmoid(scores) against 0/1 labels."""
    return F.binary_cross_entropy_with_logits(scores, labels.to(scores.dtype))


def nextchar_loss(scores: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """BCE summed over vocabulary dims, averaged over positions, then over strings.

    ``scores`` and ``targets`` are (B, T, V); ``mask`` (B, T) marks real positions.
    """
    if scores.shape != targets.shape:
        raise ValueError(f"score shape {tuple(scores.shape)} != target shape {tuple(targets.shape)}")
    per_pos = F.binary_cross_entropy_with_logits(scores, targets.to(scores.dtype), reduction="none").sum(-1)
    if mask is None:
        return per_pos.mean(-1).mean()
    m = mask.to(per_pos.dtype)
    return ((per_pos * m).sum(-1) / m.sum(-1)).mean()


# -- batching ----------------------------------------------------------------------


class EncodedSplit:
    """A split pre-tokenized once; ``batch(idx)`` pads a subset."""

    def __init__(self, examples: Sequence[Example], config: ModelConfig):
        self.config = config
        self.examples = list(examples)
        self.strings = [e.s for e in self.examples]
        if config.head == CLASSIFY:
            self.labels = torch.tensor([e.label for e in self.examples], dtype=torch.float32)
        else:
            self.targets = [khot(e.targets, config.vocab) for e in self.examples]

    def __len__(self) -> int:
        return len(self.examples)

    def batch(self, idx: Sequence[int]):
        tokens, mask = encode([self.strings[i] for i in idx], self.config)
        if self.config.head == CLASSIFY:
            return tokens, mask, self.labels[list(idx)]
        t = torch.zeros(len(idx), tokens.shape[1], len(self.config.vocab))
        for row, i in enumerate(idx):
            t[row, : self.targets[i].shape[0]] = self.targets[i]
        return tokens, mask, t


def batch_loss(model, tokens, mask, target) -> torch.Tensor:
    trace = model(tokens, mask)
    if model.config.head == CLASSIFY:
        return classification_loss(trace.logits, target)
    return nextchar_loss(trace.logits, target.to(trace.logits.dtype), mask)


@torch.no_grad()
def split_loss(model, split: EncodedSplit, batch_size: int = 256) -> float:
    """Per-example mean loss over a whole split."""
    model.eval()
    total = 0.0
    for start in range(0, len(split), batch_size):
        idx = list(range(start, min(start + batch_size, len(split))))
        total += batch_loss(model, *split.batch(idx)).item() * len(idx)
    return total / max(len(split), 1)


# -- early stopping ------------------------------------------------------------------


class EarlyStopping:
    """Stop once ``patience`` evaluations pass without beating the best by ``min_delta``.

    ``best_epoch`` tracks the lowest loss ever observed, which is the
    checkpoint returned; the patience counter only resets on a min_delta gain.
    """

    def __init__(self, min_delta: float, patience: int):
        self.min_delta = min_delta
        self.patience = patience
        self.reference = math.inf
        self.best_loss = math.inf
        self.best_epoch: int | None = None
        self.wait = 0

    def step(self, epoch: int, loss: float) -> tuple[bool, bool]:
        """Returns (is_new_best, should_stop)."""
        new_best = loss < self.best_loss
        if new_best:
            self.best_loss = loss
            self.best_epoch = epoch
        if loss < self.reference - self.min_delta:
            self.reference = loss
            self.wait = 0
        else:
            self.wait += 1
        return new_best, self.wait >= self.patience


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_dev_loss: float = math.inf
    stopped_early: bool = False


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    bundle: DatasetBundle,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train on bundle['train'], early-stop on bundle['dev'], return the best-dev model."""
    spec = bundle.spec
    if (spec.task is Task.CLASSIFY) != (model_config.head == CLASSIFY):
        raise ValueError(f"{spec.id} is a {spec.task.value} language but the model head is {model_config.head}")
    if tuple(spec.alphabet) != tuple(model_config.alphabet):
        raise ValueError("model alphabet does not match the dataset language")
    torch.manual_seed(train_config.seed)
    model = build_model(model_config, train_config.seed)
    result = TrainResult(model)
    if train_config.max_epochs <= 0:
        return result
    train_split = EncodedSplit(bundle.splits["train"], model_config)
    dev_split = EncodedSplit(bundle.splits["dev"] or bundle.splits["train"], model_config)
    opt = torch.optim.AdamW(
        model.parameters(),
        lr=train_config.learning_rate,
        betas=train_config.betas,
        eps=train_config.eps,
        weight_decay=train_config.weight_decay,
    )
    gen = torch.Generator().manual_seed(train_config.seed)
    stopper = EarlyStopping(train_config.min_delta, train_config.patience)
    best_state = copy.deepcopy(model.state_dict())
    n = len(train_split)
    for epoch in range(1, train_config.max_epochs + 1):
        model.train()
        order = torch.randperm(n, generator=gen).tolist()
        running = 0.0
        for start in range(0, n, train_config.batch_size):
            idx = order[start : start + train_config.batch_size]
            loss = batch_loss(model, *train_split.batch(idx))
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss.item()} at epoch {epoch}, batch starting {start}; "
                    f"lr={train_config.learning_rate}, max |param|="
                    f"{max(p.detach().abs().max().item() for p in model.parameters()):.3g}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += loss.item() * len(idx)
        dev_loss = split_loss(model, dev_split)
        if not math.isfinite(dev_loss):
            raise TrainingDiverged(f"non-finite dev loss at epoch {epoch}")
        rec = {"epoch": epoch, "train_loss": running / n, "dev_loss": dev_loss}
        result.history.append(rec)
        if on_epoch:
            on_epoch(rec)
        new_best, stop = stopper.step(epoch, dev_loss)
        if new_best:
            best_state = copy.deepcopy(model.state_dict())
        if stop:
            result.stopped_early = True
            break
    model.load_state_dict(best_state)
    result.best_epoch = stopper.best_epoch
    result.best_dev_loss = stopper.best_loss
    return result


# -- run directories ---------------------------------------------------------------


def save_run(run_dir, result: TrainResult, model_config: ModelConfig, train_config: TrainConfig, dataset: str | None = None, manifest: dict | None = None) -> Path:
    """config.json, metrics.jsonl (one line per epoch) and checkpoint.pt."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config = {
        "schema_version": 1,
        "language": manifest.get("language") if manifest else None,
        "dataset": str(dataset) if dataset else None,
        "dataset_seed": manifest.get("seed") if manifest else None,
        "model": model_config.to_dict(),
        "train": train_config.to_dict(),
        "best_epoch": result.best_epoch,
        "best_dev_loss": result.best_dev_loss,
        "stopped_early": result.stopped_early,
    }
    (run_dir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    with open(run_dir / "metrics.jsonl", "w") as fh:
        for rec in result.history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    save_checkpoint(result.model, run_dir / "checkpoint.pt")
    return run_dir


# -- grid search --------------------------------------------------------------------


@dataclass
class GridResult:
    best: dict
    leaderboard: list[dict]


def grid_cells(family: str, search_space: dict) -> list[dict]:
    """Cells in canonical order: lr, then d_model, then layers, then heads."""
    lrs = search_space["lr"]
    dims = search_space.get("d_model", presets.D_MODEL_GRID)
    if family == LSTM:
        return [{"lr": lr, "d_model": d} for lr, d in itertools.product(lrs, dims)]
    layers = search_space.get("n_layers", presets.LAYER_GRID)
    heads = search_space.get("n_heads", presets.HEAD_GRID)
    return [
        {"lr": lr, "d_model": d, "n_layers": nl, "n_heads": nh}
        for lr, d, nl, nh in itertools.product(lrs, dims, layers, heads)
        if d % nh == 0
    ]


def grid_search(
    language,
    bundle: DatasetBundle,
    family: str = TRANSFORMER,
    search_space: dict | None = None,
    seed: int = 0,
    use_pe: bool | None = None,
    train_fn: Callable = train,
) -> GridResult:
    """Train every cell once and keep the lowest best-dev-loss; ties go to the earlier cell."""
    spec = get_language(language)
    space = presets.search_row(spec, family)
    if search_space:
        space.update(search_space)
    base_model, base_train = default_configs(spec, family, use_pe=use_pe, seed=seed)
    base_train.max_epochs = space["max_epochs"]
    base_train.patience = space["patience"]
    base_train.min_delta = space["min_delta"]
    board = []
    best = None
    for cell in grid_cells(family, space):
        mcfg = copy.deepcopy(base_model)
        mcfg.d_model = cell["d_model"]
        mcfg.n_layers = cell.get("n_layers", 1)
        mcfg.n_heads = cell.get("n_heads", 1)
        tcfg = copy.deepcopy(base_train)
        tcfg.learning_rate = cell["lr"]
        res = train_fn(mcfg, tcfg, bundle)
        entry = {**cell, "dev_loss": res.best_dev_loss, "best_epoch": res.best_epoch}
        board.append(entry)
        log.info("grid cell %s -> dev loss %.6g", cell, res.best_dev_loss)
        if best is None or entry["dev_loss"] < best["dev_loss"]:
            best = entry
    return GridResult(best=best, leaderboard=board)
