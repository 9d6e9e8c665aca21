import json
import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mcsl import presets
from mcsl.data import build_splits
from mcsl.model import LSTM, TRANSFORMER, ModelConfig, load_checkpoint
from mcsl.train import (
    EarlyStopping,
    TrainConfig,
    TrainResult,
    TrainingDiverged,
    classification_loss,
    default_configs,
    grid_cells,
    grid_search,
    nextchar_loss,
    save_run,
    train,
)


def tiny(language="ab", family=TRANSFORMER, **tkw):
    m, t = default_configs(language, family)
    m.d_model, m.n_layers, m.n_heads = 16, 1, 1
    t.max_epochs, t.patience = tkw.pop("max_epochs", 3), tkw.pop("patience", 5)
    for k, v in tkw.items():
        setattr(t, k, v)
    return m, t


@pytest.fixture(scope="module")
def ab_bundle():
    return build_splits("ab", {"in": [1, 12], "ood1": [13, 15]})


def test_default_configs():
    m, t = default_configs("crossing", TRANSFORMER)
    assert (m.d_model, m.n_layers, m.n_heads, m.use_pe, m.head) == (64, 1, 4, True, "nextchar")
    assert (t.learning_rate, t.max_epochs, t.patience, t.min_delta, t.batch_size) == (1e-3, 150, 20, 1e-4, 32)
    m, _ = default_configs("ab", TRANSFORMER)
    assert m.use_pe is False
    m, t = default_configs("mix", LSTM)
    assert m.head == "classify" and t.min_delta == 1e-5 and t.patience == 5
    assert TrainConfig.from_dict(t.to_dict()) == t


def test_classification_loss_value():
    scores = torch.tensor([0.0, 2.0])
    got = classification_loss(scores, torch.tensor([1, 0]))
    want = (math.log(2) + math.log(1 + math.e**2)) / 2
    assert got.item() == pytest.approx(want, rel=1e-6)


def test_nextchar_loss_reduction():
    scores = torch.zeros(2, 3, 2)
    targets = torch.zeros(2, 3, 2)
    mask = torch.tensor([[True, True, True], [True, False, False]])
    # every real position costs 2*log2 regardless of length
    assert nextchar_loss(scores, targets, mask).item() == pytest.approx(2 * math.log(2))
    scores[1, 1:] = 100.0
    assert nextchar_loss(scores, targets, mask).item() == pytest.approx(2 * math.log(2))
    with pytest.raises(ValueError):
        nextchar_loss(scores, targets[:, :2], mask)


def test_early_stopping_constant_loss():
    es = EarlyStopping(min_delta=1e-4, patience=3)
    steps = [es.step(e, 1.0) for e in range(1, 10)]
    stop_at = next(i for i, (_, stop) in enumerate(steps, 1) if stop)
    assert stop_at == 4 and es.best_epoch == 1


def test_early_stopping_small_gains_do_not_reset():
    es = EarlyStopping(min_delta=0.1, patience=2)
    assert es.step(1, 1.0) == (True, False)
    assert es.step(2, 0.95) == (True, False)
    assert es.step(3, 0.93) == (True, True)
    assert es.best_epoch == 3


@settings(max_examples=40)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=40), st.integers(1, 5))
def test_early_stopping_best_is_argmin(losses, patience):
    es = EarlyStopping(1e-4, patience)
    seen = []
    for e, v in enumerate(losses, 1):
        seen.append(v)
        if es.step(e, v)[1]:
            break
    assert es.best_loss == min(seen)
    assert seen[es.best_epoch - 1] == min(seen)


def test_training_reduces_loss_and_is_deterministic(ab_bundle):
    m, t = tiny(max_epochs=8, learning_rate=1e-2)
    r1 = train(m, t, ab_bundle)
    r2 = train(m, t, ab_bundle)
    assert r1.history == r2.history
    assert r1.history[-1]["train_loss"] < r1.history[0]["train_loss"]
    assert r1.best_dev_loss == min(h["dev_loss"] for h in r1.history)
    t.seed = 1
    assert train(m, t, ab_bundle).history != r1.history


def test_constant_dev_loss_stops_after_patience_plus_one(ab_bundle):
    m, t = tiny(max_epochs=50, patience=3, learning_rate=0.0, weight_decay=0.0)
    r = train(m, t, ab_bundle)
    assert len(r.history) == 4 and r.stopped_early and r.best_epoch == 1


def test_zero_epochs_returns_initial_model(ab_bundle):
    m, t = tiny(max_epochs=0)
    r = train(m, t, ab_bundle)
    assert r.history == [] and r.best_epoch is None and isinstance(r, TrainResult)


def test_divergence_raises(ab_bundle, monkeypatch):
    import mcsl.train as tr

    real = tr.build_model

    def poisoned(config, seed=0):
        model = real(config, seed)
        with torch.no_grad():
            model.out.bias.fill_(float("nan"))
        return model

    monkeypatch.setattr(tr, "build_model", poisoned)
    m, t = tiny(family=LSTM, max_epochs=3)
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(m, t, ab_bundle)


def test_head_mismatch(ab_bundle):
    m = ModelConfig(alphabet=("a", "b"), d_model=16)
    with pytest.raises(ValueError):
        train(m, TrainConfig(max_epochs=1), ab_bundle)


def test_classification_training_runs():
    b = build_splits("ww", {"in": [1, 4], "ood1": [5, 5]})
    m, t = tiny("ww", family=LSTM, max_epochs=2)
    r = train(m, t, b)
    assert len(r.history) == 2 and all(math.isfinite(h["dev_loss"]) for h in r.history)


def test_save_run(tmp_path, ab_bundle):
    m, t = tiny(max_epochs=2)
    r = train(m, t, ab_bundle)
    d = save_run(tmp_path / "run", r, m, t, dataset="data/ab", manifest=ab_bundle.manifest)
    cfg = json.loads((d / "config.json").read_text())
    assert cfg["language"] == "ab" and cfg["model"]["d_model"] == 16
    lines = (d / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(x) for x in lines] == r.history
    back = load_checkpoint(d / "checkpoint.pt")
    with torch.no_grad():
        assert torch.equal(back.run(["aabb"]).logits, r.model.run(["aabb"]).logits)


def test_grid_cells_order():
    cells = grid_cells(TRANSFORMER, presets.SEARCH_SPACE["copying"])
    assert len(cells) == 3 * 3 * 2 * 3
    assert cells[0] == {"lr": 1e-3, "d_model": 16, "n_layers": 1, "n_heads": 1}
    assert cells[1]["n_heads"] == 2 and cells[3]["n_layers"] == 2
    assert len(grid_cells(LSTM, presets.SEARCH_SPACE["copying"])) == 9


def test_grid_search_picks_lowest_with_first_tie(ab_bundle):
    losses = iter([0.5, 0.2, 0.2, 0.9])

    def fake_train(mcfg, tcfg, bundle):
        return TrainResult(model=None, best_epoch=1, best_dev_loss=next(losses))

    space = {"lr": [1e-3, 5e-4], "d_model": [16, 32], "n_layers": [1], "n_heads": [1]}
    res = grid_search("ab", ab_bundle, TRANSFORMER, space, train_fn=fake_train)
    assert res.best == {"lr": 1e-3, "d_model": 32, "n_layers": 1, "n_heads": 1, "dev_loss": 0.2, "best_epoch": 1}
    assert len(res.leaderboard) == 4


def test_grid_search_real_training(ab_bundle):
    space = {"lr": [1e-2], "d_model": [16], "max_epochs": 2}
    res = grid_search("ab", ab_bundle, LSTM, space)
    assert res.best["d_model"] == 16 and math.isfinite(res.best["dev_loss"])


def test_desk_preset_overrides():
    m, t = default_configs("ww", TRANSFORMER, preset="desk")
    assert (m.d_model, m.n_layers, m.n_heads, t.learning_rate) == (64, 1, 4, 1e-3)
    m, t = default_configs("ww", TRANSFORMER)
    assert (m.d_model, m.n_layers, m.n_heads, t.learning_rate) == (32, 2, 1, 5e-4)
    assert default_configs("crossing", TRANSFORMER, preset="desk")[0] == default_configs("crossing", TRANSFORMER)[0]
    with pytest.raises(ValueError):
        default_configs("ww", TRANSFORMER, preset="huge")
