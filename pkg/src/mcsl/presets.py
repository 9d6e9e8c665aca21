"""Dataset ranges, caps, search spaces and final hyperparameters.

``FULL_*`` tables reproduce the published setup. ``DESK_RANGES`` are reduced
ranges that train in minutes on a single CPU core.

Range semantics per family (every interval is inclusive):

* copying: ``|w|``
* dependency: ``max(n, m)``; in-distribution is the full square ``[lo, hi]^2``
* agreement: ``n``; ``test`` / ``dev`` list held-out values of n
* scramble: the largest per-symbol count of a string
"""

from __future__ import annotations

import copy

from .languages import Family, get_language

_COPY = {"in": [1, 11], "ood1": [12, 12], "ood2": [13, 13]}
_DEP = {"in": [1, 50], "ood1": [51, 100], "ood2": [101, 150]}
_AGREE = {
    "in": [1, 50],
    "ood1": [51, 100],
    "ood2": [101, 150],
    "test": [5, 15, 25, 35, 45],
    "dev": [6, 16, 26, 36, 46],
}

FULL_RANGES: dict[str, dict] = {
    "wwr": _COPY,
    "ww": _COPY,
    "www": _COPY,
    "nesting": _DEP,
    "crossing": _DEP,
    "ab": _AGREE,
    "abc": _AGREE,
    "abcd": _AGREE,
    "abcde": _AGREE,
    "mix": {"in": [1, 4], "ood1": [5, 5], "ood2": [6, 6]},
    "o2": {"in": [1, 3], "ood1": [4, 4], "ood2": [5, 5]},
}

_DESK_COPY = {"in": [1, 8], "ood1": [9, 9], "ood2": [10, 10]}
_DESK_DEP = {"in": [1, 20], "ood1": [21, 40], "ood2": [41, 60]}
_DESK_AGREE = {"in": [1, 20], "ood1": [21, 40], "ood2": [41, 60], "test": [5, 15], "dev": [6, 16]}

DESK_RANGES: dict[str, dict] = {
    "wwr": _DESK_COPY,
    "ww": _DESK_COPY,
    "www": _DESK_COPY,
    "nesting": _DESK_DEP,
    "crossing": _DESK_DEP,
    "ab": _DESK_AGREE,
    "abc": _DESK_AGREE,
    "abcd": _DESK_AGREE,
    "abcde": _DESK_AGREE,
    "mix": {"in": [1, 3], "ood1": [4, 4]},
    "o2": {"in": [1, 2], "ood1": [3, 3], "ood2": [4, 4]},
}

# Caps apply per symbol-count vector ("composition") and per label.
FULL_CAPS: dict[str, dict] = {
    "mix": {"by": "composition", "in": {"pos": None, "neg": None}, "ood": {"pos": 756756, "neg": 16632}},
    "o2": {"by": "composition", "in": {"pos": 25200, "neg": 25200}, "ood": {"pos": 6300, "neg": 6300}},
}

# Learning-rate grid, min delta, max epochs, patience.
SEARCH_SPACE: dict[str, dict] = {
    "copying": {"lr": [1e-3, 5e-4, 1e-4], "min_delta": 1e-4, "max_epochs": 200, "patience": 20},
    "crossing-lstm": {"lr": [1e-2, 5e-2, 1e-3], "min_delta": 1e-4, "max_epochs": 150, "patience": 20},
    "crossing-transformer": {"lr": [1e-3, 5e-4, 1e-4], "min_delta": 1e-4, "max_epochs": 150, "patience": 20},
    "multiple-lstm": {"lr": [1e-2, 5e-2, 1e-3], "min_delta": 1e-4, "max_epochs": 3000, "patience": 400},
    "multiple-transformer": {"lr": [1e-3, 5e-4], "min_delta": 1e-4, "max_epochs": 3000, "patience": 400},
    "mix": {"lr": [1e-3, 5e-4, 1e-4], "min_delta": 1e-5, "max_epochs": 50, "patience": 5},
    "o2": {"lr": [5e-4, 3e-4, 1e-4], "min_delta": 1e-5, "max_epochs": 50, "patience": 5},
}

D_MODEL_GRID = [16, 32, 64]
LAYER_GRID = [1, 2]
HEAD_GRID = [1, 2, 4]

# language -> family -> hyperparameters
FINAL_HPARAMS: dict[str, dict[str, dict]] = {
    "wwr": {"lstm": {"d_model": 64, "lr": 1e-4}, "transformer": {"d_model": 64, "lr": 5e-4, "n_layers": 2, "n_heads": 4}},
    "ww": {"lstm": {"d_model": 64, "lr": 5e-4}, "transformer": {"d_model": 32, "lr": 5e-4, "n_layers": 2, "n_heads": 1}},
    "www": {"lstm": {"d_model": 64, "lr": 1e-4}, "transformer": {"d_model": 64, "lr": 5e-4, "n_layers": 2, "n_heads": 4}},
    "nesting": {"lstm": {"d_model": 64, "lr": 5e-2}, "transformer": {"d_model": 64, "lr": 1e-3, "n_layers": 1, "n_heads": 4}},
    "crossing": {"lstm": {"d_model": 64, "lr": 1e-2}, "transformer": {"d_model": 64, "lr": 1e-3, "n_layers": 1, "n_heads": 4}},
    "ab": {"lstm": {"d_model": 64, "lr": 1e-2}, "transformer": {"d_model": 64, "lr": 5e-4, "n_layers": 2, "n_heads": 4}},
    "abc": {"lstm": {"d_model": 64, "lr": 1e-2}, "transformer": {"d_model": 64, "lr": 5e-4, "n_layers": 2, "n_heads": 4}},
    "abcd": {"lstm": {"d_model": 64, "lr": 1e-2}, "transformer": {"d_model": 64, "lr": 5e-4, "n_layers": 1, "n_heads": 4}},
    "abcde": {"lstm": {"d_model": 64, "lr": 5e-2}, "transformer": {"d_model": 64, "lr": 5e-4, "n_layers": 1, "n_heads": 4}},
    "mix": {"lstm": {"d_model": 64, "lr": 5e-4}, "transformer": {"d_model": 64, "lr": 1e-4, "n_layers": 2, "n_heads": 1}},
    "o2": {"lstm": {"d_model": 64, "lr": 5e-4}, "transformer": {"d_model": 64, "lr": 5e-4, "n_layers": 2, "n_heads": 4}},
}


# Desk-scale replacements for FINAL_HPARAMS, re-selected on desk data by the
# same lowest-dev-loss grid search (seed 0); unlisted entries are unchanged.
DESK_HPARAMS: dict[str, dict[str, dict]] = {
    "ww": {"transformer": {"d_model": 64, "lr": 1e-3, "n_layers": 1, "n_heads": 4}},
}


def hparams_for(language, family: str, preset: str = "full") -> dict:
    spec = get_language(language)
    hp = dict(FINAL_HPARAMS[spec.id][family])
    if preset == "desk":
        hp.update(DESK_HPARAMS.get(spec.id, {}).get(family, {}))
    elif preset != "full":
        raise ValueError(f"unknown preset {preset!r}")
    return hp


def ranges_for(language, preset: str = "full") -> dict:
    spec = get_language(language)
    table = {"full": FULL_RANGES, "desk": DESK_RANGES}[preset]
    return copy.deepcopy(table[spec.id])


def caps_for(language) -> dict | None:
    spec = get_language(language)
    caps = FULL_CAPS.get(spec.id)
    return copy.deepcopy(caps) if caps else None


def search_row(language, family: str) -> dict:
    spec = get_language(language)
    if spec.family is Family.COPYING:
        key = "copying"
    elif spec.family is Family.DEPENDENCY:
        key = f"crossing-{family}"
    elif spec.family is Family.AGREEMENT:
        key = f"multiple-{family}"
    else:
        key = spec.id
    return copy.deepcopy(SEARCH_SPACE[key])


def default_use_pe(language) -> bool:
    """Encoders keep sinusoidal PE; agreement decoders drop it."""
    return get_language(language).family is not Family.AGREEMENT
