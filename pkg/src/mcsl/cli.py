"""Command-line entry point: ``gen``, ``train``, ``eval`` and ``analyze``.

Datasets land under ``$MCSL_DATA`` (default ``data/``) and runs under
``$MCSL_RUNS`` (default ``runs/``).
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
from pathlib import Path

from . import presets
from .analysis import (
    attention_maps,
    block_report,
    chance_level,
    doublecopy_report,
    dump_attention,
    head_scores,
    run_counting_probe,
    save_heatmap,
)
from .data import (
    SCHEMA_VERSION,
    DatasetFormatError,
    InvalidConfig,
    build_splits,
    dataset_stats,
    format_stats,
    read_dataset,
    write_dataset,
)
from .evaluation import aggregate, evaluate_suite, format_table
from .languages import ExhaustionError, Family, InvalidInput, InvalidRange, Task, get_language
from .model import LSTM, TRANSFORMER, load_checkpoint
from .train import TrainingDiverged, default_configs, grid_search, save_run, train

log = logging.getLogger("mcsl")

ANALYSIS_KINDS = ("alignment", "blocks", "probe")


class CLIError(Exception):
    pass


def data_root() -> Path:
    return Path(os.environ.get("MCSL_DATA", "data"))


def runs_root() -> Path:
    return Path(os.environ.get("MCSL_RUNS", "runs"))


def _seeds(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CLIError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}: invalid JSON ({exc.msg})") from None
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise CLIError(f"{path}: schema_version must be {SCHEMA_VERSION}")
    return cfg


# -- gen -------------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _load_config(args.config)
    language = args.language or cfg.get("language")
    if not language:
        raise CLIError("no language given")
    spec = get_language(language)
    preset = args.preset or cfg.get("preset", "full")
    ranges = cfg.get("ranges") or presets.ranges_for(spec, preset)
    caps = cfg.get("caps")
    if caps is None and spec.family is Family.SCRAMBLE and preset == "full":
        caps = presets.caps_for(spec)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    bundle = build_splits(spec, ranges, seed=seed, caps=caps or {})
    out = Path(args.out) if args.out else data_root() / spec.id
    try:
        write_dataset(bundle, out)
    except OSError as exc:
        raise CLIError(f"cannot write dataset to {out}: {exc}") from None
    print(f"{spec.id}: {format_stats(bundle)}  -> {out}")
    if args.cap_check:
        _print_cap_check(bundle)
    return 0


def _print_cap_check(bundle) -> None:
    pre = bundle.manifest.get("precap")
    post = dataset_stats(bundle)
    if pre is None:
        print("no caps apply to this language")
        return
    in_post = [sum(post[n][i] for n in ("train", "dev", "test")) for i in (0, 1)]
    rows = [("in", pre["in"], in_post)]
    for name in ("ood1", "ood2"):
        if name in pre:
            rows.append((name, pre[name], list(post[name])))
    print("split  pre(pos/neg)  post(pos/neg)")
    for name, before, after in rows:
        print(f"{name:<5}  {before['pos']}/{before['neg']}  {after[0]}/{after[1]}")


# -- train ------------------------------------------------------------------------------


def _dataset_dir(args, language: str) -> Path:
    path = Path(args.data) if args.data else data_root() / language
    if not (path / "manifest.json").exists():
        raise CLIError(f"no dataset at {path}; run `mcsl gen {language}` first")
    return path


def _run_name(language: str, family: str, use_pe: bool, seed: int) -> str:
    tag = "" if family == LSTM else ("-pe" if use_pe else "-nope")
    return f"{language}-{family}{tag}-{seed}"


def cmd_train(args) -> int:
    spec = get_language(args.language)
    data_dir = _dataset_dir(args, spec.id)
    bundle = read_dataset(data_dir)
    if bundle.language != spec.id:
        raise CLIError(f"dataset at {data_dir} is for {bundle.language}, not {spec.id}")
    use_pe = False if args.no_pe else (True if args.pe else None)
    grid_best = None
    if args.grid:
        grid = grid_search(spec, bundle, args.family, seed=args.seeds[0], use_pe=use_pe)
        grid_best = grid.best
        print(f"grid best: {json.dumps(grid.best)}")
    for seed in args.seeds:
        mcfg, tcfg = default_configs(spec, args.family, use_pe=use_pe, seed=seed, preset=args.preset)
        if grid_best:
            mcfg.d_model = grid_best["d_model"]
            mcfg.n_layers = grid_best.get("n_layers", 1)
            mcfg.n_heads = grid_best.get("n_heads", 1)
            tcfg.learning_rate = grid_best["lr"]
        for attr, value in (("d_model", args.d_model), ("n_layers", args.layers), ("n_heads", args.heads)):
            if value is not None:
                setattr(mcfg, attr, value)
        for attr, value in (("learning_rate", args.lr), ("max_epochs", args.max_epochs), ("patience", args.patience)):
            if value is not None:
                setattr(tcfg, attr, value)
        mcfg.__post_init__()  # re-validate after overrides
        result = train(mcfg, tcfg, bundle)
        root = Path(args.runs) if args.runs else runs_root()
        run_dir = root / _run_name(spec.id, mcfg.family, mcfg.use_pe, seed)
        save_run(run_dir, result, mcfg, tcfg, dataset=data_dir.resolve(), manifest=bundle.manifest)
        print(f"{run_dir}: {len(result.history)} epochs, best epoch {result.best_epoch}, "
              f"dev loss {result.best_dev_loss:.6g}")
    return 0


# -- eval --------------------------------------------------------------------------------


def _expand(patterns: list[str]) -> list[Path]:
    out = []
    for pat in patterns:
        hits = sorted(glob.glob(pat)) if glob.has_magic(pat) else [pat]
        out.extend(Path(h) for h in hits if Path(h).is_dir())
    if not out:
        raise CLIError(f"no run directories match {' '.join(patterns)}")
    return out


def _load_run(run_dir: Path):
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise CLIError(f"{run_dir} is not a run directory (no config.json)")
    cfg = json.loads(cfg_path.read_text())
    if not cfg.get("dataset"):
        raise CLIError(f"{run_dir}: config.json does not record a dataset")
    model = load_checkpoint(run_dir / "checkpoint.pt")
    bundle = read_dataset(cfg["dataset"], validate=False)
    return cfg, model, bundle


def _row_label(cfg: dict) -> str:
    m = cfg["model"]
    if m["family"] == LSTM:
        return "LSTM"
    return "Tr.+PE" if m["use_pe"] else "Tr.-PE"


def cmd_eval(args) -> int:
    run_dirs = _expand(args.run_dirs)
    loaded = [(d, *_load_run(d)) for d in run_dirs]
    languages = {cfg.get("language") for _, cfg, _, _ in loaded}
    if len(languages) > 1:
        raise CLIError(f"runs cover different languages: {sorted(map(str, languages))}")
    grouped: dict[str, list[dict]] = {}
    metric = None
    for run_dir, cfg, model, bundle in loaded:
        rep = evaluate_suite(model, bundle, args.splits)
        metric = rep["metric"]
        (run_dir / "eval.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
        grouped.setdefault(_row_label(cfg), []).append(rep)
    rows = {label: aggregate(reps) for label, reps in grouped.items()}
    print(f"{languages.pop()} ({metric}, %, mean ± std over seeds)")
    print(format_table(rows, args.splits))
    return 0


# -- analyze ------------------------------------------------------------------------------


def _analysis_strings(bundle, limit: int) -> list[str]:
    spec = bundle.spec
    seen, out = set(), []
    for name in ("test", "dev", "train"):
        for e in bundle.splits[name]:
            positive = e.targets is not None or e.label == 1
            if positive and e.s not in seen:
                seen.add(e.s)
                out.append(e.s)
    out.sort(key=lambda s: (len(s), s))
    if spec.family is Family.COPYING and len(out) > limit:
        # favour the longest strings, where chance is lowest
        out = out[-limit:]
    return out[:limit]


def cmd_analyze(args) -> int:
    run_dir = Path(args.run_dir)
    cfg, model, bundle = _load_run(run_dir)
    spec = bundle.spec
    out_dir = run_dir / "analysis"
    out_dir.mkdir(exist_ok=True)
    if args.kind == "probe":
        if spec.task is not Task.CLASSIFY or spec.family is not Family.SCRAMBLE:
            raise CLIError(f"the counting probe applies to scramble languages, not {spec.id}")
        report = run_counting_probe(model, bundle, seed=args.seed).to_dict()
    else:
        if model.config.family != TRANSFORMER:
            raise CLIError(f"{args.kind} analysis needs attention weights; {run_dir} is an LSTM run")
        strings = _analysis_strings(bundle, args.max_strings)
        if args.kind == "alignment":
            if spec.family not in (Family.COPYING, Family.DEPENDENCY):
                raise CLIError(f"no gold alignment is defined for {spec.id}")
            causal = model.config.attention == "causal"
            scores = head_scores(model, spec, strings)
            report = {
                "argmax": scores.tolist(),
                "mass": head_scores(model, spec, strings, kind="mass").tolist(),
                "chance": chance_level(spec, strings, causal=causal),
                "best_head": [int(i) for i in divmod(int(scores.argmax()), scores.shape[1])],
                "n_strings": len(strings),
            }
            if spec.id == "www":
                report["doublecopy"] = doublecopy_report(model, strings)
        else:
            report = block_report(model, strings)
        dump_attention(model, strings[: args.dump], out_dir / "attention.jsonl")
        for i, s in enumerate(strings[: args.heatmaps]):
            maps = attention_maps(model, [s])[0]
            for layer in range(maps.shape[0]):
                for head in range(maps.shape[1]):
                    save_heatmap(maps[layer, head], s, out_dir / f"heat-{i}-L{layer}H{head}.png", f"L{layer}H{head}")
    (out_dir / f"{args.kind}.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


# -- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcsl", description="Formal-language datasets, models and analyses.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset")
    g.add_argument("language", nargs="?")
    g.add_argument("--config", help="JSON file with schema_version, ranges, caps, seed")
    g.add_argument("--preset", choices=("full", "desk"))
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory (default $MCSL_DATA/<language>)")
    g.add_argument("--cap-check", action="store_true", help="print pre/post-cap counts")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one run per seed")
    t.add_argument("language")
    t.add_argument("--data", help="dataset directory (default $MCSL_DATA/<language>)")
    t.add_argument("--runs", help="run root (default $MCSL_RUNS)")
    t.add_argument("--family", choices=(TRANSFORMER, LSTM), default=TRANSFORMER)
    pe = t.add_mutually_exclusive_group()
    pe.add_argument("--no-pe", action="store_true")
    pe.add_argument("--pe", action="store_true")
    t.add_argument("--seed", dest="seeds", type=_seeds, default=[0], help="e.g. 1,2,3")
    t.add_argument("--preset", choices=("full", "desk"), default="full",
                   help="hyperparameter table (desk applies desk-scale re-selections)")
    t.add_argument("--lr", type=float)
    t.add_argument("--d-model", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--heads", type=int)
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--grid", action="store_true", help="search the hyperparameter grid first")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate and aggregate runs")
    e.add_argument("run_dirs", nargs="+")
    e.add_argument("--splits", nargs="+", default=["test", "ood1", "ood2"])
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="attention or probe analysis of one run")
    a.add_argument("run_dir")
    a.add_argument("kind", choices=ANALYSIS_KINDS)
    a.add_argument("--max-strings", type=int, default=200)
    a.add_argument("--dump", type=int, default=5, help="strings to dump attention for")
    a.add_argument("--heatmaps", type=int, default=0)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CLIError, InvalidConfig, InvalidInput, InvalidRange, ExhaustionError, DatasetFormatError,
            TrainingDiverged, FileNotFoundError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
