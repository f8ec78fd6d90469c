"""Command-line entry point wiring the analyze / embed / train / eval /
select workflow.

Exit codes: 0 success, 2 usage or config error (including missing input
paths), 3 data error (malformed or inconsistent content), 4 io error
(corrupt binary stores, failed writes, transport failures).

A JSON config file (--config) provides defaults for the trainer
hyperparameters and paths; explicit flags override file values. The
resolved configuration is hashed and the fingerprint embedded in every
output for provenance.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import corpus, embeddings, quality, ranker, selection, stylometry, surprisal
from .errors import ConfigError, DataError, ProtocolError, ScarError, StoreError, TransportError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_IO = 4

# RankerConfig fields settable from the config file or flags.
_TRAIN_KEYS = (
    "dim", "hidden", "margin", "form_margin", "align_margin",
    "form_weight", "align_weight", "quality_threshold", "lr",
    "max_epochs", "patience", "batch_size", "seed",
    "train_fraction", "val_fraction", "test_fraction",
)

_TRAIN_DEFAULTS = {
    "hidden": 256, "margin": 1.0, "form_margin": 0.1, "align_margin": 0.1,
    "form_weight": 0.1, "align_weight": 0.1, "quality_threshold": 2.5,
    "lr": 1e-3, "max_epochs": 20, "patience": 3, "batch_size": 32, "seed": 0,
    "train_fraction": 0.8, "val_fraction": 0.1, "test_fraction": 0.1,
}


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        obj = json.loads(p.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc.msg}")
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a JSON object")
    return obj


def resolve_train_config(args: argparse.Namespace) -> dict:
    """Merge defaults, config file, and explicit flags (flags win)."""
    resolved = dict(_TRAIN_DEFAULTS)
    file_cfg = _load_config_file(args.config)
    for key, value in file_cfg.items():
        if key not in _TRAIN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        resolved[key] = value
    for key in _TRAIN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def config_fingerprint(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_analyze(args: argparse.Namespace) -> int:
    ds = corpus.load_examples(args.dataset)
    if len(ds) == 0:
        raise DataError("dataset is empty")
    profiles = [stylometry.style_profile(ex.response) for ex in ds]
    ppls = None
    if args.scores:
        table = surprisal.load_scores(args.scores)
        ppls = []
        for ex in ds:
            key = f"{ex.id}:y"
            if key not in table and ex.id in table:
                key = ex.id
            if key not in table:
                raise DataError(f"scores file has no entry for {ex.id!r}")
            ppls.append(surprisal.perplexity(table[key]))
    report = stylometry.corpus_report(profiles, ppls)
    fingerprint = config_fingerprint(
        {"dataset": str(args.dataset), "scores": str(args.scores or "")}
    )
    payload = json.loads(report.to_json())
    payload["config_hash"] = fingerprint
    out = Path(args.out)
    _write_text(out / "style_report.json", json.dumps(payload, sort_keys=True) + "\n")
    _write_text(out / "style_report.txt", report.to_table() + "\n")
    print(report.to_table())
    return EXIT_OK


def _embed_items(args: argparse.Namespace) -> list[tuple[str, str]]:
    items: list[tuple[str, str]] = []
    if args.kind == "dataset":
        ds = corpus.load_examples(args.input)
        for ex in ds:
            items.append((embeddings.store_key(ex.id, "x"), ex.instruction))
            items.append((embeddings.store_key(ex.id, "y"), ex.response))
    else:
        ts = corpus.load_triplets(args.input)
        for t in ts:
            items.append((embeddings.store_key(t.id, "x"), t.instruction))
            items.append((embeddings.store_key(t.id, "d"), t.direct))
            items.append((embeddings.store_key(t.id, "r"), t.referenced))
            items.append((embeddings.store_key(t.id, "h"), t.human))
    return items


def cmd_embed_toy(args: argparse.Namespace) -> int:
    items = _embed_items(args)
    if not items:
        raise DataError("input file holds no records to embed")
    records = embeddings.embed_texts(items, dim=args.dim, seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    embeddings.write_store(records, args.out)
    print(f"wrote {len(records)} embeddings (dim {args.dim}) to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    resolved = resolve_train_config(args)
    ts = corpus.load_triplets(args.triplets)
    store = embeddings.open_store(args.store)
    if resolved.get("dim") is None:
        resolved["dim"] = store.dim
    fingerprint = config_fingerprint(
        {**resolved, "triplets": str(args.triplets), "store": str(args.store),
         "quality": str(args.quality or "")}
    )
    if args.quality:
        quality_table = quality.load_quality(args.quality)
    elif args.no_quality_mask:
        quality_table = None
    else:
        raise ConfigError(
            "no quality table given; pass --quality or explicitly disable the "
            "constraint with --no-quality-mask"
        )
    spec = corpus.SplitSpec(
        train_fraction=resolved["train_fraction"],
        val_fraction=resolved["val_fraction"],
        test_fraction=resolved["test_fraction"],
        seed=int(resolved["seed"]),
    )
    train_set, val_set, _ = corpus.split(ts, spec)
    cfg = ranker.RankerConfig(
        dim=int(resolved["dim"]),
        hidden=int(resolved["hidden"]),
        margin=float(resolved["margin"]),
        form_margin=float(resolved["form_margin"]),
        align_margin=float(resolved["align_margin"]),
        form_weight=float(resolved["form_weight"]),
        align_weight=float(resolved["align_weight"]),
        quality_threshold=float(resolved["quality_threshold"]),
        lr=float(resolved["lr"]),
        max_epochs=int(resolved["max_epochs"]),
        patience=int(resolved["patience"]),
        batch_size=int(resolved["batch_size"]),
        seed=int(resolved["seed"]),
    )
    params, history = ranker.train(train_set, val_set, store, quality_table, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ranker.save_params(params, out / "ranker_params.bin")
    payload = json.loads(history.to_json())
    payload["config_hash"] = fingerprint
    _write_text(out / "train_history.json", json.dumps(payload, sort_keys=True) + "\n")
    last = history.val_accuracy[-1].as_dict() if history.val_accuracy else {}
    print(
        f"trained {history.epochs_run} epoch(s)"
        + (f", best val {json.dumps(last, sort_keys=True)}" if last else "")
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    params = ranker.load_params(args.params)
    ts = corpus.load_triplets(args.triplets)
    store = embeddings.open_store(args.store)
    result = ranker.evaluate(params, ts, store)
    text = json.dumps(result.as_dict(), sort_keys=True)
    print(text)
    if args.out:
        payload = result.as_dict()
        payload["config_hash"] = config_fingerprint(
            {"params": str(args.params), "triplets": str(args.triplets),
             "store": str(args.store)}
        )
        _write_text(Path(args.out), json.dumps(payload, sort_keys=True) + "\n")
    return EXIT_OK


def _ppl_tables(path: str) -> tuple[dict[str, float], dict[str, float]]:
    """Split an exporter score file into conditional/unconditional PPL maps."""
    table = surprisal.load_scores(path)
    cond: dict[str, float] = {}
    uncond: dict[str, float] = {}
    for sid, score in table.items():
        if sid.endswith(":cond"):
            cond[sid[: -len(":cond")]] = surprisal.perplexity(score)
        elif sid.endswith(":uncond"):
            uncond[sid[: -len(":uncond")]] = surprisal.perplexity(score)
        else:
            cond[sid] = surprisal.perplexity(score)
    return cond, uncond


def _per_example_ppl(table: dict[str, float], ds) -> dict[str, float]:
    """Index PPLs by example id, accepting either "<id>:y" or bare "<id>" keys."""
    out: dict[str, float] = {}
    for ex in ds:
        for key in (f"{ex.id}:y", ex.id):
            if key in table:
                out[ex.id] = table[key]
                break
    return out


def cmd_select(args: argparse.Namespace) -> int:
    ds = corpus.load_examples(args.dataset)
    if len(ds) == 0:
        raise DataError("dataset is empty")
    fingerprint = config_fingerprint(
        {
            "dataset": str(args.dataset), "method": args.method, "k": args.k,
            "params": str(args.params or ""), "store": str(args.store or ""),
            "scores": str(args.scores or ""), "seed": args.seed,
        }
    )
    if args.method == "scar":
        if not args.params or not args.store:
            raise ConfigError("scar selection requires --params and --store")
        params = ranker.load_params(args.params)
        store = embeddings.open_store(args.store)
        scored = selection.score_dataset(params, store, ds, threads=args.threads)
        manifest = selection.select_top_k(
            scored, args.k, method="scar", config_fingerprint=fingerprint
        )
    else:
        aux = selection.BaselineAux(
            seed=args.seed,
            lengths=(
                {ex.id: len(stylometry.tokenize(ex.response).word_tokens) for ex in ds}
                if args.method == "longest"
                else None
            ),
        )
        if args.method in ("perplexity", "ifd"):
            if not args.scores:
                raise ConfigError(f"{args.method} selection requires --scores")
            cond, uncond = _ppl_tables(args.scores)
            aux = selection.BaselineAux(
                seed=args.seed,
                ppl_cond=_per_example_ppl(cond, ds),
                ppl_uncond=_per_example_ppl(uncond, ds) if uncond else None,
            )
        if args.method == "random" and args.seed is None:
            raise ConfigError("random selection requires --seed")
        manifest = selection.baseline_select(
            ds, args.method, args.k, aux, config_fingerprint=fingerprint
        )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    manifest.write(args.out)
    print(f"selected {manifest.count}/{len(ds)} examples -> {args.out}")
    return EXIT_OK


def cmd_cmi(args: argparse.Namespace) -> int:
    samples = surprisal.load_cmi_samples(args.samples)
    i_semantic, i_form = surprisal.cmi(samples)
    print(
        json.dumps(
            {"i_semantic": i_semantic, "i_form": i_form, "n": len(samples)},
            sort_keys=True,
        )
    )
    return EXIT_OK


def cmd_filter_surprisal(args: argparse.Namespace) -> int:
    ts = corpus.load_triplets(args.triplets)
    cond, _ = _ppl_tables(args.scores)
    kept, report = corpus.filter_surprisal_deviation(
        ts, cond, abs_tol=args.abs_tol, cap=args.cap
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.save_triplets(kept, out / "filtered_triplets.jsonl")
    payload = json.loads(report.to_json())
    payload["config_hash"] = config_fingerprint(
        {"triplets": str(args.triplets), "scores": str(args.scores),
         "abs_tol": args.abs_tol, "cap": args.cap}
    )
    _write_text(out / "filter_report.json", json.dumps(payload, sort_keys=True) + "\n")
    print(f"kept {report.kept}, removed {report.removed}")
    return EXIT_OK


def cmd_dedup(args: argparse.Namespace) -> int:
    ds = corpus.load_examples(args.dataset)
    kept, report = corpus.dedup_exact(ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.save_examples(kept, out / "deduped.jsonl")
    payload = json.loads(report.to_json())
    payload["config_hash"] = config_fingerprint({"dataset": str(args.dataset)})
    _write_text(out / "dedup_report.json", json.dumps(payload, sort_keys=True) + "\n")
    print(f"kept {len(kept)}, removed {len(report.removed)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scar",
        description="Style-consistency analysis, ranking, and data selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="corpus style report (six form metrics, optional PPL)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scores", default=None, help="optional score JSONL for a PPL row")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("embed-toy", help="write a feature-hashed embedding store")
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=("dataset", "triplets"), default="dataset")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed_toy)

    p = sub.add_parser("train", help="train the ranker on a triplet set")
    p.add_argument("--triplets", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--quality", default=None, help="quality JSONL for the pair mask")
    p.add_argument(
        "--no-quality-mask", action="store_true",
        help="train without the quality constraint (required when --quality is absent)",
    )
    p.add_argument("--config", default=None, help="JSON config file; flags override")
    p.add_argument("--out", default="scar_out")
    for key in _TRAIN_KEYS:
        if key in ("dim", "hidden", "max_epochs", "patience", "batch_size", "seed"):
            p.add_argument(f"--{key.replace('_', '-')}", type=int, default=None, dest=key)
        else:
            p.add_argument(f"--{key.replace('_', '-')}", type=float, default=None, dest=key)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="ordering accuracies of a trained ranker")
    p.add_argument("--params", required=True)
    p.add_argument("--triplets", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("select", help="rank a dataset and keep the top k percent")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=float, required=True)
    p.add_argument(
        "--method", choices=("scar",) + selection.BASELINE_METHODS, default="scar"
    )
    p.add_argument("--params", default=None)
    p.add_argument("--store", default=None)
    p.add_argument("--scores", default=None, help="score JSONL for perplexity/ifd")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("cmi", help="conditional mutual information from a samples file")
    p.add_argument("--samples", required=True)
    p.set_defaults(func=cmd_cmi)

    p = sub.add_parser("filter-surprisal", help="drop triplets with deviant referenced PPL")
    p.add_argument("--triplets", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--abs-tol", type=float, default=corpus.DEFAULT_PPL_ABS_TOL)
    p.add_argument("--cap", type=float, default=corpus.DEFAULT_PPL_CAP)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_filter_surprisal)

    p = sub.add_parser("dedup", help="exact-duplicate removal with a report")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_dedup)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StoreError, TransportError, ProtocolError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ScarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
