"""Command-line driver.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import plots, synth
from .alignment import ProjectionModel, TrainingTriplet, train
from .attention_index import AttentionIndex, build_index, training_matches
from .doc_model import (doc_from_obj, doc_to_obj, load_table, parse_doc_json,
                        parse_hocr, table_to_rows)
from .encoders import (encode_document, encode_tuple, read_embedding_file,
                       span_key, split_span_key, write_embedding_file)
from .errors import JunoError
from .evaluation import (bench_pruning, evaluate, label_efficiency_curve,
                         read_gold, write_gold)
from .pipeline import PreparedTable, latency_stats, match_corpus, read_results, write_results

log = logging.getLogger("juno")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# file helpers


def read_docs(path) -> list:
    docs = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if line.strip():
                try:
                    docs.append(doc_from_obj(json.loads(line)))
                except json.JSONDecodeError as e:
                    raise JunoError(f"{path}:{n}: invalid JSON: {e}") from None
    return docs


def write_docs(docs, path):
    with open(path, "w", encoding="utf-8") as f:
        for d in docs:
            f.write(json.dumps(doc_to_obj(d), ensure_ascii=False, separators=(",", ":")) + "\n")


def read_triplets(path):
    train_set, val_set = [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            o = json.loads(line)
            t = TrainingTriplet(o["doc_id"], int(o["word_index"]), o["positive"], o["negative"])
            (val_set if o.get("split") == "val" else train_set).append(t)
    return train_set, val_set


def write_triplets(train_set, val_set, path):
    with open(path, "w", encoding="utf-8") as f:
        for split, ts in (("train", train_set), ("val", val_set)):
            for t in ts:
                f.write(json.dumps({"doc_id": t.doc_id, "word_index": t.word_index,
                                    "positive": t.positive, "negative": t.negative,
                                    "split": split}) + "\n")


def read_table(path):
    with open(path, "rb") as f:
        return load_table(f.read())


def table_arrays(schema, tuples, tuple_emb, d):
    ids = [t.tuple_id for t in tuples]
    missing = np.array([[v is None for v in t.values] for t in tuples], dtype=bool)
    try:
        T = np.stack([np.asarray(tuple_emb[i], dtype=np.float64) for i in ids])
    except KeyError as e:
        raise JunoError(f"tuple {e} has no embedding") from None
    if T.shape[1:] != (schema.arity, d):
        raise JunoError(f"tuple embeddings have shape {T.shape[1:]}, "
                        f"expected ({schema.arity}, {d})")
    return ids, T, missing


def group_spans(span_emb) -> dict:
    """doc_id -> (W, 4, d) array from a flat span JEMB map."""
    per_doc: dict = {}
    for key, m in span_emb.items():
        doc_id, i = split_span_key(key)
        per_doc.setdefault(doc_id, {})[i] = m
    out = {}
    for doc_id, rows in per_doc.items():
        n = len(rows)
        if sorted(rows) != list(range(n)):
            raise JunoError(f"span records of {doc_id!r} are not contiguous")
        out[doc_id] = np.stack([np.asarray(rows[i], dtype=np.float64) for i in range(n)])
    return out


def span_lookup_from(span_emb) -> dict:
    return {split_span_key(k): np.asarray(m, dtype=np.float64) for k, m in span_emb.items()}


def echo_config(out_path, command, cfg, extra=None):
    payload = {"command": command, "config": cfg.to_dict()}
    if extra:
        payload.update(extra)
    path = f"{out_path}.config.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return path


def _d_of(emb: dict, fallback):
    for m in emb.values():
        return m.shape[1]
    return fallback


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synth(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    c = synth.generate(args.docs, args.tuples, cfg.seed, args.triplets, args.val_triplets,
                       args.doc_words)
    write_docs(c.docs, out / "docs.jsonl")
    with open(out / "table.json", "w", encoding="utf-8") as f:
        json.dump(c.rows, f, indent=1, sort_keys=True)
        f.write("\n")
    write_gold(c.gold, out / "gold.jsonl")
    write_triplets(c.train, c.val, out / "triplets.jsonl")
    echo_config(out / "gen-synth", "gen-synth", cfg,
                {"docs": args.docs, "tuples": args.tuples, "triplets": args.triplets,
                 "val_triplets": args.val_triplets, "doc_words": args.doc_words})
    print(f"wrote {len(c.docs)} documents, {len(c.rows)} tuples, "
          f"{len(c.train)}+{len(c.val)} triplets to {out}")


def cmd_ingest_docs(args, cfg):
    docs = []
    for p in args.inputs:
        p = Path(p)
        data = p.read_bytes()
        if p.suffix.lower() in (".hocr", ".html", ".htm", ".xhtml"):
            doc = parse_hocr(data, doc_id=p.stem)
            if doc.warnings:
                log.warning("%s: %d hOCR warnings (first: %s)", p, len(doc.warnings), doc.warnings[0])
            docs.append(doc)
        elif p.suffix.lower() == ".jsonl":
            docs.extend(read_docs(p))
        else:
            docs.append(parse_doc_json(data))
    ids = [d.doc_id for d in docs]
    if len(set(ids)) != len(ids):
        raise JunoError("duplicate doc ids across inputs")
    docs.sort(key=lambda d: d.doc_id)
    write_docs(docs, args.out)
    echo_config(args.out, "ingest-docs", cfg, {"inputs": [str(p) for p in args.inputs]})
    print(f"ingested {len(docs)} documents, {sum(d.n_words for d in docs)} words")


def cmd_ingest_db(args, cfg):
    schema, tuples = read_table(args.table)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(table_to_rows(schema, tuples), f, indent=1, sort_keys=True)
        f.write("\n")
    echo_config(args.out, "ingest-db", cfg, {"table": args.table})
    print(f"schema ({schema.arity}): {', '.join(schema.attributes)}; {len(tuples)} tuples")


def cmd_encode(args, cfg):
    provider = cfg.provider_config().build()
    docs = read_docs(args.docs)
    schema, tuples = read_table(args.table)
    spans = {}
    for doc in docs:
        for i, m in enumerate(encode_document(doc, provider)):
            spans[span_key(doc.doc_id, i)] = m
    tup = {t.tuple_id: encode_tuple(schema, t, provider) for t in tuples}
    write_embedding_file(spans, args.out_spans, d=cfg.dim)
    write_embedding_file(tup, args.out_tuples, d=cfg.dim)
    echo_config(args.out_spans, "encode", cfg)
    print(f"encoded {len(spans)} spans and {len(tup)} tuples at d={cfg.dim}")


def cmd_train(args, cfg):
    span_emb = read_embedding_file(args.spans)
    tuple_emb = read_embedding_file(args.tuples)
    d = _d_of(span_emb, cfg.dim)
    train_set, val_set = read_triplets(args.triplets)
    result = train(train_set, val_set, span_lookup_from(span_emb),
                   {k: np.asarray(v, dtype=np.float64) for k, v in tuple_emb.items()},
                   cfg.train_config(), ProjectionModel.init(d, cfg.seed))
    result.model.save(args.out)
    log_path = args.log or f"{args.out}.log.jsonl"
    with open(log_path, "w", encoding="utf-8") as f:
        for row in result.log:
            f.write(json.dumps(row) + "\n")
    if args.figure:
        plots.plot_training_log(result.log, args.figure)
    echo_config(args.out, "train", cfg)
    print(f"trained {len(result.log) - 1} epochs; best epoch {result.best_epoch}; "
          f"val loss {result.initial_val_loss:.6f} -> {result.best_val_loss:.6f}")


def cmd_build_index(args, cfg):
    span_emb = read_embedding_file(args.spans)
    tuple_emb = read_embedding_file(args.tuples)
    model = ProjectionModel.load(args.model)
    schema, tuples = read_table(args.table)
    ids, T, missing = table_arrays(schema, tuples, tuple_emb, model.d)
    train_set, _ = read_triplets(args.triplets)
    matches = training_matches(train_set, span_lookup_from(span_emb), dict(zip(ids, T)), model)
    index = build_index(matches, ids, T, missing, model, cfg.eps, cfg.min_pts)
    index.save(args.out)
    echo_config(args.out, "build-index", cfg)
    nd, nt = index.n_centroids()
    print(f"index: {len(matches)} matches -> {nd} span centroids, {nt} tuple centroids")


def cmd_match(args, cfg):
    span_emb = read_embedding_file(args.spans)
    tuple_emb = read_embedding_file(args.tuples)
    model = ProjectionModel.load(args.model)
    schema, tuples = read_table(args.table)
    ids, T, missing = table_arrays(schema, tuples, tuple_emb, model.d)
    opts = cfg.match_options()
    index = AttentionIndex.load(args.index) if (opts.use_attention and args.index) else None
    if opts.use_attention and index is None:
        raise UsageError("match: --index is required unless --no-attention is given")
    docs = group_spans(span_emb)
    if args.docs:
        keep = {d.doc_id for d in read_docs(args.docs)}
        docs = {k: v for k, v in docs.items() if k in keep}
    table = PreparedTable(ids, T, model, missing)
    results = match_corpus(list(docs.items()), table, model, index, opts, cfg.threads)
    write_results(results, args.out)
    echo_config(args.out, "match", cfg)
    stats = latency_stats(results)
    print(f"matched {len(results)} documents; mean comparisons "
          f"{stats.get('mean_comparisons', 0):.1f}; mean latency {stats.get('mean_ms', 0):.2f} ms")


def cmd_eval(args, cfg):
    results = read_results(args.matches)
    gold = read_gold(args.gold)
    report = evaluate(results, gold, [int(k) for k in args.ks.split(",")])
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(report.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
    tsv = Path(args.out).with_suffix(".tsv")
    with open(tsv, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(["k", "precision_pct", "recall_pct", "f1_pct"])
        w.writerows(report.rows())
    if args.figure:
        plots.plot_eval(report, args.figure)
    echo_config(args.out, "eval", cfg)
    for k, p, r, f1 in report.rows():
        print(f"@{k}: P={p:.2f} R={r:.2f} F1={f1:.2f}")


def _synthetic_setup(cfg, n_docs, n_tuples, doc_words, n_triplets):
    from .encoders import HashProvider
    c = synth.generate(n_docs, n_tuples, cfg.seed, n_triplets, max(1, n_triplets // 4), doc_words)
    schema, tuples = load_table(json.dumps(c.rows))
    prov = HashProvider(cfg.dim)
    docs = [(d.doc_id, encode_document(d, prov)) for d in c.docs]
    ids = [t.tuple_id for t in tuples]
    T = np.stack([encode_tuple(schema, t, prov) for t in tuples])
    missing = np.array([[v is None for v in t.values] for t in tuples])
    lookup = {(doc_id, i): m[i] for doc_id, m in docs for i in range(len(m))}
    return c, docs, ids, T, missing, lookup


def cmd_bench(args, cfg):
    out = Path(args.out)
    if args.mode == "pruning":
        c, docs, ids, T, missing, lookup = _synthetic_setup(cfg, args.docs, args.tuples,
                                                            args.doc_words, args.triplets)
        model = ProjectionModel.load(args.model) if args.model else ProjectionModel.init(cfg.dim, cfg.seed)
        index = build_index(training_matches(c.train, lookup, dict(zip(ids, T)), model),
                            ids, T, missing, model, cfg.eps, cfg.min_pts)
        sizes = [int(s) for s in args.db_sizes.split(",")]
        rows = bench_pruning(docs, ids, T, missing, model, index, sizes, cfg.match_options())
        payload = [r.to_json() for r in rows]
        with open(out.with_suffix(".tsv"), "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            w.writerow(["db_size", "comparisons_pruned", "comparisons_unpruned", "comparison_ratio",
                        "latency_pruned_ms", "latency_unpruned_ms", "latency_ratio"])
            for r in rows:
                w.writerow([r.db_size, f"{r.comparisons_pruned:.1f}", f"{r.comparisons_unpruned:.1f}",
                            f"{r.comparison_ratio:.2f}", f"{r.latency_pruned_ms:.3f}",
                            f"{r.latency_unpruned_ms:.3f}", f"{r.latency_ratio:.2f}"])
        if args.figure:
            plots.plot_bench(rows, args.figure)
        for r in rows:
            print(f"db={r.db_size}: comparisons {r.comparisons_unpruned:.0f} -> "
                  f"{r.comparisons_pruned:.0f} ({r.comparison_ratio:.1f}x), latency "
                  f"{r.latency_unpruned_ms:.1f} -> {r.latency_pruned_ms:.1f} ms")
    else:
        sizes = [int(s) for s in args.sizes.split(",")]
        seeds = [int(s) for s in args.seeds.split(",")]
        payload = {}
        for seed in seeds:
            cfg.seed = seed
            c, docs, ids, T, missing, lookup = _synthetic_setup(cfg, args.docs, args.tuples,
                                                                args.doc_words, max(sizes))
            curve = label_efficiency_curve(c.train, c.val, sizes, lookup, ids, T, missing, docs,
                                           c.gold, cfg.train_config(), cfg.match_options(),
                                           seed=seed, threads=cfg.threads)
            payload[seed] = curve
            print(f"seed {seed}: " + ", ".join(f"{s}->{f:.4f}" for s, f in curve.items()))
        with open(out.with_suffix(".tsv"), "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            w.writerow(["seed", "size", "f1_at_1"])
            for seed, curve in payload.items():
                for s, f1 in curve.items():
                    w.writerow([seed, s, f"{f1:.6f}"])
        if args.figure:
            plots.plot_label_efficiency(payload, args.figure)
        payload = {str(k): {str(s): f for s, f in v.items()} for k, v in payload.items()}
    with open(out, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    echo_config(out, "bench", cfg, {"mode": args.mode})


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p):
    p.add_argument("--config", help="TOML config file; flags override its values")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--threads", type=int, dest="threads",
                   help="worker threads (default: $JUNO_THREADS or logical cores)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_dim(p):
    p.add_argument("--dim", type=int, dest="dim", help="embedding dimension (default 768)")


def _add_match_flags(p):
    p.add_argument("--k-spans", type=int, dest="k_spans")
    p.add_argument("--k-tuples", type=int, dest="k_tuples")
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--no-attention", action="store_const", const=False, dest="use_attention",
                   help="ablation: skip pruning and scan every tuple")
    p.add_argument("--no-visual", action="store_const", const=False, dest="use_visual",
                   help="ablation: zero the visual row of every span")


def _add_index_flags(p):
    p.add_argument("--eps", type=float, dest="eps")
    p.add_argument("--min-pts", type=int, dest="min_pts")


def build_parser():
    parser = _Parser(prog="juno", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-synth", help="generate the planted synthetic benchmark")
    p.add_argument("--docs", type=int, default=100)
    p.add_argument("--tuples", type=int, default=1000)
    p.add_argument("--triplets", type=int, default=200)
    p.add_argument("--val-triplets", type=int, default=50)
    p.add_argument("--doc-words", type=int)
    p.add_argument("--out", default="synth")
    _add_common(p)

    p = sub.add_parser("ingest-docs", help="parse hOCR / JSON documents into docs.jsonl")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("ingest-db", help="validate and normalize a JSON table")
    p.add_argument("table")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("encode", help="compute span and tuple embeddings")
    p.add_argument("--docs", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--provider", choices=["hash", "file"], dest="provider")
    p.add_argument("--spans-in", help="file provider: JEMB with word/bigram/trigram rows")
    p.add_argument("--tuples-in", help="file provider: JEMB tuple matrices")
    p.add_argument("--visual-in", help="file provider: JEMB visual rows keyed by doc id")
    p.add_argument("--out-spans", required=True)
    p.add_argument("--out-tuples", required=True)
    _add_dim(p)
    _add_common(p)

    p = sub.add_parser("train", help="fit the alignment layer on triplets")
    for a in ("--spans", "--tuples", "--triplets", "--out"):
        p.add_argument(a, required=True)
    p.add_argument("--log")
    p.add_argument("--figure")
    p.add_argument("--lr", type=float, dest="lr")
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int, dest="epochs")
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--beta1", type=float, dest="beta1")
    p.add_argument("--beta2", type=float, dest="beta2")
    p.add_argument("--patience", type=int, dest="patience")
    p.add_argument("--hinge-margin", type=float, dest="hinge_margin")
    _add_common(p)

    p = sub.add_parser("build-index", help="build the attention index")
    for a in ("--spans", "--tuples", "--table", "--triplets", "--model", "--out"):
        p.add_argument(a, required=True)
    _add_index_flags(p)
    _add_common(p)

    p = sub.add_parser("match", help="match documents against the table")
    for a in ("--spans", "--tuples", "--table", "--model", "--out"):
        p.add_argument(a, required=True)
    p.add_argument("--index")
    p.add_argument("--docs", help="restrict to the documents in this docs.jsonl")
    _add_match_flags(p)
    _add_common(p)

    p = sub.add_parser("eval", help="score match results against gold labels")
    p.add_argument("--matches", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ks", default="1,5,20")
    p.add_argument("--figure")
    _add_common(p)

    p = sub.add_parser("bench", help="pruning economics or label-efficiency on synthetic data")
    p.add_argument("--mode", choices=["pruning", "label-efficiency"], default="pruning")
    p.add_argument("--docs", type=int, default=5)
    p.add_argument("--tuples", type=int, default=10000)
    p.add_argument("--doc-words", type=int, default=50)
    p.add_argument("--triplets", type=int, default=200)
    p.add_argument("--db-sizes", default="100,1000,10000")
    p.add_argument("--sizes", default="50,100,150,200")
    p.add_argument("--seeds", default="7")
    p.add_argument("--model")
    p.add_argument("--out", default="bench.json")
    p.add_argument("--figure")
    _add_dim(p)
    _add_match_flags(p)
    _add_index_flags(p)
    _add_common(p)
    return parser


_COMMANDS = {
    "gen-synth": cmd_gen_synth, "ingest-docs": cmd_ingest_docs, "ingest-db": cmd_ingest_db,
    "encode": cmd_encode, "train": cmd_train, "build-index": cmd_build_index,
    "match": cmd_match, "eval": cmd_eval, "bench": cmd_bench,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = config_mod.load_toml(args.config) if args.config else {}
        flags = dict(vars(args))
        if getattr(args, "spans_in", None) or getattr(args, "tuples_in", None):
            flags["paths"] = {k: v for k, v in (("spans", args.spans_in), ("tuples", args.tuples_in),
                                                ("visual", args.visual_in)) if v}
        if flags.get("threads") is None and os.environ.get("JUNO_THREADS"):
            flags["threads"] = int(os.environ["JUNO_THREADS"])
        cfg = config_mod.resolve(file_values, flags)
        _COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except (JunoError, OSError, KeyError, ValueError) as e:
        print(f"juno {args.command}: error: {e}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
