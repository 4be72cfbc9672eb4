"""Command-line entry point wiring ingestion, graph building, embedding,
training, evaluation, reporting, and the synthetic-campaign pipeline."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import embedder, evalkit, fixtures, graphbuild, records, report, synthlab, trainer
from .model import ModelConfig, load_checkpoint, save_checkpoint


def _load_config(path):
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return yaml.safe_load(fh) or {}


def _cfg(config: dict, dotted: str, default=None):
    node = config
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def _ratios(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios must be three comma-separated numbers")
    return tuple(parts)


def cmd_fixture(args):
    recs = fixtures.make_separable_corpus(
        n_nodes=args.nodes, spam_fraction=args.spam_fraction, seed=args.seed
    )
    records.write_reviews(recs, args.out)
    print(f"wrote {len(recs)} records to {args.out}")


def cmd_ingest(args):
    recs = records.ingest_reviews(args.corpus, format=args.format)
    if args.out:
        records.write_reviews(recs, args.out)
    labeled = sum(1 for r in recs if r.label != records.UNKNOWN)
    print(json.dumps({"records": len(recs), "labeled": labeled}))


def cmd_split(args):
    if args.corpus:
        n = len(records.ingest_reviews(args.corpus, format=args.format))
    elif args.nodes:
        n = args.nodes
    else:
        raise SystemExit("split needs --corpus or --nodes")
    split = records.make_split(n, args.ratios, args.seed)
    records.save_split(split, args.out)
    print(json.dumps({"sizes": split.sizes(), "seed": args.seed}))


def cmd_build_graph(args):
    if args.qa:
        recs = records.ingest_qa(args.corpus, format=args.format)
        graph = graphbuild.build_qa_graph(recs)
    else:
        recs = records.ingest_reviews(args.corpus, format=args.format)
        graph = graphbuild.build_review_graph(recs)
    graphbuild.save_graph(graph, args.out)
    print(json.dumps(graphbuild.graph_stats(graph)))


def cmd_graph_stats(args):
    graph = graphbuild.load_graph(args.graph)
    stats = graphbuild.graph_stats(graph)
    print(json.dumps(stats, indent=2))


def cmd_embed(args, config):
    provider = args.provider or _cfg(config, "embedding.provider", "hash")
    if provider == "file":
        matrix = embedder.load_embeddings(args.input)
    else:
        recs = records.ingest_reviews(args.corpus, format=args.format)
        texts = [r.text for r in recs]
        if provider == "hash":
            dim = args.dim or _cfg(config, "embedding.dim", 64)
            matrix = embedder.hash_embed(texts, dim=dim, seed=args.seed)
        elif provider == "service":
            endpoint = args.endpoint or _cfg(config, "embedding.endpoint")
            if not endpoint:
                raise SystemExit("service provider needs --endpoint or embedding.endpoint")
            matrix = embedder.fetch_embeddings(endpoint, texts, batch_size=args.batch_size)
        else:
            raise SystemExit(f"unknown provider {provider!r}")
    embedder.save_embeddings(matrix, args.out)
    print(json.dumps({"nodes": matrix.shape[0], "dim": matrix.shape[1]}))


def cmd_train(args, config):
    graph = graphbuild.load_graph(args.graph)
    x = embedder.load_embeddings(args.embeddings)
    if x.shape[0] != graph.n_nodes:
        raise SystemExit(
            f"embedding rows ({x.shape[0]}) do not match graph nodes ({graph.n_nodes})"
        )
    split = records.load_split(args.split)
    features = embedder.load_embeddings(args.features) if args.features else None
    model_config = ModelConfig(
        emb_dim=x.shape[1],
        layer_width=args.layer_width or _cfg(config, "model.layer_width", 96),
        heads=args.heads or _cfg(config, "model.heads", 3),
        layers=args.layers or _cfg(config, "model.layers", 2),
        attention_scaling=args.attention_scaling
        or _cfg(config, "model.attention_scaling", False),
        use_graph=not args.no_graph,
        feature_dim=0 if features is None else features.shape[1],
    )
    train_config = trainer.TrainConfig(
        epochs=args.epochs or _cfg(config, "train.epochs", 50),
        batch_size=args.batch_size or _cfg(config, "train.batch_size", 256),
        lr=args.lr or _cfg(config, "train.lr", 1e-3),
        seed=args.seed,
        early_stop_patience=args.patience or _cfg(config, "train.early_stop_patience", 10),
        grad_clip=0.0 if args.no_grad_clip else _cfg(config, "train.grad_clip", 5.0),
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = trainer.train(
        graph, x, features, split, model_config, train_config,
        log_path=out_dir / "train_log.jsonl",
    )
    save_checkpoint(out_dir / "checkpoint.fsq1", model_config, result.best_params)
    scores = trainer.eval_scores(graph, x, features, split, result.best_params, model_config)
    report.write_scores_csv(out_dir / "scores.csv", scores, graph.labels, split.tags)
    print(json.dumps({
        "epochs_run": len(result.log),
        "best_epoch": result.best_epoch,
        "best_valid_auc": result.best_valid_auc,
    }))


def cmd_evaluate(args):
    scores, labels, splits = report.read_scores_csv(args.scores)
    wanted = {records.TEST}
    if args.include_valid:
        wanted.add(records.VALID)
    mask = np.isin(splits, list(wanted)) & (labels >= 0)
    if not np.any(mask):
        raise SystemExit("no labeled nodes in the selected splits")
    sel_scores, sel_labels = scores[mask], labels[mask]
    auc = evalkit.auc(sel_scores, sel_labels)
    precision, recall = evalkit.precision_recall_at_ratio(sel_scores, sel_labels, args.ratio)
    k = int(np.floor(args.ratio * len(sel_scores) + 0.5))
    metrics = {"auc": auc, "precision": precision, "recall": recall,
               "ratio": args.ratio, "k": k}
    payload = json.dumps(metrics, indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    if args.roc_out:
        report.write_roc_csv(sel_scores, sel_labels, args.roc_out)
    print(payload)


def cmd_report(args):
    written = report.render_report(
        args.out_dir, log_path=args.log, scores_path=args.scores, ratio=args.ratio
    )
    for path in written:
        print(path)


def cmd_synth_plan(args):
    recs = records.ingest_reviews(args.corpus, format=args.format)
    plan = synthlab.build_plan(
        recs, n_products=args.count, reviews_per_product=args.reviews_per_product,
        threshold=args.threshold, seed=args.seed,
    )
    plan.save(args.out)
    print(json.dumps({"targets": len(plan.entries)}))


def cmd_synth_generate(args, config):
    recs = records.ingest_reviews(args.corpus, format=args.format)
    plan = synthlab.SynthesisPlan.load(args.plan)
    if args.stub:
        client = synthlab.StubChatClient(seed=args.seed)
    else:
        endpoint = args.endpoint or _cfg(config, "chat.endpoint")
        if not endpoint:
            raise SystemExit("need --stub, --endpoint, or chat.endpoint in config")
        client = synthlab.HttpChatClient(endpoint)
    meta = None
    if args.meta:
        with open(args.meta, encoding="utf-8") as fh:
            meta = json.load(fh)
    reports = synthlab.fill_plan_texts(plan, recs, client, product_meta=meta,
                                       max_words=args.max_words)
    plan.save(args.out or args.plan)
    expected = sum(r.expected for r in reports)
    parsed = sum(min(r.parsed, r.expected) for r in reports)
    print(json.dumps({"expected": expected, "parsed": parsed}))


def cmd_synth_inject(args):
    recs = records.ingest_reviews(args.corpus, format=args.format)
    plan = synthlab.SynthesisPlan.load(args.plan)
    augmented = synthlab.inject_spam(recs, plan, seed=args.seed)
    records.write_reviews(augmented, args.out)
    plan.save(args.plan)  # timestamps filled in during injection
    n_spam = len(augmented) - len(recs)
    print(json.dumps({
        "genuine": len(recs),
        "spam": n_spam,
        "spam_fraction": n_spam / len(augmented),
    }))


def cmd_synth_stats(args):
    plan = synthlab.SynthesisPlan.load(args.plan)
    groups = {e.product_id: e.texts for e in plan.entries if e.texts}
    stats = synthlab.corpus_stats(groups, smoothing=args.smoothing)
    payload = json.dumps(stats, indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    print(payload)


def cmd_synth_judge_prompts(args):
    plan = synthlab.SynthesisPlan.load(args.plan)
    meta = {}
    if args.meta:
        with open(args.meta, encoding="utf-8") as fh:
            meta = json.load(fh)
    count = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for entry in plan.entries:
            info = meta.get(entry.product_id, {})
            for text in entry.texts:
                system, user = synthlab.render_judge_prompt(
                    info.get("name", entry.product_id),
                    info.get("category", "General"),
                    text,
                )
                fh.write(json.dumps({
                    "product_id": entry.product_id,
                    "messages": [
                        {"role": "system", "content": system},
                        {"role": "user", "content": user},
                    ],
                }, ensure_ascii=False) + "\n")
                count += 1
    print(json.dumps({"prompts": count}))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spamgraph",
        description="Spam-review detection on review graphs, plus synthetic "
                    "spam-campaign dataset construction.",
    )
    parser.add_argument("--config", help="YAML config file; flags override its keys")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("fixture", help="write the bundled separable synthetic corpus")
    p.add_argument("--nodes", type=int, default=300)
    p.add_argument("--spam-fraction", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ingest", help="validate a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--out", help="write the normalized JSONL corpus here")

    p = sub.add_parser("split", help="create a train/valid/test split")
    p.add_argument("--corpus")
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--nodes", type=int)
    p.add_argument("--ratios", type=_ratios, default=(0.01, 0.09, 0.90))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-graph", help="build the review graph")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--qa", action="store_true", help="treat the corpus as QA records")
    p.add_argument("--out", required=True)

    p = sub.add_parser("graph-stats", help="print node/edge/spam-ratio counts")
    p.add_argument("--graph", required=True)

    p = sub.add_parser("embed", help="produce the node embedding matrix")
    p.add_argument("--corpus")
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--provider", choices=["hash", "file", "service"])
    p.add_argument("--input", help="existing EMB1 file for --provider file")
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--endpoint")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the detector")
    p.add_argument("--graph", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--features", help="EMB1 file of engineered features to concatenate")
    p.add_argument("--no-graph", action="store_true",
                   help="skip the graph layers (embedding-only ablation)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--layer-width", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--attention-scaling", action="store_true")
    p.add_argument("--no-grad-clip", action="store_true")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("evaluate", help="ranking metrics from a scores file")
    p.add_argument("--scores", required=True)
    p.add_argument("--ratio", type=float, default=0.03)
    p.add_argument("--include-valid", action="store_true")
    p.add_argument("--roc-out", help="write ROC points CSV here")
    p.add_argument("--out", help="write the metrics JSON here")

    p = sub.add_parser("report", help="render figures from logs and scores")
    p.add_argument("--log")
    p.add_argument("--scores")
    p.add_argument("--ratio", type=float, default=0.03)
    p.add_argument("--out-dir", required=True)

    synth = sub.add_parser("synth", help="synthetic spam-campaign pipeline")
    synth_sub = synth.add_subparsers(dest="synth_command")

    p = synth_sub.add_parser("plan", help="pick targets and compromised accounts")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--reviews-per-product", type=int, default=5)
    p.add_argument("--threshold", type=float, default=4.3)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = synth_sub.add_parser("generate", help="fill the plan with generated texts")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--plan", required=True)
    p.add_argument("--stub", action="store_true")
    p.add_argument("--endpoint")
    p.add_argument("--meta", help="JSON file mapping product_id to name/category/description")
    p.add_argument("--max-words", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the filled plan here (defaults to --plan)")

    p = synth_sub.add_parser("inject", help="inject the planned spam into a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--plan", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = synth_sub.add_parser("stats", help="length/diversity statistics of generated texts")
    p.add_argument("--plan", required=True)
    p.add_argument("--smoothing", action="store_true")
    p.add_argument("--out")

    p = synth_sub.add_parser("judge-prompts", help="render judge prompts for generated texts")
    p.add_argument("--plan", required=True)
    p.add_argument("--meta")
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    if args.command == "synth" and not args.synth_command:
        parser.print_usage(sys.stderr)
        return 2
    config = _load_config(args.config)
    try:
        if args.command == "fixture":
            cmd_fixture(args)
        elif args.command == "ingest":
            cmd_ingest(args)
        elif args.command == "split":
            cmd_split(args)
        elif args.command == "build-graph":
            cmd_build_graph(args)
        elif args.command == "graph-stats":
            cmd_graph_stats(args)
        elif args.command == "embed":
            cmd_embed(args, config)
        elif args.command == "train":
            cmd_train(args, config)
        elif args.command == "evaluate":
            cmd_evaluate(args)
        elif args.command == "report":
            cmd_report(args)
        elif args.command == "synth":
            if args.synth_command == "plan":
                cmd_synth_plan(args)
            elif args.synth_command == "generate":
                cmd_synth_generate(args, config)
            elif args.synth_command == "inject":
                cmd_synth_inject(args)
            elif args.synth_command == "stats":
                cmd_synth_stats(args)
            elif args.synth_command == "judge-prompts":
                cmd_synth_judge_prompts(args)
    except SystemExit:
        raise
    except (ValueError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
