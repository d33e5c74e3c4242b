"""Command-line entry point for the whole pipeline.

Verbs: bpe-train, preprocess-cdr, build-ctd, train, predict, evaluate,
ensemble, grad-check. Every artifact-writing command drops a manifest
(settings digest, seed, input digests, package version) next to its
outputs so a run can be reproduced from the manifest alone.

Exit codes: 0 success, 2 bad configuration or usage, 3 data errors,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys

import numpy as np

from . import __version__
from . import autodiff as ad
from . import bpe, config, data, encoder, metrics, scorer, synthetic, training

log = logging.getLogger(__name__)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_path, command: str, settings: dict, inputs: list,
                   outputs: list, seed: int | None = None) -> None:
    record = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "settings": {k: settings[k] for k in sorted(settings)},
        "settings_digest": config.settings_digest(settings),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    path = f"{out_path}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# verb implementations


def cmd_bpe_train(args) -> int:
    texts = []
    for path in args.input:
        with open(path, encoding="utf-8") as fh:
            texts.append(fh.read())
    if args.mode == "bpe":
        vocab = bpe.train_bpe(texts, budget=args.budget, min_count=args.min_count)
    else:
        vocab = bpe.train_word_vocab(texts, min_count=args.min_count,
                                     budget=args.budget)
    bpe.save_vocab(args.out, vocab)
    print(f"{vocab.mode} vocabulary: {len(vocab)} tokens, "
          f"{len(vocab.merges)} merges (budget {args.budget})")
    write_manifest(args.out, "bpe-train",
                   {"budget": args.budget, "min_count": args.min_count,
                    "mode": args.mode},
                   args.input, [args.out])
    return 0


def _load_docs_with_tokens(dataset_path) -> list[data.Document]:
    docs = data.read_dataset(dataset_path)
    missing = [d.doc_id for d in docs if d.tokens is None]
    if missing:
        raise data.DataError(f"{dataset_path}: documents without tokens "
                             f"(run a preprocess command first): {missing[:3]}")
    return docs


def cmd_preprocess_cdr(args) -> int:
    schema = data.load_schema(args.schema)
    mesh = data.MeshTree.from_file(args.mesh) if args.mesh else data.MeshTree({})
    vocab = bpe.load_vocab(args.vocab)
    documents = []
    inputs = [args.schema, args.vocab] + ([args.mesh] if args.mesh else [])
    total_skipped = 0
    for split, path in (("train", args.train), ("dev", args.dev), ("test", args.test)):
        if path is None:
            continue
        inputs.append(path)
        docs, stats = data.parse_pubtator(path)
        total_skipped += stats.skipped
        for doc in sorted(docs, key=lambda d: d.doc_id):
            doc = data.generate_negatives(doc, schema)
            doc = data.filter_hypernyms(doc, mesh)
            doc = data.attach_tokens(doc, vocab)
            doc.split = split
            documents.append(doc)
    data.write_dataset(args.out, documents)
    outputs = [args.out]
    if args.stats:
        with open(args.stats, "w", encoding="utf-8") as fh:
            fh.write(data.format_stats(data.dataset_stats(documents)))
        outputs.append(args.stats)
    print(f"{len(documents)} documents written ({total_skipped} records skipped)")
    write_manifest(args.out, "preprocess-cdr", {}, inputs, outputs)
    return 0


def cmd_build_ctd(args) -> int:
    curated = data.load_curated_relations(args.relations)
    abstracts, parse_stats = data.parse_pubtator(args.abstracts)
    hierarchy = {}
    if args.hierarchy:
        with open(args.hierarchy, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                child, _, parent = line.partition("\t")
                hierarchy[child] = parent
    documents, schema, stats = data.build_ctd_dataset(
        curated, abstracts, hierarchy, max_tokens=args.max_tokens)
    vocab = bpe.load_vocab(args.vocab)
    documents = [data.attach_tokens(d, vocab) for d in documents]
    data.write_dataset(args.out, documents)
    data.save_schema(args.schema_out, schema)
    outputs = [args.out, args.schema_out]
    if args.stats:
        report = data.format_stats(data.dataset_stats(documents))
        report += ("\nBuild counts\n"
                   f"curated_relations\t{stats.curated_relations}\n"
                   f"dropped_missing_abstract\t{stats.dropped_missing_abstract}\n"
                   f"dropped_unrecovered\t{stats.dropped_unrecovered}\n"
                   f"dropped_affects\t{stats.dropped_affects}\n"
                   f"discarded_no_relation\t{stats.discarded_no_relation}\n"
                   f"discarded_too_long\t{stats.discarded_too_long}\n")
        with open(args.stats, "w", encoding="utf-8") as fh:
            fh.write(report)
        outputs.append(args.stats)
    print(f"{stats.documents} documents, {stats.positives} positive / "
          f"{stats.negatives} NULL pairs; {len(schema.relations)} relation types")
    inputs = [args.relations, args.abstracts, args.vocab]
    if args.hierarchy:
        inputs.append(args.hierarchy)
    write_manifest(args.out, "build-ctd", {"max_tokens": args.max_tokens},
                   inputs, outputs)
    return 0


def _resolve_settings(args) -> dict:
    sources = [config.resolve_presets(args.preset)]
    if args.config:
        sources.append(config.parse_config_file(args.config))
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key] = value
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    sources.append(overrides)
    return config.merge_settings(*sources)


def cmd_train(args) -> int:
    schema = data.load_schema(args.schema)
    vocab = bpe.load_vocab(args.vocab)
    docs = _load_docs_with_tokens(args.dataset)
    settings = _resolve_settings(args)
    enc_cfg, train_cfg, extra = config.split_settings(settings, vocab_size=len(vocab))
    extra.pop("bpe_budget", None)  # vocabulary is already fixed by --vocab
    if extra:
        raise ValueError(f"settings not understood by train: {sorted(extra)}")

    labels = schema.labels()
    entity_types = sorted({t for r in schema.relations
                           for t in (r.head_type, r.tail_type)})
    ner_classes = training.ner_class_inventory(entity_types)
    known = set(ner_classes)
    for doc in docs:
        bad = [t for t in doc.bio_tags if t not in known]
        if bad:
            raise data.DataError(f"{doc.doc_id}: BIO tags outside the schema "
                                 f"inventory: {sorted(set(bad))[:4]}")
    model = training.build_model(enc_cfg, labels, ner_classes,
                                 seed=train_cfg.seed, unk_id=vocab.unk_id)
    log_path = args.log or f"{args.out}.log"
    with open(log_path, "w", encoding="utf-8") as log_fh:
        result = training.train(docs, model, train_cfg, log_fh=log_fh)
    training.save_model(args.out, model, thresholds=result.thresholds,
                        extra={"best_dev_micro_f1": result.best_metric,
                               "steps": result.steps,
                               "train": train_cfg.to_dict()})
    print(f"trained {result.steps} steps; best dev micro-F1 "
          f"{result.best_metric:.4f}; checkpoint {args.out}")
    write_manifest(args.out, "train", settings,
                   [args.dataset, args.schema, args.vocab],
                   [args.out, log_path], seed=train_cfg.seed)
    return 0


def cmd_predict(args) -> int:
    model, meta = training.load_model(args.model)
    docs = _load_docs_with_tokens(args.dataset)
    if args.split:
        docs = [d for d in docs if d.split == args.split]
    if not docs:
        raise data.DataError(f"no documents in split {args.split!r}")
    predictions = training.predict_documents(model, docs)
    scorer.write_predictions(args.out, predictions)
    outputs = [args.out]
    if args.ner_out:
        tags = training.predict_ner_tags(model, docs)
        with open(args.ner_out, "w", encoding="utf-8") as fh:
            for doc, seq in zip(docs, tags):
                fh.write(doc.doc_id + "\t" + " ".join(seq) + "\n")
        outputs.append(args.ner_out)
    print(f"{len(predictions)} pair predictions over {len(docs)} documents")
    write_manifest(args.out, "predict", {"split": args.split or ""},
                   [args.model, args.dataset], outputs)
    return 0


def _thresholds_for(args, docs) -> dict[str, float]:
    if args.tune_predictions:
        tune_preds = scorer.read_predictions(args.tune_predictions)
        tune_docs = _load_docs_with_tokens(args.dataset)
        tune_docs = [d for d in tune_docs if d.split == args.tune_split]
        gold = metrics.gold_pair_labels(tune_docs)
        return metrics.tune_thresholds(tune_preds, gold)
    if args.model:
        _, meta = training.load_model(args.model)
        if meta.get("thresholds"):
            return dict(meta["thresholds"])
    preds = scorer.read_predictions(args.predictions)
    gold = metrics.gold_pair_labels(docs)
    log.warning("no dev thresholds provided; tuning on the evaluation split")
    return metrics.tune_thresholds(preds, gold)


def cmd_evaluate(args) -> int:
    docs = _load_docs_with_tokens(args.dataset)
    if args.split:
        docs = [d for d in docs if d.split == args.split]
    if args.mesh:
        mesh = data.MeshTree.from_file(args.mesh)
        docs = [data.filter_hypernyms(d, mesh) for d in docs]
    predictions = scorer.read_predictions(args.predictions)
    keys = set(metrics.gold_pair_labels(docs))
    predictions = [p for p in predictions if p.key in keys]
    thresholds = _thresholds_for(args, docs)
    gold = metrics.gold_pair_labels(docs)
    labels = {p.key: metrics.classify(p.probs, thresholds) for p in predictions}
    report = metrics.prf1(labels, gold)
    out_text = metrics.format_metric_table(report)
    if args.cutoffs:
        cutoffs = [int(c) for c in args.cutoffs.split(",")]
        results = metrics.distance_filtered_eval(docs, predictions, cutoffs,
                                                 thresholds)
        out_text += "\n" + metrics.format_cutoff_table(results)
    if args.ner_tags:
        gold_tags, pred_tags = [], []
        by_id = {d.doc_id: d for d in docs}
        with open(args.ner_tags, encoding="utf-8") as fh:
            for line in fh:
                doc_id, _, seq = line.rstrip("\n").partition("\t")
                if doc_id in by_id:
                    pred_tags.append(seq.split(" "))
                    gold_tags.append(by_id[doc_id].bio_tags)
        ner_report = metrics.span_ner_f1(pred_tags, gold_tags)
        out_text += "\nNER span scores\n" + metrics.format_metric_table(ner_report)
    print(out_text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out_text)
        inputs = [args.predictions, args.dataset]
        write_manifest(args.out, "evaluate",
                       {"split": args.split or "", "cutoffs": args.cutoffs or ""},
                       inputs, [args.out])
    return 0


def cmd_ensemble(args) -> int:
    sets = [scorer.read_predictions(p) for p in args.predictions]
    merged = metrics.ensemble(sets)
    scorer.write_predictions(args.out, merged)
    print(f"averaged {len(sets)} prediction sets over {len(merged)} pairs")
    write_manifest(args.out, "ensemble", {"members": len(sets)},
                   list(args.predictions), [args.out])
    return 0


def cmd_grad_check(args) -> int:
    rng = np.random.default_rng(0)
    worst: dict[str, float] = {}

    x = ad.Tensor(rng.standard_normal((5, 6)), requires_grad=True)
    w = rng.standard_normal((5, 6))
    worst["softmax"] = ad.grad_check(
        lambda: ad.tsum(ad.mul(ad.softmax(x, axis=1), w)), [x], rng=rng)
    worst["layer_norm"] = ad.grad_check(
        lambda: ad.tsum(ad.mul(ad.layer_norm(
            x, ad.Tensor(np.ones(6)), ad.Tensor(np.zeros(6))), w)), [x], rng=rng)
    worst["logsumexp"] = ad.grad_check(lambda: ad.logsumexp(x), [x], rng=rng)
    k = ad.Tensor(rng.standard_normal((5, 6, 4)), requires_grad=True)
    wc = rng.standard_normal((5, 4))
    worst["conv1d"] = ad.grad_check(
        lambda: ad.tsum(ad.mul(ad.conv1d(x, k, ad.Tensor(np.zeros(4))), wc)),
        [x, k], rng=rng)

    corpus = synthetic.generate_corpus(n_docs=2, seed=0)
    for doc in corpus.docs:
        doc.split = "train"
    vocab = synthetic.tokenize_corpus(corpus, budget=60)
    enc_cfg = encoder.EncoderConfig(vocab_size=len(vocab), d=8, blocks=1, heads=2,
                                    max_positions=64, dtype="float64")
    model = training.build_model(enc_cfg, [data.NULL_LABEL, "a", "b", "c"],
                                 training.ner_class_inventory(
                                     ["Compound", "Protein", "Phenotype"]),
                                 seed=0, unk_id=vocab.unk_id)
    index = training.DatasetIndex.build(corpus.docs)

    def loss():
        terms = []
        for di, doc in enumerate(corpus.docs):
            pair_ids = [pi for (d2, pi) in index.positives + index.negatives
                        if d2 == di]
            _, affinity, ner = training.forward_document(model, doc.tokens.token_ids)
            rows = [ad.reshape(scorer.pool_entity_pair(
                affinity, training.entity_token_index(doc, doc.pairs[pi].head),
                training.entity_token_index(doc, doc.pairs[pi].tail)),
                (1, 4)) for pi in pair_ids]
            rel = training.relation_loss(ad.concat(rows, axis=0),
                                         [pi % 4 for pi in pair_ids])
            nl = training.ner_loss(ner, [model.ner_index()[t] for t in doc.bio_tags])
            terms.append(ad.add(rel, nl))
        return ad.mul(ad.add(terms[0], terms[1]), 0.5)

    coords = 2 if args.quick else 4
    worst["full_model"] = ad.grad_check(loss, model.params.tensors(), eps=1e-4,
                                        max_coords=coords, rng=rng)
    failed = False
    for name, err in worst.items():
        status = "ok" if err < 1e-4 else "FAIL"
        if err >= 1e-4:
            failed = True
        print(f"{name:12s} max rel. error {err:.3e}  {status}")
    return 4 if failed else 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relex",
        description="Document-level relation extraction pipeline")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("bpe-train", help="train a sub-word or word vocabulary")
    p.add_argument("--input", action="append", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--mode", choices=("bpe", "word"), default="bpe")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bpe_train)

    p = sub.add_parser("preprocess-cdr",
                       help="hypernym-filter and label a gold corpus")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--test")
    p.add_argument("--mesh")
    p.add_argument("--schema", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats")
    p.set_defaults(func=cmd_preprocess_cdr)

    p = sub.add_parser("build-ctd",
                       help="strong-distant-supervision dataset construction")
    p.add_argument("--abstracts", required=True)
    p.add_argument("--relations", required=True)
    p.add_argument("--hierarchy")
    p.add_argument("--vocab", required=True)
    p.add_argument("--max-tokens", type=int, default=500)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out", required=True)
    p.add_argument("--stats")
    p.set_defaults(func=cmd_build_ctd)

    p = sub.add_parser("train", help="train a model on a built dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", help="comma-separated preset names")
    p.add_argument("--config", help="key=value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="dump pair predictions for a split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split")
    p.add_argument("--out", required=True)
    p.add_argument("--ner-out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a prediction dump")
    p.add_argument("--predictions", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split")
    p.add_argument("--model", help="checkpoint with stored dev thresholds")
    p.add_argument("--tune-predictions", help="dev dump to tune thresholds on")
    p.add_argument("--tune-split", default="dev")
    p.add_argument("--mesh", help="apply hypernym filtering before scoring")
    p.add_argument("--cutoffs", help="ascending mention-distance cutoffs")
    p.add_argument("--ner-tags", help="predicted BIO tags for span F1")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="average aligned prediction dumps")
    p.add_argument("--predictions", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("grad-check", help="finite-difference verification suite")
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except data.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (training.NumericError, ad.NonFiniteError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (ValueError, KeyError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
