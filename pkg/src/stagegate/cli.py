"""stagegate command-line interface.

Subcommands: ingest, stats, preprocess, train-embeddings, featurize, train,
evaluate, predict, explain, experiment, synth. Every run that writes
artifacts also writes a RunManifest next to them (commands printing to
stdout only write one when --manifest is given, so nothing lands in the
cwd implicitly). Exit codes: 0 ok, 2 usage, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from stagegate import __version__
from stagegate import report as rpt
from stagegate import svm as svm_mod
from stagegate.corpus import (
    CorpusError,
    Dataset,
    StageLabel,
    load_corpus,
    message_to_record,
    save_corpus,
    split,
    stats,
)
from stagegate.embeddings import (
    EmbeddingError,
    W2vConfig,
    load_embeddings,
    save_embeddings,
    train_word2vec,
)
from stagegate.evaluation import EvalError, evaluate_predictions
from stagegate.experiment import ExperimentError, load_experiment_spec, run_experiment
from stagegate.features import FeatureError, embed_matrix, save_feature_matrix, save_vocabulary
from stagegate.manifest import ManifestTimer, RunManifest, atomic_write_text, derive_seed, hash_file
from stagegate.models import (
    ModelError,
    TrainConfig,
    build_cnn,
    build_rnn,
    load_model,
    predict_model,
    predict_model_batch,
    save_model,
    train_model,
)
from stagegate.nncore import NNError
from stagegate.pipeline import FeaturizerConfig, SvmFeaturizer
from stagegate.postag import TaggerModelMissing, default_tagger
from stagegate.svm import SvmError
from stagegate.synth import SynthSpec, generate
from stagegate.textprep import preprocess

DATA_ERRORS = (
    CorpusError,
    FeatureError,
    EmbeddingError,
    SvmError,
    NNError,
    ModelError,
    EvalError,
    ExperimentError,
    TaggerModelMissing,
    FileNotFoundError,
    KeyError,
    ValueError,
)


def _manifest_path(args) -> Path | None:
    explicit = getattr(args, "manifest", None)
    if explicit:
        return Path(explicit)
    out = getattr(args, "out", None)
    if out is None:
        return None
    out = Path(out)
    if out.suffix == "" or out.is_dir():
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


def _new_manifest(args) -> RunManifest:
    config = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    return RunManifest(
        command=f"stagegate {args.command}",
        config=config,
        seed=getattr(args, "seed", None),
    )


def _run_with_manifest(args, body) -> int:
    """Run a subcommand body; write the manifest on success and on failure."""
    manifest = _new_manifest(args)
    mpath = _manifest_path(args)
    try:
        with ManifestTimer(manifest):
            body(manifest)
    finally:
        if mpath is not None:
            mpath.parent.mkdir(parents=True, exist_ok=True)
            manifest.write(mpath)
    return 0


def _preprocess_dataset(dataset: Dataset):
    tagger = default_tagger()
    return [preprocess(m, tagger) for m in dataset]


# --- subcommand bodies -------------------------------------------------------


def cmd_ingest(args) -> int:
    def body(manifest):
        d = load_corpus(args.input, format=args.format)
        manifest.add_input(args.input)
        if args.split is not None:
            train, test = split(d, args.split, seed=args.seed, stratified=not args.no_stratify)
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            save_corpus(train, out / "train.jsonl")
            save_corpus(test, out / "test.jsonl")
            manifest.add_output(out / "train.jsonl")
            manifest.add_output(out / "test.jsonl")
            print(f"ingested {len(d)} messages -> {len(train)} train / {len(test)} test")
        else:
            save_corpus(d, args.out)
            manifest.add_output(args.out)
            print(f"ingested {len(d)} messages -> {args.out}")

    return _run_with_manifest(args, body)


def cmd_stats(args) -> int:
    def body(manifest):
        d = load_corpus(args.input)
        manifest.add_input(args.input)
        cs = stats(d)
        text = rpt.render_stats(cs)
        counts = d.class_counts()
        text += "\nClass counts: " + ", ".join(
            f"{lab.value}={counts[lab]}" for lab in counts
        ) + f" (total {len(d)})\n"
        print(text, end="")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            rpt.write_stats_csv(out / "stats.csv", cs)
            rpt.fig_stats(out / "stats.png", cs)
            atomic_write_text(out / "stats.txt", text)
            for name in ("stats.csv", "stats.png", "stats.txt"):
                manifest.add_output(out / name)

    return _run_with_manifest(args, body)


def cmd_preprocess(args) -> int:
    def body(manifest):
        d = load_corpus(args.input)
        manifest.add_input(args.input)
        processed = _preprocess_dataset(d)
        lines = []
        for pm in processed:
            rec = message_to_record(pm.source)
            rec.update(
                normalized_text=pm.normalized_text,
                tokens=[[t.surface, t.lemma] for t in pm.tokens],
                tags=list(pm.tags),
                clauses=[[c.start, c.end, c.tag] for c in pm.clauses],
            )
            lines.append(json.dumps(rec, ensure_ascii=False))
        atomic_write_text(args.out, "\n".join(lines) + "\n")
        manifest.add_output(args.out)
        print(f"preprocessed {len(processed)} messages -> {args.out}")

    return _run_with_manifest(args, body)


def cmd_train_embeddings(args) -> int:
    def body(manifest):
        d = load_corpus(args.input)
        manifest.add_input(args.input)
        docs = [pm.lemmas() for pm in _preprocess_dataset(d)]
        cfg = W2vConfig(
            dim=args.dim, window=args.window, negatives=args.negatives,
            epochs=args.epochs, min_count=args.min_count, subsample=args.subsample,
            seed=args.seed,
        )
        table = train_word2vec(docs, cfg, workers=args.workers)
        save_embeddings(table, args.out, format=args.format)
        manifest.add_output(args.out)
        manifest.derived_seeds["word2vec"] = cfg.seed
        print(f"trained {len(table)} x {table.dim} embeddings -> {args.out}")

    return _run_with_manifest(args, body)


def _featurizer_from_args(args, table=None) -> FeaturizerConfig:
    return FeaturizerConfig(
        representation=args.representation,
        mode=args.mode,
        orders=tuple(int(x) for x in args.orders.split(",")),
        min_df=args.min_df,
        two_letter=args.two_letter,
        standardize_desc=args.standardize_desc,
        with_desc=getattr(args, "with_desc", False),
    )


def cmd_featurize(args) -> int:
    def body(manifest):
        d = load_corpus(args.train).labeled()
        manifest.add_input(args.train)
        ptrain = _preprocess_dataset(d)
        table = load_embeddings(args.embeddings) if args.embeddings else None
        feat = SvmFeaturizer(_featurizer_from_args(args), embedding_table=table).fit(ptrain)
        apply_to = ptrain
        if args.apply:
            manifest.add_input(args.apply)
            apply_to = _preprocess_dataset(load_corpus(args.apply))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_feature_matrix(out / "features.txt", feat.transform_batch(apply_to))
        manifest.add_output(out / "features.txt")
        if feat.vocab is not None:
            save_vocabulary(out / "vocab.json", feat.vocab, feat.idf)
            manifest.add_output(out / "vocab.json")
        print(f"featurized {len(apply_to)} messages -> {out}")

    return _run_with_manifest(args, body)


SVM_PIPELINE_FORMAT = "stagegate-svm-pipeline"


def save_svm_pipeline(path, model, feat) -> None:
    payload = {
        "format": SVM_PIPELINE_FORMAT,
        "version": 1,
        "featurizer": feat.to_dict(),
        "svm": svm_mod.svm_to_payload(model),
    }
    atomic_write_text(path, json.dumps(payload))


def load_svm_pipeline(path, embedding_table=None):
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != SVM_PIPELINE_FORMAT:
        raise SvmError(f"{path}: not an SVM pipeline file")
    model = svm_mod.svm_from_payload(payload["svm"], where=str(path))
    feat = SvmFeaturizer.from_dict(payload["featurizer"], embedding_table=embedding_table)
    return model, feat


def cmd_train(args) -> int:
    def body(manifest):
        d = load_corpus(args.train).labeled()
        if len(d) == 0:
            raise CorpusError("training data has no labeled messages")
        manifest.add_input(args.train)
        ptrain = _preprocess_dataset(d)
        y = [m.label for m in d]
        seed = derive_seed(args.seed, f"train:{args.model}")
        manifest.derived_seeds["train"] = seed
        if args.model == "svm":
            table = load_embeddings(args.embeddings) if args.embeddings else None
            feat = SvmFeaturizer(_featurizer_from_args(args), embedding_table=table).fit(ptrain)
            X = feat.transform_batch(ptrain)
            C = args.C
            if args.select_c:
                grid = [float(x) for x in args.select_c.split(",")]
                C, scores = svm_mod.select_C(X, y, grid, folds=args.folds, seed=seed)
                print("C selection:", ", ".join(f"{c:g}->{s:.3f}" for c, s in sorted(scores.items())))
                print(f"selected C = {C:g}")
            model = svm_mod.train_svm(X, y, C=C, seed=seed, feature_space=feat.feature_space())
            save_svm_pipeline(args.out, model, feat)
        else:
            if not args.embeddings:
                raise ModelError(f"--embeddings is required for the {args.model} model")
            table = load_embeddings(args.embeddings)
            manifest.add_input(args.embeddings)
            ems = [embed_matrix(pm, table, with_desc=args.with_desc) for pm in ptrain]
            width = table.dim + (5 if args.with_desc else 0)
            if args.model == "cnn":
                model = build_cnn(width, conv1_maps=args.conv1_maps, conv2_maps=args.conv2_maps,
                                  dense_units=args.dense_units, dropout_rate=args.dropout, seed=seed)
            else:
                model = build_rnn(width, hidden=args.hidden, activation=args.activation, seed=seed)
            cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                              seed=derive_seed(args.seed, "shuffle"),
                              early_stopping=args.early_stopping)
            history = train_model(model, list(zip(ems, y)), cfg)
            meta = {
                "embeddings": str(args.embeddings),
                "embeddings_hash": hash_file(args.embeddings),
                "with_desc": bool(args.with_desc),
            }
            save_model(model, args.out, meta=meta)
            print("final training loss: %.4f" % history[-1])
        manifest.add_output(args.out)
        print(f"trained {args.model} on {len(d)} messages -> {args.out}")

    return _run_with_manifest(args, body)


def _load_any_model(path, embeddings_arg=None):
    """Returns ("svm", model, feat) or ("nn", model, meta)."""
    raw = Path(path).open("rb").read(6)
    if raw.startswith(b"SGNN1"):
        model, meta = load_model(path)
        return "nn", model, meta
    table = None
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    needs_table = payload.get("featurizer", {}).get("config", {}).get("representation") == "w2v"
    if needs_table:
        if not embeddings_arg:
            raise SvmError("this model needs --embeddings (w2v representation)")
        table = load_embeddings(embeddings_arg)
    model, feat = load_svm_pipeline(path, embedding_table=table)
    return "svm", model, feat


def _predict_dataset(kind, model, feat_or_meta, dataset, embeddings_arg):
    processed = _preprocess_dataset(dataset)
    if kind == "svm":
        X = feat_or_meta.transform_batch(processed)
        return svm_mod.predict_batch(model, X)
    meta = feat_or_meta
    source = embeddings_arg or meta.get("embeddings")
    if not source:
        raise ModelError("this model needs --embeddings for prediction")
    table = load_embeddings(source)
    ems = [embed_matrix(pm, table, with_desc=meta.get("with_desc", False)) for pm in processed]
    return predict_model_batch(model, ems)


def cmd_evaluate(args) -> int:
    def body(manifest):
        kind, model, extra = _load_any_model(args.model, args.embeddings)
        manifest.add_input(args.model)
        d = load_corpus(args.test).labeled()
        if len(d) == 0:
            raise CorpusError("test data has no labeled messages")
        manifest.add_input(args.test)
        preds = _predict_dataset(kind, model, extra, d, args.embeddings)
        report = evaluate_predictions(preds, [m.label for m in d])
        rows = [(args.row_name, report)]
        text = rpt.render_table(rows, title=f"evaluate {Path(args.model).name}")
        print(text, end="")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            rpt.write_report_csv(out / "report.csv", rows)
            atomic_write_text(out / "report.txt", text)
            rpt.fig_f1_bars(out / "report.png", rows)
            rpt.fig_confusion(out / "confusion.png", report)
            for name in ("report.csv", "report.txt", "report.png", "confusion.png"):
                manifest.add_output(out / name)

    return _run_with_manifest(args, body)


def cmd_predict(args) -> int:
    def body(manifest):
        kind, model, extra = _load_any_model(args.model, args.embeddings)
        manifest.add_input(args.model)
        d = load_corpus(args.input)
        manifest.add_input(args.input)
        preds = _predict_dataset(kind, model, extra, d, args.embeddings)
        lines = [
            json.dumps({"id": m.id, "label": p.value})
            for m, p in zip(d, preds)
        ]
        body_text = "\n".join(lines) + "\n"
        if args.out:
            atomic_write_text(args.out, body_text)
            manifest.add_output(args.out)
            print(f"predicted {len(d)} messages -> {args.out}")
        else:
            print(body_text, end="")

    return _run_with_manifest(args, body)


def cmd_explain(args) -> int:
    def body(manifest):
        payload = json.loads(Path(args.model).read_text(encoding="utf-8"))
        if payload.get("format") != SVM_PIPELINE_FORMAT:
            raise SvmError("explain requires an SVM pipeline model file")
        manifest.add_input(args.model)
        model, _ = load_svm_pipeline(args.model)
        label = StageLabel.from_string(args.label)
        pairs = svm_mod.top_features(model, label, args.top)
        lines = [f"{name}\t{weight:.6f}" for name, weight in pairs]
        text = "\n".join(lines) + ("\n" if lines else "")
        if args.out:
            atomic_write_text(args.out, text)
            manifest.add_output(args.out)
            print(f"wrote top {len(pairs)} features for {label.value} -> {args.out}")
        else:
            print(text, end="")

    return _run_with_manifest(args, body)


def cmd_experiment(args) -> int:
    def body(manifest):
        spec = load_experiment_spec(args.config)
        manifest.add_input(args.config)
        manifest.add_input(spec["train"])
        manifest.add_input(spec["test"])
        if args.seed is not None:
            spec["seed"] = args.seed
        summary = run_experiment(spec, args.out, jobs=args.jobs)
        out = Path(args.out)
        for cell in spec["cells"]:
            manifest.add_output(out / cell["name"] / "report.csv")
        manifest.add_output(out / "summary.txt")
        print((out / "summary.txt").read_text(encoding="utf-8"), end="")

    return _run_with_manifest(args, body)


def cmd_synth(args) -> int:
    def body(manifest):
        spec = SynthSpec(
            classes=args.classes, n_train=args.train, n_test=args.test,
            seed=args.seed, noise=args.noise,
        )
        train, test, meta = generate(spec)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_corpus(train, out / "train.jsonl")
        save_corpus(test, out / "test.jsonl")
        atomic_write_text(out / "keywords.json", json.dumps(meta, indent=2, sort_keys=True))
        for name in ("train.jsonl", "test.jsonl", "keywords.json"):
            manifest.add_output(out / name)
        print(f"generated {len(train)} train / {len(test)} test messages -> {out}")

    return _run_with_manifest(args, body)


# --- argument parsing -------------------------------------------------------------


def _add_featurizer_flags(p):
    p.add_argument("--representation", default="bow",
                   choices=["bow", "pos_desc", "combined", "w2v"])
    p.add_argument("--mode", default="tfidf", choices=["bool", "freq", "tfidf"])
    p.add_argument("--orders", default="1,2,3", help="comma-separated n-gram orders")
    p.add_argument("--min-df", dest="min_df", type=int, default=2)
    p.add_argument("--two-letter", dest="two_letter", action="store_true",
                   help="truncate POS tags to two letters")
    p.add_argument("--standardize-desc", dest="standardize_desc", action="store_true")
    p.add_argument("--with-desc", dest="with_desc", action="store_true",
                   help="append DESC values per word row (w2v representation)")
    p.add_argument("--embeddings", default=None, help="embedding table (text format)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagegate",
        description="Emergency-stage message triage: data prep, training, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"stagegate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus and convert to native JSONL")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--split", type=float, default=None, help="train fraction; makes --out a directory")
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="descriptive statistics of a corpus")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default=None, help="directory for stats.csv/stats.png")
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("preprocess", help="normalize, tokenize, lemmatize, POS-tag")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-embeddings", help="train skip-gram embeddings")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--min-count", dest="min_count", type=int, default=5)
    p.add_argument("--subsample", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=["text", "binary"], default="text")
    p.set_defaults(func=cmd_train_embeddings)

    p = sub.add_parser("featurize", help="fit a featurizer and dump sparse features")
    p.add_argument("--train", required=True)
    p.add_argument("--apply", default=None, help="corpus to transform (default: the train set)")
    p.add_argument("--out", required=True, help="output directory")
    _add_featurizer_flags(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("--model", required=True, choices=["svm", "cnn", "rnn"])
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_featurizer_flags(p)
    p.add_argument("--C", type=float, default=0.001)
    p.add_argument("--select-c", dest="select_c", default=None,
                   help="comma-separated C grid for cross-validated selection")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--activation", default="relu", choices=["relu", "tanh"])
    p.add_argument("--conv1-maps", dest="conv1_maps", type=int, default=100)
    p.add_argument("--conv2-maps", dest="conv2_maps", type=int, default=200)
    p.add_argument("--dense-units", dest="dense_units", type=int, default=200)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=50)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--early-stopping", dest="early_stopping", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model on a labeled test set")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", default=None, help="directory for report.csv/report.png")
    p.add_argument("--embeddings", default=None)
    p.add_argument("--row-name", dest="row_name", default="Model")
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="label unlabeled messages")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="top positive features per class (SVM)")
    p.add_argument("--model", required=True)
    p.add_argument("--class", dest="label", required=True)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", default=None)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("experiment", help="run a multi-cell experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--test", type=int, default=500)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DATA_ERRORS as e:
        print(f"stagegate {args.command}: error: {e}", file=sys.stderr)
        return 3
    except Exception:
        print(f"stagegate {args.command}: internal error", file=sys.stderr)
        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
