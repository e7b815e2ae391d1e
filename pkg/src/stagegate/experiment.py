"""Experiment orchestration: datasets -> cells -> report files.

An experiment config (JSON) names the datasets, seeds, embedding sources and
a list of cells. Each cell trains one classifier family over a list of rows
(feature representations) and lands in its own directory:

    <out>/<cell>/report.csv     one row per representation,
                                columns F_prep F_resp F_post F_eng F_avg
    <out>/<cell>/report.txt     the same table, aligned plain text
    <out>/<cell>/report.png     grouped per-class F1 bars
    <out>/<cell>/confusion_<row>.png
    <out>/<cell>/<row>.model    the trained model
    <out>/summary.txt           all cell tables merged in declared order

Row vocabulary: BOW-bearing cells use Bool/Freq/Tfidf; embedding cells use
GW2V/GW2V+DESC/CW2V/CW2V+DESC. Report CSVs are byte-reproducible for a
fixed master seed in single-threaded mode.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from stagegate import report as rpt
from stagegate import svm as svm_mod
from stagegate.corpus import Dataset, load_corpus
from stagegate.embeddings import EmbeddingTable, W2vConfig, load_embeddings, train_word2vec
from stagegate.evaluation import EvalReport, evaluate_predictions
from stagegate.features import BowMode, embed_matrix
from stagegate.manifest import atomic_write_text, derive_seed
from stagegate.models import (
    RnnClassifier,
    TrainConfig,
    build_cnn,
    build_rnn,
    predict_model_batch,
    save_model,
    train_model,
)
from stagegate.pipeline import FeaturizerConfig, SvmFeaturizer
from stagegate.postag import default_tagger
from stagegate.textprep import ProcessedMessage, preprocess


class ExperimentError(ValueError):
    pass


BOW_ROWS = ("Bool", "Freq", "Tfidf")
W2V_ROWS = ("GW2V", "GW2V+DESC", "CW2V", "CW2V+DESC")

_BOW_MODE_OF = {"Bool": BowMode.BOOL, "Freq": BowMode.FREQ, "Tfidf": BowMode.TFIDF}


def load_experiment_spec(path: str | Path) -> dict:
    spec = json.loads(Path(path).read_text(encoding="utf-8"))
    validate_spec(spec)
    return spec


def validate_spec(spec: dict) -> None:
    for key in ("name", "train", "test", "cells"):
        if key not in spec:
            raise ExperimentError(f"experiment spec missing required key: {key!r}")
    if not spec["cells"]:
        raise ExperimentError("experiment spec has no cells")
    for cell in spec["cells"]:
        for key in ("name", "classifier"):
            if key not in cell:
                raise ExperimentError(f"cell missing required key: {key!r}")
        if cell["classifier"] not in ("svm", "cnn", "rnn"):
            raise ExperimentError(f"unknown classifier: {cell['classifier']!r}")
        rows = cell.get("rows")
        if rows:
            known = set(BOW_ROWS) | set(W2V_ROWS)
            bad = [r for r in rows if r not in known]
            if bad:
                raise ExperimentError(f"unknown rows in cell {cell['name']!r}: {bad}")


def _preprocess_all(dataset: Dataset, tagger) -> list[ProcessedMessage]:
    return [preprocess(m, tagger) for m in dataset]


class _EmbeddingSources:
    """Lazily loads the generic table and trains the custom one, once each."""

    def __init__(self, spec: dict, train: Dataset, test: Dataset,
                 processed_train: Sequence[ProcessedMessage],
                 processed_test: Sequence[ProcessedMessage], master_seed: int):
        self.spec = spec
        self.train = train
        self.test = test
        self.processed_train = processed_train
        self.processed_test = processed_test
        self.master_seed = master_seed
        self._generic: Optional[EmbeddingTable] = None
        self._custom: Optional[EmbeddingTable] = None

    def for_row(self, row: str) -> EmbeddingTable:
        if row.startswith("GW2V"):
            return self.generic()
        return self.custom()

    def generic(self) -> EmbeddingTable:
        if self._generic is None:
            path = self.spec.get("generic_embeddings")
            if not path:
                raise ExperimentError("a GW2V row requires 'generic_embeddings' in the spec")
            self._generic = load_embeddings(path, format="text")
        return self._generic

    def custom(self) -> EmbeddingTable:
        if self._custom is None:
            cfg_dict = dict(self.spec.get("custom_embeddings") or {})
            corpus_kind = self.spec.get("embedding_corpus", "train")
            docs = [pm.lemmas() for pm in self.processed_train]
            if corpus_kind == "train+test":
                docs += [pm.lemmas() for pm in self.processed_test]
            elif corpus_kind not in ("train", "train+test"):
                extra = load_corpus(corpus_kind)
                tagger = default_tagger()
                docs += [preprocess(m, tagger).lemmas() for m in extra]
            cfg = W2vConfig(
                dim=int(cfg_dict.get("dim", 100)),
                window=int(cfg_dict.get("window", 5)),
                negatives=int(cfg_dict.get("negatives", 5)),
                epochs=int(cfg_dict.get("epochs", 5)),
                min_count=int(cfg_dict.get("min_count", 5)),
                subsample=float(cfg_dict.get("subsample", 1e-3)),
                seed=derive_seed(self.master_seed, "custom-embeddings"),
            )
            self._custom = train_word2vec(docs, cfg)
        return self._custom


def _run_svm_cell(cell, ptrain, ptest, y_train, y_test, sources, master_seed):
    rows = cell.get("rows") or list(BOW_ROWS)
    C = float(cell.get("C", 0.001))
    results, models, histories = [], {}, {}
    for row in rows:
        if row in _BOW_MODE_OF:
            config = FeaturizerConfig(
                representation=cell.get("representation", "bow"),
                mode=_BOW_MODE_OF[row],
                orders=tuple(cell.get("orders", (1, 2, 3))),
                min_df=int(cell.get("min_df", 2)),
                two_letter=bool(cell.get("two_letter", False)),
                standardize_desc=bool(cell.get("standardize_desc", False)),
            )
            feat = SvmFeaturizer(config).fit(ptrain)
        else:
            table = sources.for_row(row)
            config = FeaturizerConfig(representation="w2v", with_desc=row.endswith("+DESC"))
            feat = SvmFeaturizer(config, embedding_table=table).fit(ptrain)
        X_train = feat.transform_batch(ptrain)
        X_test = feat.transform_batch(ptest)
        seed = derive_seed(master_seed, f"{cell['name']}:{row}")
        model = svm_mod.train_svm(
            X_train, y_train, C=C, seed=seed,
            max_epochs=int(cell.get("max_epochs", 200)),
            feature_space=feat.feature_space(),
        )
        preds = svm_mod.predict_batch(model, X_test)
        results.append((row, evaluate_predictions(preds, y_test)))
        models[row] = (model, feat)
    return results, models, histories


def _run_nn_cell(cell, ptrain, ptest, y_train, y_test, sources, master_seed):
    rows = cell.get("rows") or list(W2V_ROWS)
    results, models, histories = [], {}, {}
    for row in rows:
        if row not in W2V_ROWS:
            raise ExperimentError(f"classifier {cell['classifier']} supports rows {W2V_ROWS}, got {row!r}")
        table = sources.for_row(row)
        with_desc = row.endswith("+DESC")
        ems_train = [embed_matrix(pm, table, with_desc=with_desc) for pm in ptrain]
        ems_test = [embed_matrix(pm, table, with_desc=with_desc) for pm in ptest]
        width = table.dim + (5 if with_desc else 0)
        seed = derive_seed(master_seed, f"{cell['name']}:{row}")
        if cell["classifier"] == "cnn":
            model = build_cnn(
                width,
                conv1_maps=int(cell.get("conv1_maps", 100)),
                conv2_maps=int(cell.get("conv2_maps", 200)),
                dense_units=int(cell.get("dense_units", 200)),
                dropout_rate=float(cell.get("dropout", 0.5)),
                seed=seed,
            )
        else:
            model = build_rnn(width, hidden=int(cell.get("hidden", 128)),
                              activation=cell.get("activation", "relu"), seed=seed)
        cfg = TrainConfig(
            lr=float(cell.get("lr", 0.001)),
            batch_size=int(cell.get("batch_size", 50)),
            epochs=int(cell.get("epochs", 10)),
            seed=derive_seed(master_seed, f"{cell['name']}:{row}:shuffle"),
            early_stopping=bool(cell.get("early_stopping", False)),
        )
        history = train_model(model, list(zip(ems_train, y_train)), cfg)
        preds = predict_model_batch(model, ems_test)
        results.append((row, evaluate_predictions(preds, y_test)))
        models[row] = (model, None)
        histories[row] = history
    return results, models, histories


def run_experiment(spec: dict, out_dir: str | Path, jobs: int = 1) -> dict:
    """Run every cell and write the report tree; returns the summary structure."""
    validate_spec(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    master_seed = int(spec.get("seed", 0))

    train = load_corpus(spec["train"]).labeled()
    test = load_corpus(spec["test"]).labeled()
    if len(train) == 0 or len(test) == 0:
        raise ExperimentError("experiment needs labeled train and test data")
    tagger = default_tagger()
    ptrain = _preprocess_all(train, tagger)
    ptest = _preprocess_all(test, tagger)
    y_train = [m.label for m in train]
    y_test = [m.label for m in test]
    sources = _EmbeddingSources(spec, train, test, ptrain, ptest, master_seed)

    def run_cell(cell):
        if cell["classifier"] == "svm":
            return _run_svm_cell(cell, ptrain, ptest, y_train, y_test, sources, master_seed)
        return _run_nn_cell(cell, ptrain, ptest, y_train, y_test, sources, master_seed)

    cells = spec["cells"]
    if jobs > 1:
        # embedding sources are materialized up front so parallel cells only read
        if any(r.startswith("GW2V") for c in cells for r in (c.get("rows") or ())):
            sources.generic()
        if any(r.startswith("CW2V") for c in cells for r in (c.get("rows") or W2V_ROWS)):
            sources.custom()
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_cell, cells))
    else:
        outcomes = [run_cell(cell) for cell in cells]

    summary_parts = []
    summary = {"name": spec["name"], "cells": {}}
    for cell, (results, models, histories) in zip(cells, outcomes):
        cell_dir = out / cell["name"]
        cell_dir.mkdir(parents=True, exist_ok=True)
        rpt.write_report_csv(cell_dir / "report.csv", results)
        table_text = rpt.render_table(results, title=cell["name"])
        atomic_write_text(cell_dir / "report.txt", table_text)
        rpt.fig_f1_bars(cell_dir / "report.png", results, title=cell["name"])
        for row, rep in results:
            safe = row.replace("+", "_")
            rpt.fig_confusion(cell_dir / f"confusion_{safe}.png", rep, title=f"{cell['name']} / {row}")
        for row, (model, feat) in models.items():
            safe = row.replace("+", "_")
            if cell["classifier"] == "svm":
                svm_mod.save_svm(model, cell_dir / f"{safe}.model")
            else:
                save_model(model, cell_dir / f"{safe}.model")
        if histories:
            rpt.fig_loss_curve(cell_dir / "loss.png", histories, title=cell["name"])
        summary_parts.append(table_text)
        summary["cells"][cell["name"]] = {
            row: rep.as_dict() for row, rep in results
        }
    atomic_write_text(out / "summary.txt", "\n".join(summary_parts))
    return summary
