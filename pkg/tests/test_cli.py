import json
from pathlib import Path

import numpy as np
import pytest

from stagegate.cli import main
from stagegate.corpus import load_corpus


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-synth")
    code = run("synth", "--classes", "4", "--train", "120", "--test", "60",
               "--seed", "7", "--out", str(root))
    assert code == 0
    return root


class TestSynth:
    def test_sizes_match_flags(self, synth_dir):
        train = load_corpus(synth_dir / "train.jsonl")
        test = load_corpus(synth_dir / "test.jsonl")
        assert len(train) == 120
        assert len(test) == 60
        assert all(m.label is not None for m in train)

    def test_manifest_written(self, synth_dir):
        manifest = json.loads((synth_dir / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert manifest["seed"] == 7
        assert any(p.endswith("train.jsonl") for p in manifest["outputs"])

    def test_keywords_exclusive(self, synth_dir):
        meta = json.loads((synth_dir / "keywords.json").read_text())
        pools = [set(v) for v in meta["keywords"].values()]
        for i in range(len(pools)):
            for j in range(i + 1, len(pools)):
                assert not pools[i] & pools[j]


class TestIngestAndStats:
    def test_ingest_roundtrip(self, synth_dir, tmp_path):
        out = tmp_path / "copy.jsonl"
        assert run("ingest", "--in", str(synth_dir / "train.jsonl"), "--out", str(out)) == 0
        assert len(load_corpus(out)) == 120

    def test_ingest_split(self, synth_dir, tmp_path):
        out = tmp_path / "splitdir"
        assert run("ingest", "--in", str(synth_dir / "train.jsonl"), "--out", str(out),
                   "--split", "0.75", "--seed", "3") == 0
        assert len(load_corpus(out / "train.jsonl")) == 90
        assert len(load_corpus(out / "test.jsonl")) == 30

    def test_ingest_bad_file_exit_3(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id":"1"}\n')
        assert run("ingest", "--in", str(bad), "--out", str(tmp_path / "o.jsonl")) == 3

    def test_stats_writes_figures(self, synth_dir, tmp_path, capsys):
        out = tmp_path / "stats"
        assert run("stats", "--in", str(synth_dir / "train.jsonl"), "--out", str(out)) == 0
        printed = capsys.readouterr().out
        assert "Words in message" in printed
        assert (out / "stats.csv").exists()
        assert (out / "stats.png").exists()


class TestPreprocess:
    def test_preprocess_records(self, synth_dir, tmp_path):
        out = tmp_path / "proc.jsonl"
        assert run("preprocess", "--in", str(synth_dir / "test.jsonl"), "--out", str(out)) == 0
        rec = json.loads(out.read_text().splitlines()[0])
        assert len(rec["tokens"]) == len(rec["tags"])
        assert "normalized_text" in rec


class TestEmbeddingsCli:
    def test_train_embeddings(self, synth_dir, tmp_path):
        out = tmp_path / "emb.vec"
        assert run("train-embeddings", "--in", str(synth_dir / "train.jsonl"),
                   "--out", str(out), "--dim", "10", "--epochs", "2",
                   "--min-count", "2", "--subsample", "0", "--seed", "5") == 0
        header = out.read_text().splitlines()[0].split()
        assert header[1] == "10"
        assert (tmp_path / "emb.vec.manifest.json").exists()


@pytest.fixture(scope="module")
def svm_model(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "m.svm"
    code = run("train", "--model", "svm", "--train", str(synth_dir / "train.jsonl"),
               "--out", str(out), "--C", "0.01", "--min-df", "1", "--seed", "1")
    assert code == 0
    return out


class TestTrainEvaluatePredictExplain:
    def test_evaluate_report(self, synth_dir, svm_model, tmp_path, capsys):
        out = tmp_path / "rep"
        assert run("evaluate", "--model", str(svm_model),
                   "--test", str(synth_dir / "test.jsonl"), "--out", str(out)) == 0
        printed = capsys.readouterr().out
        for col in ("F_prep", "F_resp", "F_post", "F_eng", "F_avg"):
            assert col in printed
        assert (out / "report.csv").exists()
        assert (out / "confusion.png").exists()

    def test_predict_labels(self, synth_dir, svm_model, tmp_path):
        out = tmp_path / "preds.jsonl"
        assert run("predict", "--model", str(svm_model),
                   "--in", str(synth_dir / "test.jsonl"), "--out", str(out)) == 0
        recs = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(recs) == 60
        assert all(r["label"] in ("preparedness", "response", "post_emergency", "engagement")
                   for r in recs)

    def test_explain_lines(self, svm_model, capsys):
        assert run("explain", "--model", str(svm_model), "--class", "engagement",
                   "--top", "10") == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
        assert len(lines) == 10
        for line in lines:
            name, weight = line.split("\t")
            assert float(weight) > 0

    def test_rnn_train_and_evaluate(self, synth_dir, tmp_path):
        emb = tmp_path / "e.vec"
        assert run("train-embeddings", "--in", str(synth_dir / "train.jsonl"),
                   "--out", str(emb), "--dim", "8", "--epochs", "2",
                   "--min-count", "2", "--subsample", "0", "--seed", "2") == 0
        model = tmp_path / "m.rnn"
        assert run("train", "--model", "rnn", "--train", str(synth_dir / "train.jsonl"),
                   "--out", str(model), "--embeddings", str(emb),
                   "--hidden", "8", "--epochs", "1", "--seed", "3") == 0
        out = tmp_path / "rep"
        assert run("evaluate", "--model", str(model),
                   "--test", str(synth_dir / "test.jsonl"), "--out", str(out)) == 0
        assert (out / "report.csv").exists()

    def test_missing_model_exit_3(self, synth_dir, tmp_path):
        assert run("evaluate", "--model", str(tmp_path / "nope.svm"),
                   "--test", str(synth_dir / "test.jsonl")) == 3


class TestExperimentCli:
    def test_experiment_runs(self, synth_dir, tmp_path):
        spec = {
            "name": "cli-exp",
            "train": str(synth_dir / "train.jsonl"),
            "test": str(synth_dir / "test.jsonl"),
            "seed": 4,
            "cells": [
                {"name": "svm_bow", "classifier": "svm", "representation": "bow",
                 "rows": ["Bool", "Tfidf"], "C": 0.01, "min_df": 1, "max_epochs": 40},
            ],
        }
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps(spec))
        out = tmp_path / "out"
        assert run("experiment", "--config", str(cfg), "--out", str(out)) == 0
        assert (out / "svm_bow" / "report.csv").exists()
        assert (out / "manifest.json").exists()

    def test_manifest_on_failure(self, tmp_path):
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps({
            "name": "broken", "train": "/nonexistent.jsonl", "test": "/nonexistent.jsonl",
            "cells": [{"name": "c", "classifier": "svm"}],
        }))
        out = tmp_path / "out"
        assert run("experiment", "--config", str(cfg), "--out", str(out)) == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "error"


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["train"])  # missing required flags
    assert exc.value.code == 2
