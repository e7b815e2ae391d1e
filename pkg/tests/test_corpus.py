import json
from random import Random

import pytest

from stagegate.corpus import (
    Dataset,
    DegenerateSplit,
    DuplicateId,
    EmptyDataset,
    LABEL_ORDER,
    Message,
    RecordInvalid,
    StageLabel,
    load_corpus,
    save_corpus,
    split,
    stats,
)


def make_dataset(n, labels=None, rng_seed=0):
    rng = Random(rng_seed)
    labels = labels or list(LABEL_ORDER)
    msgs = tuple(
        Message(id=f"m{i}", text=" ".join(["word"] * rng.randint(1, 12)),
                likes=rng.randint(0, 100), label=labels[i % len(labels)])
        for i in range(n)
    )
    return Dataset(msgs)


class TestLoadCorpus:
    def test_single_jsonl_record(self, tmp_path):
        p = tmp_path / "one.jsonl"
        p.write_text('{"id":"1","text":"UPDATE: road open","likes":12,"label":"post_emergency"}\n')
        d = load_corpus(p)
        assert len(d) == 1
        assert d[0].label == StageLabel.POST_EMERGENCY
        assert d[0].likes == 12

    def test_five_thousand_records_all_labels(self, tmp_path):
        p = tmp_path / "big.jsonl"
        labels = [lab.value for lab in LABEL_ORDER]
        with p.open("w") as fh:
            for i in range(5000):
                fh.write(json.dumps({"id": str(i), "text": f"msg {i}", "label": labels[i % 4]}) + "\n")
        d = load_corpus(p)
        assert len(d) == 5000
        assert sum(d.class_counts().values()) == 5000

    def test_missing_text_rejected(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id":"1","likes":3}\n')
        with pytest.raises(RecordInvalid):
            load_corpus(p)

    def test_unknown_label_rejected(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id":"1","text":"x","label":"urgent"}\n')
        with pytest.raises(RecordInvalid):
            load_corpus(p)

    def test_duplicate_id_rejected(self, tmp_path):
        p = tmp_path / "dup.jsonl"
        p.write_text('{"id":"1","text":"a"}\n{"id":"1","text":"b"}\n')
        with pytest.raises(DuplicateId):
            load_corpus(p)

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            load_corpus("/nonexistent/corpus.jsonl")

    def test_missing_likes_default_zero(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"id":"1","text":"a"}\n')
        assert load_corpus(p)[0].likes == 0

    def test_unlabeled_messages_loadable(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"id":"1","text":"a"}\n{"id":"2","text":"b","label":"response"}\n')
        d = load_corpus(p)
        assert len(d) == 2
        assert len(d.labeled()) == 1

    def test_csv_ingest(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("id,text,likes,label\n1,hello there,4,engagement\n2,storm watch,,preparedness\n")
        d = load_corpus(p)
        assert d[0].label == StageLabel.ENGAGEMENT
        assert d[1].likes == 0

    def test_jsonl_roundtrip_identity(self, tmp_path):
        d = make_dataset(25)
        out = tmp_path / "round.jsonl"
        save_corpus(d, out)
        d2 = load_corpus(out)
        assert [m.id for m in d2] == [m.id for m in d]
        assert all(a.text == b.text and a.likes == b.likes and a.label == b.label
                   for a, b in zip(d, d2))


class TestSplit:
    def test_paper_split_sizes(self):
        d = make_dataset(5000)
        train, test = split(d, 0.699, seed=1)
        assert (len(train), len(test)) == (3495, 1505)

    def test_same_seed_identical(self):
        d = make_dataset(200)
        a1, b1 = split(d, 0.7, seed=42)
        a2, b2 = split(d, 0.7, seed=42)
        assert [m.id for m in a1] == [m.id for m in a2]
        assert [m.id for m in b1] == [m.id for m in b2]

    def test_partition_property(self):
        for seed in range(5):
            d = make_dataset(101)
            train, test = split(d, 0.63, seed=seed, stratified=bool(seed % 2))
            ids_train = {m.id for m in train}
            ids_test = {m.id for m in test}
            assert ids_train | ids_test == {m.id for m in d}
            assert not ids_train & ids_test

    def test_stratified_within_one(self):
        msgs = tuple(
            Message(id=f"a{i}", text="x", label=StageLabel.RESPONSE) for i in range(40)
        ) + tuple(
            Message(id=f"b{i}", text="x", label=StageLabel.ENGAGEMENT) for i in range(60)
        )
        train, _ = split(Dataset(msgs), 0.5, seed=3, stratified=True)
        counts = train.class_counts()
        assert abs(counts[StageLabel.RESPONSE] - 20) <= 1
        assert abs(counts[StageLabel.ENGAGEMENT] - 30) <= 1

    def test_empty_dataset_raises(self):
        with pytest.raises(EmptyDataset):
            split(Dataset(()), 0.5, seed=0)

    def test_degenerate_split_raises(self):
        d = make_dataset(3)
        with pytest.raises(DegenerateSplit):
            split(d, 0.01, seed=0)


class TestStats:
    def test_tiny_exact_case(self):
        msgs = tuple(Message(id=str(i), text=" ".join(["w"] * n)) for i, n in enumerate([1, 2, 3]))
        cs = stats(Dataset(msgs))
        assert cs.words.min == 1
        assert cs.words.median == 2
        assert cs.words.mean == 2
        assert cs.words.max == 3

    def test_all_zero_likes(self):
        d = make_dataset(10)
        msgs = tuple(Message(id=m.id, text=m.text, likes=0, label=m.label) for m in d)
        cs = stats(Dataset(msgs))
        assert cs.likes.min == cs.likes.median == cs.likes.mean == cs.likes.max == cs.likes.sd == 0

    def test_table_shape(self):
        cs = stats(make_dataset(50))
        rows = cs.rows()
        assert [name for name, _ in rows] == ["Words in message", "Message likes"]
        for _, m in rows:
            assert m.min <= m.median <= m.max
            assert m.sd >= 0

    def test_permutation_invariant(self):
        d = make_dataset(30)
        shuffled = list(d.messages)
        Random(9).shuffle(shuffled)
        assert stats(d) == stats(Dataset(tuple(shuffled)))

    def test_empty_raises(self):
        with pytest.raises(EmptyDataset):
            stats(Dataset(()))


def test_label_roundtrip():
    for lab in LABEL_ORDER:
        assert StageLabel.from_string(lab.value) is lab
    assert [lab.value for lab in LABEL_ORDER] == [
        "preparedness", "response", "post_emergency", "engagement",
    ]
