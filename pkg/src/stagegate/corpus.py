"""Labeled message datasets: loading, validation, splitting, summary stats."""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from random import Random
from typing import Iterator, Optional


class CorpusError(ValueError):
    """Base class for corpus-level failures."""


class RecordInvalid(CorpusError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"record at line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateId(CorpusError):
    pass


class EmptyDataset(CorpusError):
    pass


class DegenerateSplit(CorpusError):
    pass


class StageLabel(Enum):
    """The four message stages. Enum order is the canonical class order."""

    PREPAREDNESS = "preparedness"
    RESPONSE = "response"
    POST_EMERGENCY = "post_emergency"
    ENGAGEMENT = "engagement"

    @classmethod
    def from_string(cls, s: str) -> "StageLabel":
        try:
            return cls(s.strip().lower())
        except ValueError:
            raise ValueError(f"unknown stage label: {s!r}") from None

    def __str__(self) -> str:
        return self.value


# Canonical class order; argmax tie-breaking and report columns follow it.
LABEL_ORDER: tuple[StageLabel, ...] = tuple(StageLabel)
LABEL_INDEX: dict[StageLabel, int] = {lab: i for i, lab in enumerate(LABEL_ORDER)}


@dataclass(frozen=True)
class Message:
    """One social-media post."""

    id: str
    text: str
    likes: int = 0
    label: Optional[StageLabel] = None
    created_at: Optional[str] = None

    def word_count(self) -> int:
        """Whitespace-token count of the raw text."""
        return len(self.text.split())


@dataclass(frozen=True)
class Dataset:
    """Ordered, id-unique collection of messages."""

    messages: tuple[Message, ...]
    source: str = "<memory>"
    loaded_at: str = ""

    def __post_init__(self):
        seen = set()
        for m in self.messages:
            if not m.id:
                raise RecordInvalid(0, "empty id")
            if m.id in seen:
                raise DuplicateId(f"duplicate message id: {m.id!r}")
            seen.add(m.id)
            if m.likes < 0:
                raise RecordInvalid(0, f"negative likes on id {m.id!r}")

    def __len__(self) -> int:
        return len(self.messages)

    def __iter__(self) -> Iterator[Message]:
        return iter(self.messages)

    def __getitem__(self, i):
        return self.messages[i]

    def class_counts(self) -> dict[StageLabel, int]:
        counts = {lab: 0 for lab in LABEL_ORDER}
        for m in self.messages:
            if m.label is not None:
                counts[m.label] += 1
        return counts

    def labeled(self) -> "Dataset":
        """Subset with a gold label; order preserved."""
        return Dataset(
            tuple(m for m in self.messages if m.label is not None),
            source=self.source,
            loaded_at=self.loaded_at,
        )


@dataclass(frozen=True)
class MeasureStats:
    min: float
    median: float
    mean: float
    max: float
    sd: float


@dataclass(frozen=True)
class CorpusStats:
    """Descriptive statistics over a dataset, one row per measure."""

    words: MeasureStats
    likes: MeasureStats

    def rows(self) -> list[tuple[str, MeasureStats]]:
        return [("Words in message", self.words), ("Message likes", self.likes)]


def _parse_record(rec: dict, line: int) -> Message:
    if "id" not in rec or rec["id"] in (None, ""):
        raise RecordInvalid(line, "missing id")
    if "text" not in rec or rec["text"] is None:
        raise RecordInvalid(line, "missing text")
    likes_raw = rec.get("likes", 0)
    if likes_raw in (None, ""):
        likes_raw = 0
    try:
        likes = int(likes_raw)
    except (TypeError, ValueError):
        raise RecordInvalid(line, f"likes not an integer: {likes_raw!r}") from None
    if likes < 0:
        raise RecordInvalid(line, f"negative likes: {likes}")
    label = None
    if rec.get("label") not in (None, ""):
        try:
            label = StageLabel.from_string(str(rec["label"]))
        except ValueError:
            raise RecordInvalid(line, f"unknown label: {rec['label']!r}") from None
    created = rec.get("created_at") or None
    return Message(id=str(rec["id"]), text=str(rec["text"]), likes=likes, label=label, created_at=created)


def load_corpus(path: str | Path, format: Optional[str] = None) -> Dataset:
    """Load a dataset from JSONL (native) or CSV.

    ``format`` defaults from the file suffix. Raises FileNotFoundError,
    RecordInvalid or DuplicateId on bad input.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if format not in ("jsonl", "csv"):
        raise ValueError(f"unknown corpus format: {format!r}")

    messages: list[Message] = []
    seen: set[str] = set()
    if format == "jsonl":
        with path.open("r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    rec = json.loads(raw)
                except json.JSONDecodeError as e:
                    raise RecordInvalid(lineno, f"invalid JSON: {e.msg}") from None
                if not isinstance(rec, dict):
                    raise RecordInvalid(lineno, "record is not an object")
                msg = _parse_record(rec, lineno)
                if msg.id in seen:
                    raise DuplicateId(f"duplicate message id {msg.id!r} at line {lineno}")
                seen.add(msg.id)
                messages.append(msg)
    else:
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for lineno, rec in enumerate(reader, start=2):  # header is line 1
                msg = _parse_record(rec, lineno)
                if msg.id in seen:
                    raise DuplicateId(f"duplicate message id {msg.id!r} at line {lineno}")
                seen.add(msg.id)
                messages.append(msg)
    loaded_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return Dataset(tuple(messages), source=str(path), loaded_at=loaded_at)


def message_to_record(m: Message) -> dict:
    rec: dict = {"id": m.id, "text": m.text, "likes": m.likes}
    if m.label is not None:
        rec["label"] = m.label.value
    if m.created_at is not None:
        rec["created_at"] = m.created_at
    return rec


def save_corpus(d: Dataset, path: str | Path) -> None:
    """Write the native JSONL interchange format."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for m in d:
            fh.write(json.dumps(message_to_record(m), ensure_ascii=False) + "\n")


def split(
    d: Dataset, train_fraction: float, seed: int, stratified: bool = True
) -> tuple[Dataset, Dataset]:
    """Disjoint (train, test) partition; deterministic for a fixed seed.

    Stratified mode keeps each class's share within one message of exact
    proportionality (largest-remainder allocation). Unlabeled messages form
    their own stratum. Both output datasets preserve input order.
    """
    n = len(d)
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")
    if not 0.0 < train_fraction < 1.0:
        raise DegenerateSplit(f"train_fraction must be in (0,1), got {train_fraction}")
    n_train = math.floor(n * train_fraction + 0.5)
    if n_train <= 0 or n_train >= n:
        raise DegenerateSplit(f"split of {n} at {train_fraction} leaves one side empty")

    rng = Random(seed)
    if not stratified:
        idx = list(range(n))
        rng.shuffle(idx)
        chosen = set(idx[:n_train])
    else:
        groups: dict[object, list[int]] = {}
        for i, m in enumerate(d):
            groups.setdefault(m.label, []).append(i)
        # Largest-remainder allocation so the total matches n_train exactly
        # while every class stays within +-1 of its proportional share.
        keys = sorted(groups, key=lambda lab: (lab is None, str(lab)))
        quotas = {k: len(groups[k]) * train_fraction for k in keys}
        alloc = {k: math.floor(quotas[k]) for k in keys}
        remainder = n_train - sum(alloc.values())
        by_frac = sorted(keys, key=lambda k: (-(quotas[k] - alloc[k]), str(k)))
        for k in by_frac[:remainder]:
            alloc[k] += 1
        chosen = set()
        for k in keys:
            members = list(groups[k])
            rng.shuffle(members)
            chosen.update(members[: alloc[k]])

    train = tuple(m for i, m in enumerate(d) if i in chosen)
    test = tuple(m for i, m in enumerate(d) if i not in chosen)
    if not train or not test:
        raise DegenerateSplit("one side of the split is empty")
    return (
        Dataset(train, source=f"{d.source}#train", loaded_at=d.loaded_at),
        Dataset(test, source=f"{d.source}#test", loaded_at=d.loaded_at),
    )


def _measure(values: list[float]) -> MeasureStats:
    return MeasureStats(
        min=float(min(values)),
        median=float(statistics.median(values)),
        mean=float(statistics.fmean(values)),
        max=float(max(values)),
        sd=float(statistics.pstdev(values)),
    )


def stats(d: Dataset) -> CorpusStats:
    """Exact order statistics over raw whitespace word counts and likes."""
    if len(d) == 0:
        raise EmptyDataset("cannot compute stats of an empty dataset")
    words = [float(m.word_count()) for m in d]
    likes = [float(m.likes) for m in d]
    return CorpusStats(words=_measure(words), likes=_measure(likes))
