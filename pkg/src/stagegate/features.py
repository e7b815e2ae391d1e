"""Classifier inputs: sparse BOW/POS/DESC vectors and padded embedding matrices.

The frozen tf-idf formula: tf = raw in-message count,
idf = ln((1 + N) / (1 + df)) + 1, document vector L2-normalized afterwards.
Vocabulary and idf are fit on the training split only.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from stagegate.corpus import Message
from stagegate.postag import PTB_TAGS
from stagegate.textprep import COMPOSITE_TAGS, ProcessedMessage

MAX_WORDS = 100  # fixed word-position count for embedded messages


class FeatureError(ValueError):
    pass


class EmptyCorpus(FeatureError):
    pass


class IdfMissing(FeatureError):
    pass


class VocabMismatch(FeatureError):
    pass


class EmptyParts(FeatureError):
    pass


class EmptyEmbeddingTable(FeatureError):
    pass


# --- sparse vectors -----------------------------------------------------------


class SparseVector:
    """Sorted (index, value) pairs with explicit dimensionality; no stored zeros."""

    __slots__ = ("indices", "values", "dim")

    def __init__(self, indices, values, dim: int):
        idx = np.asarray(indices, dtype=np.int64)
        val = np.asarray(values, dtype=np.float64)
        if idx.shape != val.shape:
            raise FeatureError("indices and values length mismatch")
        keep = val != 0.0
        idx, val = idx[keep], val[keep]
        order = np.argsort(idx, kind="stable")
        idx, val = idx[order], val[order]
        if idx.size and (idx[0] < 0 or idx[-1] >= dim):
            raise FeatureError(f"index out of range for dim {dim}")
        if idx.size > 1 and np.any(np.diff(idx) == 0):
            raise FeatureError("duplicate indices")
        self.indices = idx
        self.values = val
        self.dim = int(dim)

    @classmethod
    def from_counts(cls, counts: dict[int, float], dim: int) -> "SparseVector":
        items = sorted(counts.items())
        return cls([i for i, _ in items], [v for _, v in items], dim)

    @classmethod
    def zeros(cls, dim: int) -> "SparseVector":
        return cls([], [], dim)

    @classmethod
    def from_dense(cls, arr: np.ndarray) -> "SparseVector":
        arr = np.asarray(arr, dtype=np.float64).ravel()
        nz = np.nonzero(arr)[0]
        return cls(nz, arr[nz], arr.size)

    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float64)
        out[self.indices] = self.values
        return out

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values**2)))

    def scaled(self, a: float) -> "SparseVector":
        return SparseVector(self.indices, self.values * a, self.dim)

    def dot_dense(self, w: np.ndarray) -> float:
        return float(w[self.indices] @ self.values)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SparseVector)
            and self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return f"SparseVector(nnz={self.nnz()}, dim={self.dim})"


class BowMode(Enum):
    BOOL = "bool"
    FREQ = "freq"
    TFIDF = "tfidf"


# --- n-grams and vocabulary ---------------------------------------------------


def extract_ngrams(lemmas: Sequence[str], orders: Iterable[int]) -> Counter:
    """Contiguous lemma n-grams (joined by a space) with multiplicity."""
    grams: Counter = Counter()
    for n in sorted(set(orders)):
        if n < 1:
            raise FeatureError(f"n-gram order must be >= 1, got {n}")
        for i in range(len(lemmas) - n + 1):
            grams[" ".join(lemmas[i : i + n])] += 1
    return grams


def _lemmas_of(doc: Union[ProcessedMessage, Sequence[str]]) -> Sequence[str]:
    if isinstance(doc, ProcessedMessage):
        return doc.lemmas()
    return doc


@dataclass(frozen=True)
class Vocabulary:
    index: dict[str, int]
    df: np.ndarray  # document frequency, aligned with index values
    orders: tuple[int, ...]
    min_df: int
    n_docs: int

    def __len__(self) -> int:
        return len(self.index)

    def names(self) -> list[str]:
        out = [""] * len(self.index)
        for g, i in self.index.items():
            out[i] = g
        return out

    def to_dict(self) -> dict:
        return {
            "orders": list(self.orders),
            "min_df": self.min_df,
            "n_docs": self.n_docs,
            "ngrams": self.names(),
            "df": [int(x) for x in self.df],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        names = d["ngrams"]
        return cls(
            index={g: i for i, g in enumerate(names)},
            df=np.asarray(d["df"], dtype=np.int64),
            orders=tuple(d["orders"]),
            min_df=int(d["min_df"]),
            n_docs=int(d["n_docs"]),
        )


def build_vocabulary(
    corpus: Sequence[Union[ProcessedMessage, Sequence[str]]],
    orders: Iterable[int] = (1, 2, 3),
    min_df: int = 2,
) -> Vocabulary:
    """Deterministic vocabulary over the corpus; lexicographic index order."""
    if not corpus:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    orders = tuple(sorted(set(orders)))
    df_counter: Counter = Counter()
    for doc in corpus:
        seen = set(extract_ngrams(_lemmas_of(doc), orders))
        df_counter.update(seen)
    kept = sorted(g for g, c in df_counter.items() if c >= min_df)
    index = {g: i for i, g in enumerate(kept)}
    df = np.array([df_counter[g] for g in kept], dtype=np.int64)
    return Vocabulary(index=index, df=df, orders=orders, min_df=min_df, n_docs=len(corpus))


@dataclass(frozen=True)
class IdfTable:
    values: np.ndarray
    n_docs: int

    @property
    def dim(self) -> int:
        return int(self.values.size)


def fit_idf(vocab: Vocabulary) -> IdfTable:
    """idf = ln((1 + N) / (1 + df)) + 1 (smoothed)."""
    values = np.log((1.0 + vocab.n_docs) / (1.0 + vocab.df.astype(np.float64))) + 1.0
    return IdfTable(values=values, n_docs=vocab.n_docs)


def bow_vector(
    doc: Union[ProcessedMessage, Sequence[str]],
    vocab: Vocabulary,
    mode: BowMode = BowMode.TFIDF,
    idf: Optional[IdfTable] = None,
) -> SparseVector:
    """BOW vector in the vocabulary's space; OOV n-grams are ignored."""
    counts = extract_ngrams(_lemmas_of(doc), vocab.orders)
    pairs = {vocab.index[g]: float(c) for g, c in counts.items() if g in vocab.index}
    if mode == BowMode.BOOL:
        pairs = {i: 1.0 for i in pairs}
    elif mode == BowMode.TFIDF:
        if idf is None:
            raise IdfMissing("Tfidf mode requires a fitted IdfTable")
        if idf.dim != len(vocab):
            raise VocabMismatch(f"idf dim {idf.dim} != vocabulary size {len(vocab)}")
        pairs = {i: c * idf.values[i] for i, c in pairs.items()}
        norm = math.sqrt(sum(v * v for v in pairs.values()))
        if norm > 0:
            pairs = {i: v / norm for i, v in pairs.items()}
    return SparseVector.from_counts(pairs, len(vocab))


# --- POS features ---------------------------------------------------------------


def pos_feature_names(two_letter: bool = False) -> list[str]:
    """Deterministic POS feature-space ordering: base tags then clause tags."""
    if two_letter:
        base = sorted({t[:2] for t in PTB_TAGS})
    else:
        base = sorted(PTB_TAGS)
    return base + list(COMPOSITE_TAGS)


def pos_features(pm: ProcessedMessage, two_letter: bool = False) -> SparseVector:
    """Counts per base tag (optionally truncated to 2 letters) + clause tags."""
    names = pos_feature_names(two_letter)
    pos_index = {t: i for i, t in enumerate(names)}
    counts: Counter = Counter()
    for tag in pm.tags:
        key = tag[:2] if two_letter else tag
        if key in pos_index:
            counts[pos_index[key]] += 1
    for clause in pm.clauses:
        counts[pos_index[clause.tag]] += 1
    return SparseVector.from_counts({i: float(c) for i, c in counts.items()}, len(names))


# --- DESC features -----------------------------------------------------------------

DESC_NAMES = (
    "desc:word_count",
    "desc:likes",
    "desc:exclamations",
    "desc:questions",
    "desc:capital_ratio",
)


@dataclass(frozen=True)
class DescFeatures:
    word_count: int
    likes: int
    exclamations: int
    questions: int
    capital_ratio: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.word_count, self.likes, self.exclamations, self.questions, self.capital_ratio],
            dtype=np.float64,
        )


def desc_features(msg: Message) -> DescFeatures:
    """The 5 descriptive features over the raw message text."""
    letters = [c for c in msg.text if c.isalpha()]
    upper = sum(1 for c in letters if c.isupper())
    ratio = upper / len(letters) if letters else 0.0
    return DescFeatures(
        word_count=msg.word_count(),
        likes=msg.likes,
        exclamations=msg.text.count("!"),
        questions=msg.text.count("?"),
        capital_ratio=ratio,
    )


class DescScaler:
    """Optional per-feature standardization for DESC values (fit on train)."""

    def __init__(self):
        self.mean = np.zeros(5)
        self.std = np.ones(5)

    def fit(self, descs: Sequence[DescFeatures]) -> "DescScaler":
        arr = np.stack([d.as_array() for d in descs])
        self.mean = arr.mean(axis=0)
        std = arr.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)
        return self

    def transform(self, d: DescFeatures) -> np.ndarray:
        return (d.as_array() - self.mean) / self.std


# --- assembling parts into one space ------------------------------------------------


def assemble(parts: Sequence[Union[SparseVector, DescFeatures, np.ndarray]]) -> SparseVector:
    """Concatenate feature parts with offset-shifted indices.

    DescFeatures (or a raw 5-array) contribute 5 dense trailing coordinates.
    """
    if not parts:
        raise EmptyParts("assemble requires at least one part")
    indices: list[np.ndarray] = []
    values: list[np.ndarray] = []
    offset = 0
    for part in parts:
        if isinstance(part, DescFeatures):
            part = SparseVector.from_dense(part.as_array())
        elif isinstance(part, np.ndarray):
            part = SparseVector.from_dense(part)
        indices.append(part.indices + offset)
        values.append(part.values)
        offset += part.dim
    return SparseVector(np.concatenate(indices), np.concatenate(values), offset)


class FeatureSpace:
    """Named parts of an assembled feature space; decodes index -> name."""

    def __init__(self, parts: Sequence[tuple[str, list[str] | int]]):
        # each part: (part name, explicit name list) or (part name, dim) for
        # generated names like flattened embedding grids
        self.parts = [(name, names) for name, names in parts]

    @property
    def dim(self) -> int:
        return sum(len(n) if isinstance(n, list) else n for _, n in self.parts)

    def name(self, index: int) -> str:
        i = index
        for part_name, names in self.parts:
            size = len(names) if isinstance(names, list) else names
            if i < size:
                if isinstance(names, list):
                    return names[i]
                return f"{part_name}[{i}]"
            i -= size
        raise IndexError(index)

    def descriptor_hash(self) -> str:
        h = hashlib.sha256()
        for part_name, names in self.parts:
            h.update(part_name.encode())
            if isinstance(names, list):
                for n in names:
                    h.update(b"\x00" + n.encode())
            else:
                h.update(f"#{names}".encode())
            h.update(b"\x01")
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {"parts": [[n, v] for n, v in self.parts]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpace":
        return cls([(p[0], p[1]) for p in d["parts"]])


# --- dense embedded-message form ---------------------------------------------------


@dataclass(frozen=True)
class EmbeddedMessage:
    """Fixed 100-row matrix of word vectors; rows past true_length are zero."""

    matrix: np.ndarray  # (MAX_WORDS, width) float32
    true_length: int

    def __post_init__(self):
        if self.matrix.shape[0] != MAX_WORDS:
            raise FeatureError(f"embedded matrix must have {MAX_WORDS} rows")
        if not 0 <= self.true_length <= MAX_WORDS:
            raise FeatureError(f"true_length {self.true_length} out of range")
        if self.true_length < MAX_WORDS and np.any(self.matrix[self.true_length :]):
            raise FeatureError("padding rows past true_length must be all-zero")

    @property
    def width(self) -> int:
        return int(self.matrix.shape[1])

    def flattened(self) -> np.ndarray:
        return self.matrix.reshape(-1)


def embed_matrix(pm: ProcessedMessage, table, with_desc: bool = False) -> EmbeddedMessage:
    """Stack the first 100 token vectors; zero-pad or truncate to 100 rows.

    OOV tokens map to the zero vector. With ``with_desc`` the message's 5
    DESC values are appended to every non-padded row (padding stays zero),
    so the per-row width becomes d + 5.
    """
    if len(table) == 0:
        raise EmptyEmbeddingTable("embedding table has no entries")
    d = table.dim
    width = d + 5 if with_desc else d
    lemmas = pm.lemmas()[:MAX_WORDS]
    out = np.zeros((MAX_WORDS, width), dtype=np.float32)
    for i, lemma in enumerate(lemmas):
        vec = table.get(lemma)
        if vec is not None:
            out[i, :d] = vec
    true_length = len(lemmas)
    if with_desc and true_length:
        desc = desc_features(pm.source).as_array().astype(np.float32)
        out[:true_length, d:] = desc
    return EmbeddedMessage(matrix=out, true_length=true_length)


# --- feature-matrix dump (text, for cross-implementation oracles) ---------------------


def save_feature_matrix(path: str | Path, vectors: Sequence[SparseVector]) -> None:
    if not vectors:
        raise EmptyParts("no vectors to save")
    dim = vectors[0].dim
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{len(vectors)} {dim}\n")
        for v in vectors:
            if v.dim != dim:
                raise VocabMismatch("inconsistent vector dimensionality")
            fh.write(" ".join(f"{i}:{val:.17g}" for i, val in zip(v.indices, v.values)))
            fh.write("\n")


def load_feature_matrix(path: str | Path) -> list[SparseVector]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FeatureError(f"{path}: empty feature matrix file")
    n, dim = (int(x) for x in lines[0].split())
    out = []
    for row in lines[1 : n + 1]:
        pairs = [p.split(":") for p in row.split()] if row.strip() else []
        out.append(
            SparseVector([int(i) for i, _ in pairs], [float(v) for _, v in pairs], dim)
        )
    if len(out) != n:
        raise FeatureError(f"{path}: expected {n} rows, found {len(out)}")
    return out


def save_vocabulary(path: str | Path, vocab: Vocabulary, idf: Optional[IdfTable] = None) -> None:
    payload = {"format": "stagegate-vocab", "version": 1, "vocabulary": vocab.to_dict()}
    if idf is not None:
        payload["idf"] = [float(x) for x in idf.values]
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_vocabulary(path: str | Path) -> tuple[Vocabulary, Optional[IdfTable]]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != "stagegate-vocab":
        raise FeatureError(f"{path}: not a vocabulary file")
    vocab = Vocabulary.from_dict(payload["vocabulary"])
    idf = None
    if "idf" in payload:
        idf = IdfTable(values=np.asarray(payload["idf"], dtype=np.float64), n_docs=vocab.n_docs)
    return vocab, idf
