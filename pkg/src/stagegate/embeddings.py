"""Skip-gram word embeddings with negative sampling, trained from scratch.

Classic recipe: unigram^0.75 negative-sampling distribution, dynamic window,
optional frequent-word subsampling, linearly decaying learning rate. Training
is bit-reproducible for a fixed seed in single-threaded mode; workers > 1
trades reproducibility for lock-free asynchronous updates.
"""

from __future__ import annotations

import struct
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class EmbeddingError(ValueError):
    pass


class EmptyCorpusAfterFiltering(EmbeddingError):
    pass


class FormatError(EmbeddingError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class InconsistentDimension(EmbeddingError):
    pass


class WordNotFound(KeyError):
    pass


@dataclass
class W2vConfig:
    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    min_count: int = 5
    subsample: float = 1e-3
    lr_start: float = 0.025
    lr_end: float = 1e-4
    seed: int = 1

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.negatives < 1 or self.epochs < 1:
            raise EmbeddingError("dim, window, negatives and epochs must all be >= 1")


class EmbeddingTable:
    """Immutable word -> vector map once training/loading is done."""

    def __init__(self, words: Sequence[str], vectors: np.ndarray, metadata: Optional[dict] = None):
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise EmbeddingError("vectors must be (len(words), d)")
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        self.vectors = np.asarray(vectors, dtype=np.float32)
        self.metadata = dict(metadata or {})

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def get(self, word: str) -> Optional[np.ndarray]:
        i = self.index.get(word)
        return None if i is None else self.vectors[i]

    def __getitem__(self, word: str) -> np.ndarray:
        i = self.index.get(word)
        if i is None:
            raise WordNotFound(word)
        return self.vectors[i]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30.0, 30.0)))


class _SkipGramState:
    def __init__(self, vocab_words, counts, cfg: W2vConfig):
        self.cfg = cfg
        self.words = vocab_words
        self.counts = np.array([counts[w] for w in vocab_words], dtype=np.float64)
        self.index = {w: i for i, w in enumerate(vocab_words)}
        noise = self.counts**0.75
        self.noise_cdf = np.cumsum(noise / noise.sum())
        rng = np.random.default_rng(cfg.seed)
        v, d = len(vocab_words), cfg.dim
        self.w_in = ((rng.random((v, d)) - 0.5) / d).astype(np.float32)
        self.w_out = np.zeros((v, d), dtype=np.float32)
        total = self.counts.sum()
        if cfg.subsample > 0:
            ratio = cfg.subsample * total / self.counts
            self.keep_prob = np.minimum(1.0, np.sqrt(ratio) + ratio)
        else:
            self.keep_prob = np.ones_like(self.counts)


def _train_sentences(state: _SkipGramState, sentence_ids, rng, lr_of, processed_box, lock=None):
    cfg = state.cfg
    w_in, w_out = state.w_in, state.w_out
    k = cfg.negatives
    for ids in sentence_ids:
        if cfg.subsample > 0 and len(ids):
            keep = rng.random(len(ids)) < state.keep_prob[ids]
            ids = ids[keep]
        n = len(ids)
        for pos in range(n):
            center = ids[pos]
            b = int(rng.integers(1, cfg.window + 1))
            lo, hi = max(0, pos - b), min(n, pos + b + 1)
            context = np.concatenate([ids[lo:pos], ids[pos + 1 : hi]])
            processed_box[0] += 1
            if context.size == 0:
                continue
            lr = lr_of(processed_box[0])
            negs = np.searchsorted(state.noise_cdf, rng.random(context.size * k))
            # one joint update per center word: positives then negatives
            targets = np.concatenate([context, negs])
            labels = np.zeros(targets.size, dtype=np.float32)
            labels[: context.size] = 1.0
            # negatives that collide with their positive are dropped
            collide = np.zeros(targets.size, dtype=bool)
            collide[context.size :] = negs == np.repeat(context, k)
            targets, labels = targets[~collide], labels[~collide]
            v = w_in[center]
            outs = w_out[targets]
            g = (labels - _sigmoid(outs @ v)) * lr
            grad_v = g @ outs
            np.add.at(w_out, targets, np.outer(g, v))
            w_in[center] = v + grad_v


def train_word2vec(
    corpus: Sequence[Sequence[str]], cfg: W2vConfig = None, workers: int = 1
) -> EmbeddingTable:
    """Train skip-gram/negative-sampling embeddings over token sequences."""
    cfg = cfg or W2vConfig()
    counts = Counter()
    for sent in corpus:
        counts.update(sent)
    vocab_words = sorted(
        (w for w, c in counts.items() if c >= cfg.min_count),
        key=lambda w: (-counts[w], w),
    )
    if not vocab_words:
        raise EmptyCorpusAfterFiltering(
            f"no words with count >= min_count ({cfg.min_count})"
        )
    state = _SkipGramState(vocab_words, counts, cfg)
    sentence_ids = [
        np.array([state.index[w] for w in sent if w in state.index], dtype=np.int64)
        for sent in corpus
    ]
    sentence_ids = [s for s in sentence_ids if len(s)]
    total_positions = cfg.epochs * sum(len(s) for s in sentence_ids)

    def lr_of(processed: int) -> float:
        frac = processed / max(total_positions, 1)
        return max(cfg.lr_end, cfg.lr_start * (1.0 - frac))

    if workers <= 1:
        rng = np.random.default_rng(cfg.seed + 1)
        box = [0]
        for _ in range(cfg.epochs):
            _train_sentences(state, sentence_ids, rng, lr_of, box)
    else:
        # lock-free asynchronous updates on the shared arrays; not reproducible
        shards = [sentence_ids[i::workers] for i in range(workers)]
        for _ in range(cfg.epochs):
            threads = []
            for wi, shard in enumerate(shards):
                rng = np.random.default_rng(cfg.seed + 1 + wi)
                threads.append(
                    threading.Thread(
                        target=_train_sentences, args=(state, shard, rng, lr_of, [0])
                    )
                )
            for t in threads:
                t.start()
            for t in threads:
                t.join()

    meta = {
        "dim": cfg.dim,
        "window": cfg.window,
        "negatives": cfg.negatives,
        "epochs": cfg.epochs,
        "min_count": cfg.min_count,
        "subsample": cfg.subsample,
        "seed": cfg.seed,
        "trained": True,
    }
    return EmbeddingTable(vocab_words, state.w_in, metadata=meta)


# --- nearest neighbors ---------------------------------------------------------


def nearest(table: EmbeddingTable, word: str, k: int) -> list[tuple[str, float]]:
    """Top-k other words by cosine similarity; ties broken lexicographically."""
    if word not in table:
        raise WordNotFound(word)
    if k <= 0:
        return []
    v = table[word].astype(np.float64)
    m = table.vectors.astype(np.float64)
    norms = np.linalg.norm(m, axis=1)
    vn = np.linalg.norm(v)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = (m @ v) / (norms * vn)
    sims = np.where((norms > 0) & (vn > 0), sims, 0.0)
    order = sorted(
        (i for i in range(len(table)) if table.words[i] != word),
        key=lambda i: (-sims[i], table.words[i]),
    )
    return [(table.words[i], float(sims[i])) for i in order[:k]]


# --- persistence ------------------------------------------------------------------
#
# Text format: header "vocab_size d", then "word f1 ... fd" per line.
# Binary format: the same ASCII header line, then per entry a little-endian
# uint32 byte length, the UTF-8 word bytes, and d little-endian float32 values.


def save_embeddings(table: EmbeddingTable, path: str | Path, format: str = "text") -> None:
    path = Path(path)
    if format == "text":
        with path.open("w", encoding="utf-8") as fh:
            fh.write(f"{len(table)} {table.dim}\n")
            for w, vec in zip(table.words, table.vectors):
                fh.write(w + " " + " ".join(f"{x:.9g}" for x in vec) + "\n")
    elif format == "binary":
        with path.open("wb") as fh:
            fh.write(f"{len(table)} {table.dim}\n".encode("utf-8"))
            for w, vec in zip(table.words, table.vectors):
                raw = w.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(np.asarray(vec, dtype="<f4").tobytes())
    else:
        raise EmbeddingError(f"unknown embedding format: {format!r}")


def load_embeddings(path: str | Path, format: str = "text") -> EmbeddingTable:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if format == "text":
        words: list[str] = []
        rows: list[np.ndarray] = []
        d: Optional[int] = None
        with path.open("r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines:
            raise FormatError(1, "empty embedding file")
        start = 0
        header = lines[0].split()
        declared = None
        if len(header) == 2 and all(p.lstrip("-").isdigit() for p in header):
            declared = (int(header[0]), int(header[1]))
            start = 1
        for lineno, line in enumerate(lines[start:], start + 1):
            if not line.strip():
                continue
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                raise FormatError(lineno, "expected a word and at least one value")
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float32)
            except ValueError:
                raise FormatError(lineno, "non-numeric vector component") from None
            if d is None:
                d = vec.size
            elif vec.size != d:
                raise InconsistentDimension(
                    f"line {lineno}: dimension {vec.size} != {d}"
                )
            words.append(parts[0])
            rows.append(vec)
        if not words:
            raise FormatError(1, "no embedding rows")
        if declared is not None and (declared[0] != len(words) or declared[1] != d):
            raise FormatError(1, "header does not match contents")
        return EmbeddingTable(words, np.stack(rows), metadata={"source": str(path)})
    if format == "binary":
        raw = path.read_bytes()
        nl = raw.index(b"\n")
        v, d = (int(x) for x in raw[:nl].split())
        off = nl + 1
        words, rows = [], []
        for _ in range(v):
            (wlen,) = struct.unpack_from("<I", raw, off)
            off += 4
            words.append(raw[off : off + wlen].decode("utf-8"))
            off += wlen
            rows.append(np.frombuffer(raw, dtype="<f4", count=d, offset=off).copy())
            off += 4 * d
        return EmbeddingTable(words, np.stack(rows), metadata={"source": str(path)})
    raise EmbeddingError(f"unknown embedding format: {format!r}")
