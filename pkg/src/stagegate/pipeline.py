"""Fitted featurizers: turn processed messages into classifier inputs.

An SvmFeaturizer owns everything fit on the training split (vocabulary, idf,
optional DESC scaler) plus the layout needed to decode feature indices back
to names. It serializes into SVM model files so that prediction is
self-contained.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from stagegate.embeddings import EmbeddingTable
from stagegate.features import (
    DESC_NAMES,
    BowMode,
    DescScaler,
    FeatureSpace,
    IdfTable,
    SparseVector,
    Vocabulary,
    assemble,
    bow_vector,
    build_vocabulary,
    desc_features,
    embed_matrix,
    fit_idf,
    pos_feature_names,
    pos_features,
)
from stagegate.textprep import ProcessedMessage

REPRESENTATIONS = ("bow", "pos_desc", "combined", "w2v")


@dataclass
class FeaturizerConfig:
    representation: str = "bow"
    mode: BowMode = BowMode.TFIDF
    orders: tuple[int, ...] = (1, 2, 3)
    min_df: int = 2
    two_letter: bool = False
    standardize_desc: bool = False
    with_desc: bool = False  # only meaningful for the w2v representation

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation: {self.representation!r}")
        if isinstance(self.mode, str):
            self.mode = BowMode(self.mode.lower())
        self.orders = tuple(sorted(set(self.orders)))

    def to_dict(self) -> dict:
        return {
            "representation": self.representation,
            "mode": self.mode.value,
            "orders": list(self.orders),
            "min_df": self.min_df,
            "two_letter": self.two_letter,
            "standardize_desc": self.standardize_desc,
            "with_desc": self.with_desc,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturizerConfig":
        return cls(
            representation=d["representation"],
            mode=BowMode(d["mode"]),
            orders=tuple(d["orders"]),
            min_df=int(d["min_df"]),
            two_letter=bool(d["two_letter"]),
            standardize_desc=bool(d["standardize_desc"]),
            with_desc=bool(d["with_desc"]),
        )


class SvmFeaturizer:
    def __init__(self, config: FeaturizerConfig, embedding_table: Optional[EmbeddingTable] = None):
        self.config = config
        self.table = embedding_table
        if config.representation == "w2v" and embedding_table is None:
            raise ValueError("the w2v representation requires an embedding table")
        self.vocab: Optional[Vocabulary] = None
        self.idf: Optional[IdfTable] = None
        self.scaler: Optional[DescScaler] = None
        self._fitted = False

    @property
    def uses_bow(self) -> bool:
        return self.config.representation in ("bow", "combined")

    @property
    def uses_pos(self) -> bool:
        return self.config.representation in ("pos_desc", "combined")

    @property
    def uses_desc(self) -> bool:
        return self.config.representation in ("pos_desc", "combined")

    def fit(self, train: Sequence[ProcessedMessage]) -> "SvmFeaturizer":
        if self.uses_bow:
            self.vocab = build_vocabulary(train, orders=self.config.orders, min_df=self.config.min_df)
            if self.config.mode == BowMode.TFIDF:
                self.idf = fit_idf(self.vocab)
        if self.uses_desc and self.config.standardize_desc:
            self.scaler = DescScaler().fit([desc_features(pm.source) for pm in train])
        self._fitted = True
        return self

    def _desc_part(self, pm: ProcessedMessage):
        d = desc_features(pm.source)
        if self.scaler is not None:
            return self.scaler.transform(d)
        return d

    def transform(self, pm: ProcessedMessage) -> SparseVector:
        if not self._fitted:
            raise RuntimeError("featurizer must be fit before transform")
        rep = self.config.representation
        if rep == "w2v":
            em = embed_matrix(pm, self.table, with_desc=self.config.with_desc)
            return SparseVector.from_dense(em.flattened())
        parts = []
        if self.uses_bow:
            parts.append(bow_vector(pm, self.vocab, self.config.mode, self.idf))
        if self.uses_pos:
            parts.append(pos_features(pm, two_letter=self.config.two_letter))
        if self.uses_desc:
            parts.append(self._desc_part(pm))
        return assemble(parts)

    def transform_batch(self, pms: Sequence[ProcessedMessage]) -> list[SparseVector]:
        return [self.transform(pm) for pm in pms]

    def feature_space(self) -> FeatureSpace:
        parts: list[tuple[str, list[str] | int]] = []
        rep = self.config.representation
        if rep == "w2v":
            width = self.table.dim + (5 if self.config.with_desc else 0)
            parts.append(("w2v", 100 * width))
        else:
            if self.uses_bow:
                parts.append(("bow", self.vocab.names()))
            if self.uses_pos:
                parts.append(("pos", [f"pos:{t}" for t in pos_feature_names(self.config.two_letter)]))
            if self.uses_desc:
                parts.append(("desc", list(DESC_NAMES)))
        return FeatureSpace(parts)

    def to_dict(self) -> dict:
        out = {"config": self.config.to_dict()}
        if self.vocab is not None:
            out["vocab"] = self.vocab.to_dict()
        if self.idf is not None:
            out["idf"] = [float(x) for x in self.idf.values]
        if self.scaler is not None:
            out["scaler"] = {
                "mean": [float(x) for x in self.scaler.mean],
                "std": [float(x) for x in self.scaler.std],
            }
        if self.table is not None:
            out["embedding_ref"] = {
                "dim": self.table.dim,
                "source": self.table.metadata.get("source", ""),
            }
        return out

    @classmethod
    def from_dict(cls, d: dict, embedding_table: Optional[EmbeddingTable] = None) -> "SvmFeaturizer":
        config = FeaturizerConfig.from_dict(d["config"])
        obj = cls(config, embedding_table=embedding_table)
        if "vocab" in d:
            obj.vocab = Vocabulary.from_dict(d["vocab"])
            if "idf" in d:
                obj.idf = IdfTable(values=np.asarray(d["idf"], dtype=np.float64), n_docs=obj.vocab.n_docs)
        if "scaler" in d:
            obj.scaler = DescScaler()
            obj.scaler.mean = np.asarray(d["scaler"]["mean"])
            obj.scaler.std = np.asarray(d["scaler"]["std"])
        obj._fitted = True
        return obj
