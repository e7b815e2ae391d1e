"""Averaged-perceptron part-of-speech tagger over Penn Treebank tags.

Trained from a plain-text corpus of "token/TAG" sentences (one per line).
A small domain-flavored corpus ships in ``data/tagger_corpus.txt`` and backs
the default tagger; supplying a larger corpus raises quality without any
code change. Greedy left-to-right decoding with the usual lexical, suffix,
shape and previous-tag features.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from functools import lru_cache
from importlib import resources
from pathlib import Path
from random import Random
from typing import Iterable, Sequence


class TaggerModelMissing(RuntimeError):
    """Raised when tagging is attempted with no trained/loaded model."""


# Canonical closed tag set: the Penn Treebank word tags plus punctuation.
PTB_WORD_TAGS = (
    "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD",
    "NN", "NNP", "NNPS", "NNS", "PDT", "POS", "PRP", "PRP$", "RB", "RBR",
    "RBS", "RP", "SYM", "TO", "UH", "VB", "VBD", "VBG", "VBN", "VBP",
    "VBZ", "WDT", "WP", "WP$", "WRB",
)
PTB_PUNCT_TAGS = (".", ",", ":", "(", ")", "''", "``", "#", "$")
PTB_TAGS = PTB_WORD_TAGS + PTB_PUNCT_TAGS

MODEL_FORMAT = "stagegate-tagger"
MODEL_VERSION = 1

_START = ("-START-", "-START2-")
_END = ("-END-", "-END2-")


class PerceptronTagger:
    def __init__(self):
        self.weights: dict[str, dict[str, float]] = {}
        self.tagdict: dict[str, str] = {}
        self.classes: set[str] = set()
        # averaging accumulators, only used while training
        self._totals: dict[tuple[str, str], float] = defaultdict(float)
        self._tstamps: dict[tuple[str, str], int] = defaultdict(int)
        self._updates = 0

    # -- decoding ------------------------------------------------------------

    def tag(self, words: Sequence[str]) -> list[str]:
        if not self.classes:
            raise TaggerModelMissing("tagger has no trained or loaded model")
        context = list(_START) + [w.lower() for w in words] + list(_END)
        tags: list[str] = []
        prev, prev2 = _START
        for i, word in enumerate(words):
            tag = self.tagdict.get(word.lower())
            if tag is None:
                feats = self._features(i, word, context, prev, prev2)
                tag = self._predict(feats)
            tags.append(tag)
            prev2, prev = prev, tag
        return tags

    def _predict(self, feats: dict[str, int]) -> str:
        scores: dict[str, float] = defaultdict(float)
        for feat, value in feats.items():
            if feat not in self.weights:
                continue
            for tag, weight in self.weights[feat].items():
                scores[tag] += value * weight
        # deterministic tie-break on tag name
        return max(self.classes, key=lambda t: (scores[t], t))

    def _features(self, i, word, context, prev, prev2) -> dict[str, int]:
        feats: dict[str, int] = {}

        def add(name, *args):
            feats[" ".join((name,) + tuple(args))] = 1

        i += len(_START)
        low = word.lower()
        add("bias")
        add("i suffix", low[-3:])
        add("i pref1", low[0])
        add("i-1 tag", prev)
        add("i-2 tag", prev2)
        add("i tag+i-2 tag", prev, prev2)
        add("i word", context[i])
        add("i-1 tag+i word", prev, context[i])
        add("i-1 word", context[i - 1])
        add("i-1 suffix", context[i - 1][-3:])
        add("i-2 word", context[i - 2])
        add("i+1 word", context[i + 1])
        add("i+1 suffix", context[i + 1][-3:])
        add("i+2 word", context[i + 2])
        if word.istitle():
            add("i title")
        if word.isupper():
            add("i upper")
        if any(c.isdigit() for c in word):
            add("i digit")
        if "-" in word:
            add("i hyphen")
        return feats

    # -- training --------------------------------------------------------------

    def train(
        self,
        sentences: Sequence[list[tuple[str, str]]],
        iterations: int = 10,
        seed: int = 1,
    ) -> None:
        """Averaged-perceptron training; deterministic for a fixed seed."""
        self._make_tagdict(sentences)
        for tagged in sentences:
            for _, tag in tagged:
                self.classes.add(tag)
        rng = Random(seed)
        order = list(range(len(sentences)))
        for _ in range(iterations):
            rng.shuffle(order)
            for si in order:
                tagged = sentences[si]
                words = [w for w, _ in tagged]
                context = list(_START) + [w.lower() for w in words] + list(_END)
                prev, prev2 = _START
                for i, (word, truth) in enumerate(tagged):
                    guess = self.tagdict.get(word.lower())
                    if guess is None:
                        feats = self._features(i, word, context, prev, prev2)
                        guess = self._predict(feats)
                        self._update(truth, guess, feats)
                    prev2, prev = prev, guess
        self._average_weights()

    def _update(self, truth: str, guess: str, feats: dict[str, int]) -> None:
        self._updates += 1
        if truth == guess:
            return
        for f in feats:
            row = self.weights.setdefault(f, {})
            for tag, delta in ((truth, 1.0), (guess, -1.0)):
                key = (f, tag)
                w = row.get(tag, 0.0)
                self._totals[key] += (self._updates - self._tstamps[key]) * w
                self._tstamps[key] = self._updates
                row[tag] = w + delta

    def _average_weights(self) -> None:
        for f, row in self.weights.items():
            for tag, w in list(row.items()):
                key = (f, tag)
                total = self._totals[key] + (self._updates - self._tstamps[key]) * w
                averaged = round(total / max(self._updates, 1), 6)
                if averaged:
                    row[tag] = averaged
                else:
                    del row[tag]
        self._totals.clear()
        self._tstamps.clear()

    def _make_tagdict(self, sentences, freq_threshold=5) -> None:
        counts: dict[str, Counter] = defaultdict(Counter)
        for tagged in sentences:
            for word, tag in tagged:
                counts[word.lower()][tag] += 1
        for word, tag_counts in counts.items():
            tag, mode = tag_counts.most_common(1)[0]
            n = sum(tag_counts.values())
            # only frequent, fully unambiguous words bypass the model
            if n >= freq_threshold and mode == n:
                self.tagdict[word] = tag

    # -- persistence -------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        payload = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "classes": sorted(self.classes),
            "tagdict": self.tagdict,
            "weights": self.weights,
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PerceptronTagger":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != MODEL_FORMAT:
            raise TaggerModelMissing(f"{path}: not a tagger model file")
        if payload.get("version") != MODEL_VERSION:
            raise TaggerModelMissing(f"{path}: unsupported model version")
        tagger = cls()
        tagger.weights = payload["weights"]
        tagger.tagdict = payload["tagdict"]
        tagger.classes = set(payload["classes"])
        return tagger


def read_tagged_corpus(text: str) -> list[list[tuple[str, str]]]:
    """Parse "token/TAG token/TAG ..." lines; validates tags against PTB_TAGS."""
    sentences = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tagged = []
        for pair in line.split():
            if "/" not in pair:
                raise ValueError(f"tagged corpus line {lineno}: bad pair {pair!r}")
            word, tag = pair.rsplit("/", 1)
            if tag not in PTB_TAGS:
                raise ValueError(f"tagged corpus line {lineno}: unknown tag {tag!r}")
            tagged.append((word, tag))
        if tagged:
            sentences.append(tagged)
    return sentences


def train_tagger(corpus_path: str | Path, iterations: int = 10, seed: int = 1) -> PerceptronTagger:
    text = Path(corpus_path).read_text(encoding="utf-8")
    tagger = PerceptronTagger()
    tagger.train(read_tagged_corpus(text), iterations=iterations, seed=seed)
    return tagger


@lru_cache(maxsize=1)
def default_tagger() -> PerceptronTagger:
    """Tagger trained from the bundled corpus; deterministic, cached."""
    text = resources.files("stagegate.data").joinpath("tagger_corpus.txt").read_text("utf-8")
    tagger = PerceptronTagger()
    tagger.train(read_tagged_corpus(text), iterations=10, seed=1)
    return tagger


def pos_tag(words: Sequence[str], tagger: PerceptronTagger | None = None) -> list[str]:
    """Tag a token sequence with the default (or a supplied) model."""
    if not words:
        return []
    if tagger is None:
        tagger = default_tagger()
    return tagger.tag(words)
