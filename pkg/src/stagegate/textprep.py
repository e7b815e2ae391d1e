"""Text normalization, tokenization, rule-based lemmatization, clause tagging.

Normalization replaces volatile surface forms (URLs, dates, phone numbers,
numbers, emails, @-handles, day/month names) with bracketed generic terms,
e.g. ``[URL]``. The replacement patterns below are frozen by fixture tests;
they are deliberate approximations, not a full NER pass.

Lemmatization is POS-aware suffix stripping plus an exception lexicon
(``data/lemma_exceptions.tsv``). It is a deterministic approximation and
makes no claim of parity with dictionary-backed lemmatizers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

from stagegate.corpus import Message


class LengthMismatch(ValueError):
    pass


# --- generic-term normalization -------------------------------------------

_EMAIL = re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}")
_URL = re.compile(r"(?:https?://|www\.)[^\s]+", re.IGNORECASE)
_HANDLE = re.compile(r"@\w+")
# US-style phone numbers: optional +1, 3-digit area code (optionally in
# parentheses), separators -, . or space.
_PHONE = re.compile(
    r"(?<!\d)(?:\+?1[-. ])?(?:\(\d{3}\)\s?|\d{3}[-. ])\d{3}[-. ]\d{4}(?!\d)"
)
# Numeric dates only; month-name dates decompose into [Month] + [Number].
_DATE = re.compile(
    r"(?<!\d)(?:\d{1,2}/\d{1,2}/\d{2,4}|\d{4}-\d{2}-\d{2}|\d{1,2}-\d{1,2}-\d{4})(?!\d)"
)
_NUMBER = re.compile(r"(?<![A-Za-z0-9])\d+(?:,\d{3})*(?:\.\d+)?(?!\d)")

_DAYS = (
    "monday tuesday wednesday thursday friday saturday sunday "
    "mon tue tues wed thu thur thurs fri sat sun"
).split()
_MONTHS = (
    "january february march april may june july august september october "
    "november december jan feb mar apr jun jul aug sep sept oct nov dec"
).split()
_DAY_RE = re.compile(r"\b(?:%s)\b" % "|".join(_DAYS), re.IGNORECASE)
_MONTH_RE = re.compile(r"\b(?:%s)\b" % "|".join(_MONTHS), re.IGNORECASE)

# Most-specific first; an email must win over the handle pattern, a URL
# over bare numbers, a phone over a date over a number.
_REPLACEMENTS = (
    (_EMAIL, "[Email]"),
    (_URL, "[URL]"),
    (_HANDLE, "[Handle]"),
    (_PHONE, "[Phone]"),
    (_DATE, "[Date]"),
    (_NUMBER, "[Number]"),
    (_DAY_RE, "[DayOfWeek]"),
    (_MONTH_RE, "[Month]"),
)


def normalize(text: str) -> str:
    """Replace volatile surface forms with bracketed generic terms.

    Idempotent: the generic terms themselves match none of the patterns.
    """
    for pattern, term in _REPLACEMENTS:
        text = pattern.sub(term, text)
    return text


# --- tokenization -----------------------------------------------------------

_GENERIC_TOKEN = re.compile(r"\[[A-Za-z]+\]")
_TOKEN_RE = re.compile(
    r"\[[A-Za-z]+\]"              # bracketed generic term, kept atomic
    r"|\w+(?:[-'’]\w+)*"     # word; internal hyphens/apostrophes kept
    r"|[^\w\s]"                   # any other character stands alone
)
# Clitics split off the host word, PTB style ("don't" -> "do" + "n't").
_CONTRACTIONS = ("n't", "'s", "'re", "'ve", "'ll", "'d", "'m")


@dataclass(frozen=True)
class Token:
    surface: str
    lemma: str
    position: int


def _split_contraction(word: str) -> list[str]:
    low = word.lower()
    for suf in _CONTRACTIONS:
        if low.endswith(suf) and len(word) > len(suf):
            return [word[: -len(suf)], word[-len(suf):]]
    return [word]


def tokenize(text: str) -> list[Token]:
    """Split normalized text into tokens; lossless over non-space characters.

    Generic terms stay atomic, hyphenated words stay single tokens,
    punctuation is split off, and the contraction clitics in
    ``_CONTRACTIONS`` are split from their host word.
    """
    surfaces: list[str] = []
    for piece in _TOKEN_RE.findall(text):
        if _GENERIC_TOKEN.fullmatch(piece) or not piece[0].isalnum():
            surfaces.append(piece)
        else:
            surfaces.extend(_split_contraction(piece))
    return [Token(surface=s, lemma=s.lower(), position=i) for i, s in enumerate(surfaces)]


# --- lemmatization ----------------------------------------------------------

_VOWELS = set("aeiou")


def _syllable_groups(s: str) -> int:
    groups = 0
    prev_vowel = False
    for ch in s:
        v = ch in _VOWELS
        if v and not prev_vowel:
            groups += 1
        prev_vowel = v
    return groups


def _undouble(stem: str) -> Optional[str]:
    # dropped -> drop, running -> run; ll/ss/ff/zz stay (falling -> fall)
    if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] in "bdgmnprt":
        return stem[:-1]
    return None


def _restore_e(stem: str) -> Optional[str]:
    if not stem:
        return None
    # notice(d), arrive(d), use(d), judge(d): consonant classes that almost
    # always carried a silent e before the stripped suffix.
    if stem[-1] in "uvcz" or stem.endswith("dg"):
        return stem + "e"
    if stem.endswith("at"):
        return stem + "e"
    if (
        stem[-1] == "s"
        and len(stem) >= 2
        and stem[-2] in _VOWELS
        and not stem.endswith("ss")
    ):
        return stem + "e"
    # one-syllable CVC stems: mak -> make, hop -> hope
    if (
        len(stem) >= 3
        and stem[-1] not in _VOWELS
        and stem[-1] not in "wxy"
        and stem[-2] in _VOWELS
        and stem[-3] not in _VOWELS
        and _syllable_groups(stem) == 1
    ):
        return stem + "e"
    return None


def _strip_inflection(s: str, suffix: str) -> str:
    stem = s[: -len(suffix)]
    if not stem:
        return s
    undoubled = _undouble(stem)
    if undoubled is not None:
        return undoubled
    restored = _restore_e(stem)
    if restored is not None:
        return restored
    return stem


def _plural_noun(s: str) -> str:
    if s.endswith("ies") and len(s) >= 5:
        return s[:-3] + "y"
    for suf in ("sses", "shes", "ches", "xes", "zes", "oes"):
        if s.endswith(suf):
            return s[:-2]
    if s.endswith("s") and not s.endswith(("ss", "us", "is")):
        return s[:-1]
    return s


def _third_person(s: str) -> str:
    if s.endswith("ies") and len(s) >= 5:
        return s[:-3] + "y"
    for suf in ("sses", "shes", "ches", "xes", "zes", "oes"):
        if s.endswith(suf):
            return s[:-2]
    if s.endswith("s") and not s.endswith("ss"):
        return s[:-1]
    return s


def _past(s: str) -> str:
    if s.endswith("ied") and len(s) >= 5:
        return s[:-3] + "y"
    if s.endswith("ed") and len(s) >= 4:
        return _strip_inflection(s, "ed")
    return s


def _gerund(s: str) -> str:
    if s.endswith("ing") and len(s) >= 5:
        return _strip_inflection(s, "ing")
    return s


def _comparative(s: str) -> str:
    if s.endswith("ier") and len(s) >= 5:
        return s[:-3] + "y"
    if s.endswith("er") and len(s) >= 4:
        return _strip_inflection(s, "er")
    return s


def _superlative(s: str) -> str:
    if s.endswith("iest") and len(s) >= 6:
        return s[:-4] + "y"
    if s.endswith("est") and len(s) >= 5:
        return _strip_inflection(s, "est")
    return s


_TAG_RULES = {
    "NNS": _plural_noun,
    "NNPS": _plural_noun,
    "VBD": _past,
    "VBN": _past,
    "VBG": _gerund,
    "VBZ": _third_person,
    "JJR": _comparative,
    "RBR": _comparative,
    "JJS": _superlative,
    "RBS": _superlative,
}


@lru_cache(maxsize=1)
def _exception_lexicon() -> dict[tuple[str, str], str]:
    lex: dict[tuple[str, str], str] = {}
    data = resources.files("stagegate.data").joinpath("lemma_exceptions.tsv")
    for lineno, line in enumerate(data.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"lemma_exceptions.tsv line {lineno}: expected 3 columns")
        surface, tag, lemma = parts
        lex[(surface, tag)] = lemma
    return lex


def lemmatize(token: Token | str, tag: str) -> str:
    """POS-aware suffix stripping with an exception lexicon; lowercased."""
    surface = token.surface if isinstance(token, Token) else token
    s = surface.lower()
    if not s:
        return s
    if _GENERIC_TOKEN.fullmatch(surface) or not any(c.isalpha() for c in s):
        return s
    lex = _exception_lexicon()
    hit = lex.get((s, tag)) or lex.get((s, "*"))
    if hit is not None:
        return hit
    rule = _TAG_RULES.get(tag)
    return rule(s) if rule else s


# --- composite verb-tense clause detection ---------------------------------

COMPOSITE_TAGS = ("VerbPast", "VerbPresent", "VerbFuture")

_PAST_AUX = {"has", "have", "had"}
_PRESENT_AUX = {"is", "are", "am", "was", "were"}
_FUTURE_AUX = {"will", "shall"}


@dataclass(frozen=True)
class ClauseSpan:
    start: int
    end: int  # exclusive
    tag: str


def detect_verb_clauses(tokens: Sequence[Token], tags: Sequence[str]) -> list[ClauseSpan]:
    """Auxiliary+verb tense clauses, leftmost-longest, non-overlapping.

    has/have/had + VBN -> VerbPast; is/are/am/was/were + VBG -> VerbPresent;
    will/shall (+ be)? + VB|VBG -> VerbFuture.
    """
    if len(tokens) != len(tags):
        raise LengthMismatch(f"{len(tokens)} tokens vs {len(tags)} tags")
    spans: list[ClauseSpan] = []
    i = 0
    n = len(tokens)
    while i < n:
        w = tokens[i].surface.lower()
        if w in _FUTURE_AUX:
            if (
                i + 2 < n
                and tokens[i + 1].surface.lower() == "be"
                and tags[i + 2] in ("VB", "VBG")
            ):
                spans.append(ClauseSpan(i, i + 3, "VerbFuture"))
                i += 3
                continue
            if i + 1 < n and tags[i + 1] in ("VB", "VBG"):
                spans.append(ClauseSpan(i, i + 2, "VerbFuture"))
                i += 2
                continue
        if w in _PAST_AUX and i + 1 < n and tags[i + 1] == "VBN":
            spans.append(ClauseSpan(i, i + 2, "VerbPast"))
            i += 2
            continue
        if w in _PRESENT_AUX and i + 1 < n and tags[i + 1] == "VBG":
            spans.append(ClauseSpan(i, i + 2, "VerbPresent"))
            i += 2
            continue
        i += 1
    return spans


# --- the processed-message pipeline -----------------------------------------


@dataclass(frozen=True)
class ProcessedMessage:
    source: Message
    normalized_text: str
    tokens: tuple[Token, ...]
    tags: tuple[str, ...]
    clauses: tuple[ClauseSpan, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise LengthMismatch(f"{len(self.tokens)} tokens vs {len(self.tags)} tags")
        for c in self.clauses:
            if not (0 <= c.start < c.end <= len(self.tokens)):
                raise ValueError(f"clause span {c} out of range")

    def lemmas(self) -> list[str]:
        return [t.lemma for t in self.tokens]


def preprocess(msg: Message, tagger=None) -> ProcessedMessage:
    """normalize -> tokenize -> POS-tag -> lemmatize -> clause-detect."""
    if tagger is None:
        from stagegate.postag import default_tagger

        tagger = default_tagger()
    norm = normalize(msg.text)
    raw = tokenize(norm)
    tags = tuple(tagger.tag([t.surface for t in raw]))
    toks = tuple(
        Token(surface=t.surface, lemma=lemmatize(t, tags[i]), position=t.position)
        for i, t in enumerate(raw)
    )
    clauses = tuple(detect_verb_clauses(toks, tags))
    return ProcessedMessage(
        source=msg, normalized_text=norm, tokens=toks, tags=tags, clauses=clauses
    )
