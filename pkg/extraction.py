# extraction.py
"""Rule-based entity and fact extraction plus the entropy gate used at ingestion."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Iterable

import numpy as np
from dateutil import parser as date_parser
from dateutil.relativedelta import relativedelta
from scipy.stats import entropy

from utils.utils import tokenize

_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+|\n+")
_CLAUSE_RE = re.compile(r"[,;:()\"]+|\s[-–]\s")
_WORD_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9'’\-]*")

# function words that are capitalised only because they open a sentence
SENTENCE_STOPWORDS = frozenset("""
a an the this that these those i we you he she it they my our your his her its their
when what who whom whose where why how which is are was were do does did can could
should would will shall may might must if then and or but so because after before
during while on in at to for from by with of as yes no not there here please also
hi hello hey dear thanks ok okay
""".split())

TEMPORAL_WORDS = frozenset("""
january february march april may june july august september october november december
jan feb mar apr jun jul aug sep sept oct nov dec
monday tuesday wednesday thursday friday saturday sunday
today tomorrow yesterday tonight
""".split())

ARTICLES = frozenset({"a", "an", "the", "my", "our", "his", "her", "their", "its", "your"})
COPULAS = frozenset({"is", "was", "are", "were"})
PREPOSITIONS = frozenset({"in", "at", "to", "from", "for", "with", "on", "of", "by", "into", "near", "about"})
OBJECT_STOPS = frozenset({"and", "but", "because", "when", "while", "since", "although", "then"}) | PREPOSITIONS
MAX_OBJECT_TOKENS = 6


def canonical_entity(surface: str) -> str:
    s = surface.strip().replace("’", "'")
    if s.lower().endswith("'s"):
        s = s[:-2]
    s = s.rstrip("'")
    return "_".join(part for part in re.split(r"[\s\-]+", s.lower()) if part)


def _is_capitalised(word: str) -> bool:
    return word[:1].isupper()


def _sentences(content: str) -> list[str]:
    return [s for s in _SENTENCE_RE.split(content) if s and s.strip()]


def _words_with_gaps(text: str) -> list[tuple[str, str]]:
    """(word, separator-before) pairs; a non-space separator breaks capitalised runs."""
    out = []
    last = 0
    for m in _WORD_RE.finditer(text):
        out.append((m.group(0), text[last:m.start()]))
        last = m.end()
    return out


def extract_entities(content: str, known: Iterable[str] = ()) -> set[str]:
    """
    Capitalised token runs (minus sentence-opening function words, calendar
    words and leading articles) plus whole-word hits of known entities.
    Returns canonical ids: lowercase, words joined by underscores.
    """
    found: set[str] = set()
    for sentence in _sentences(content):
        run: list[str] = []
        words = _words_with_gaps(sentence)

        def flush():
            while run and (run[0].lower() in SENTENCE_STOPWORDS or run[0].lower() in TEMPORAL_WORDS):
                run.pop(0)
            if run:
                ent = canonical_entity(" ".join(run))
                if ent and ent not in TEMPORAL_WORDS:
                    found.add(ent)
            run.clear()

        for i, (word, gap) in enumerate(words):
            breaks = gap.strip() != ""
            if breaks:
                flush()
            if _is_capitalised(word) and not word[0].isdigit():
                if word.lower() in TEMPORAL_WORDS:
                    flush()
                    continue
                run.append(word)
                if word.endswith(("'s", "’s")):
                    flush()
            else:
                flush()
        flush()

    if known:
        tokens = tokenize(content)
        joined = " " + " ".join(tokens) + " "
        for ent in known:
            phrase = " " + ent.replace("_", " ") + " "
            if phrase.strip() and phrase in joined:
                found.add(ent)
    return found


# ---------------------------------------------------------------------------
# Facts
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExtractedFact:
    subject: str
    predicate: str
    object_text: str
    embedding: np.ndarray | None = None

    def __eq__(self, other) -> bool:
        return (isinstance(other, ExtractedFact)
                and (self.subject, self.predicate, self.object_text) == (other.subject, other.predicate, other.object_text))

    def __hash__(self) -> int:
        return hash((self.subject, self.predicate, self.object_text))


def _object(tokens: list[str]) -> str:
    obj: list[str] = []
    for t in tokens:
        if not obj and t in ARTICLES:
            continue
        if obj and t in OBJECT_STOPS:
            break
        obj.append(t)
        if len(obj) >= MAX_OBJECT_TOKENS:
            break
    return "_".join(obj)


def _clause_fact(words: list[str], entities: set[str]) -> ExtractedFact | None:
    lowered = [w.lower().replace("’", "'") for w in words]
    # find the first entity mention (longest match at each position)
    for start in range(len(words)):
        for end in range(len(words), start, -1):
            span = words[start:end]
            ent = canonical_entity(" ".join(span))
            if ent not in entities:
                continue
            rest = lowered[end:]
            possessive = span[-1].replace("’", "'").lower().endswith("'s")
            if possessive:
                for j, t in enumerate(rest):
                    if t in COPULAS and j > 0:
                        attr = "_".join(x for x in rest[:j] if x not in ARTICLES)
                        obj = _object(rest[j + 1:])
                        if attr and obj:
                            return ExtractedFact(ent, attr, obj)
                        break
                return None
            if not rest:
                return None
            head = rest[0]
            if head in COPULAS:
                obj = _object(rest[1:])
                return ExtractedFact(ent, "is", obj) if obj else None
            if head.isalpha() and not _is_capitalised(words[end]):
                if len(rest) > 1 and rest[1] in PREPOSITIONS:
                    pred, tail = f"{head}_{rest[1]}", rest[2:]
                else:
                    pred, tail = head, rest[1:]
                obj = _object(tail)
                return ExtractedFact(ent, pred, obj) if obj else None
            return None
    return None


def extract_facts(content: str, entities: Iterable[str],
                  embed: Callable[[str], np.ndarray] | None = None) -> list[ExtractedFact]:
    """
    Subject-verb-object triples anchored on a recognised entity, one per
    clause: "X's attr is V", "X is V" and "X verb [prep] V". When `embed` is
    given each fact's object text is embedded on its own.
    """
    ents = set(entities)
    if not ents:
        return []
    facts: list[ExtractedFact] = []
    seen = set()
    for sentence in _sentences(content):
        for clause in _CLAUSE_RE.split(sentence):
            words = [w for w, _ in _words_with_gaps(clause)]
            if not words:
                continue
            fact = _clause_fact(words, ents)
            if fact is None or fact in seen:
                continue
            seen.add(fact)
            if embed is not None:
                fact = ExtractedFact(fact.subject, fact.predicate, fact.object_text,
                                     np.asarray(embed(fact.object_text.replace("_", " ")), dtype=np.float64))
            facts.append(fact)
    return facts


# ---------------------------------------------------------------------------
# Entropy gate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GateResult:
    passed: bool
    entropy_bits: float
    token_count: int
    reason: str | None = None


def token_entropy(tokens: list[str]) -> float:
    if not tokens:
        return 0.0
    counts = np.fromiter(Counter(tokens).values(), dtype=np.float64)
    return float(entropy(counts, base=2))


def entropy_gate(content: str, threshold_bits: float = 1.5, min_tokens: int = 3) -> GateResult:
    tokens = tokenize(content)
    h = token_entropy(tokens)
    if len(tokens) < min_tokens:
        return GateResult(False, h, len(tokens), f"{len(tokens)} tokens < {min_tokens}")
    if h < threshold_bits:
        return GateResult(False, h, len(tokens), f"entropy {h:.3f} bits < {threshold_bits}")
    return GateResult(True, h, len(tokens))


# ---------------------------------------------------------------------------
# Dates
# ---------------------------------------------------------------------------

_MONTH = r"(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)"
_ABSOLUTE_DATE_RES = (
    re.compile(r"\b\d{4}-\d{1,2}-\d{1,2}(?:[ T]\d{1,2}:\d{2}(?::\d{2})?)?\b"),
    re.compile(r"\b\d{1,2}/\d{1,2}/\d{4}\b"),
    re.compile(rf"\b{_MONTH}\.?\s+\d{{1,2}}(?:st|nd|rd|th)?(?:,?\s+\d{{4}})?\b", re.IGNORECASE),
    re.compile(rf"\b\d{{1,2}}(?:st|nd|rd|th)?\s+(?:of\s+)?{_MONTH}(?:,?\s+\d{{4}})?\b", re.IGNORECASE),
    re.compile(rf"\b{_MONTH}\s+\d{{4}}\b", re.IGNORECASE),
)
_YEAR_RE = re.compile(r"\b(?:in|during|since|until|by)\s+((?:19|20)\d{2})\b", re.IGNORECASE)
_AGO_RE = re.compile(r"\b(\d+|a|an|one|two|three|four|five|six|seven|eight|nine|ten)\s+(day|week|month|year)s?\s+ago\b",
                     re.IGNORECASE)
_LAST_NEXT_RE = re.compile(r"\b(last|next)\s+(week|month|year)\b", re.IGNORECASE)
_DAY_WORD_RE = re.compile(r"\b(yesterday|today|tomorrow|tonight)\b", re.IGNORECASE)
_TEMPORAL_CUE_RE = re.compile(r"\b(when|before|after|since|until|recently|lately|earlier)\b", re.IGNORECASE)

_NUMBER_WORDS = {"a": 1, "an": 1, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
                 "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10}


def _utc(ts: float) -> datetime:
    return datetime.fromtimestamp(ts, tz=timezone.utc)


def find_date(text: str, now: float | None = None) -> float | None:
    """
    Epoch seconds of the first explicit or relative date expression in `text`,
    None when there is none. Relative expressions ("3 days ago", "last week",
    "yesterday") resolve against `now`; without `now` they are ignored.
    Dates lacking a year take the year of `now` (or 2000).
    """
    ref = _utc(now) if now is not None else None
    default = datetime(ref.year if ref else 2000, 1, 1, tzinfo=timezone.utc)
    for pattern in _ABSOLUTE_DATE_RES:
        m = pattern.search(text)
        if m:
            try:
                dt = date_parser.parse(m.group(0), default=default, dayfirst=False)
            except (ValueError, OverflowError):
                continue
            if dt.tzinfo is None:
                dt = dt.replace(tzinfo=timezone.utc)
            return dt.timestamp()
    m = _YEAR_RE.search(text)
    if m:
        return datetime(int(m.group(1)), 1, 1, tzinfo=timezone.utc).timestamp()
    if ref is None:
        return None
    m = _AGO_RE.search(text)
    if m:
        raw = m.group(1).lower()
        n = int(raw) if raw.isdigit() else _NUMBER_WORDS[raw]
        return (ref - relativedelta(**{m.group(2).lower() + "s": n})).timestamp()
    m = _LAST_NEXT_RE.search(text)
    if m:
        sign = -1 if m.group(1).lower() == "last" else 1
        return (ref + relativedelta(**{m.group(2).lower() + "s": sign})).timestamp()
    m = _DAY_WORD_RE.search(text)
    if m:
        shift = {"yesterday": -1, "tomorrow": 1}.get(m.group(1).lower(), 0)
        return (ref + relativedelta(days=shift)).timestamp()
    return None


def has_temporal_cue(text: str) -> bool:
    return bool(_TEMPORAL_CUE_RE.search(text) or _DAY_WORD_RE.search(text) or _AGO_RE.search(text)
                or _LAST_NEXT_RE.search(text) or _YEAR_RE.search(text)
                or any(p.search(text) for p in _ABSOLUTE_DATE_RES))
