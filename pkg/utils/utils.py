# utils.py

import logging
import re
import time
from datetime import datetime, timezone

from dateutil import parser as date_parser

log = logging.getLogger("geomem.utils")

SECONDS_PER_DAY = 86_400.0

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(format="%(asctime)s %(levelname)s %(message)s",
                        level=getattr(logging, str(level).upper(), logging.INFO),
                        datefmt="%Y-%m-%d %H:%M:%S")


def tokenize(text: str) -> list[str]:
    """
    Lowercase, split on anything that is not a letter or digit, drop tokens
    shorter than two characters. Same tokenizer for BM25, the entropy gate,
    the hash embedder and the lexical reranker.
    """
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 2]


# ---------------------------------------------------------------------------
# Time
# ---------------------------------------------------------------------------

def to_epoch(value) -> float | None:
    """
    Accepts epoch seconds (number or numeric string), datetime, or any string
    python-dateutil can read.
    Naive datetimes are taken as UTC.
    """
    if value is None or value == "":
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, datetime):
        dt = value
    elif re.fullmatch(r"\s*-?\d+(\.\d*)?\s*", str(value)):
        return float(value)
    else:
        dt = date_parser.parse(str(value))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def to_iso(ts: float | None) -> str | None:
    if ts is None:
        return None
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def days_between(a: float, b: float) -> float:
    return abs(a - b) / SECONDS_PER_DAY


# ---------------------------------------------------------------------------
# Retry
# ---------------------------------------------------------------------------

def with_backoff(fn, *args, tries=3, base_sleep=0.8, retry_on=(Exception,), sleep=time.sleep):
    """
    Call fn(*args); on an exception in retry_on sleep base_sleep * 2**i and try
    again. The last exception propagates once tries are exhausted. Exceptions
    that carry an `attempts` attribute get it set to the number of calls made.
    """
    for i in range(tries):
        try:
            return fn(*args)
        except retry_on as e:
            if hasattr(e, "attempts"):
                e.attempts = i + 1
            if i == tries - 1:
                raise
            pause = base_sleep * (2 ** i)
            log.warning("[Retry] %s. Sleeping %.1fs (try %d/%d)", e, pause, i + 1, tries)
            sleep(pause)
