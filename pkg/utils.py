"""
Shared Utilities for the Scene Graph Forge
Error types, atomic file output, stable hashing and nearest-rank percentiles
"""

import hashlib
import json
import logging
import math
import os
import tempfile
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import config

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]


class SceneGraphError(Exception):
    """Base class for every error raised by this package"""

    exit_code = 3


class UsageError(SceneGraphError):
    """Bad command-line usage"""

    exit_code = 1


class DataError(SceneGraphError):
    """Input data or a requested operation fails validation"""

    exit_code = 2


class InvariantError(SceneGraphError):
    """An internal invariant does not hold"""

    exit_code = 3


class ParseError(DataError):
    """Malformed input file; `line` is 1-based when known"""

    def __init__(self, message: str, path: Optional[PathLike] = None, line: Optional[int] = None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if self.path is not None:
            where = self.path
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


def atomic_write(path: PathLike, text: str) -> Path:
    """
    Write text to path through a temporary file and rename

    Args:
        path: Destination file
        text: Full file contents (written with LF line endings)

    Returns:
        Destination path
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return target


def dumps_line(obj: Any) -> str:
    """Compact JSON for one JSONL record; key order is the caller's insertion order"""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def stable_hash(*parts: str, digest_size: int = 16) -> str:
    """Lowercase hex BLAKE2b digest over length-prefixed parts"""
    h = hashlib.blake2b(digest_size=digest_size)
    for part in parts:
        data = part.encode("utf-8")
        h.update(len(data).to_bytes(8, "big"))
        h.update(data)
    return h.hexdigest()


def ordinal_word(n: int) -> str:
    """
    Ordinal for a 1-based position

    Args:
        n: Position, n >= 1

    Returns:
        "first" .. "twentieth", then numeric forms such as "21st"
    """
    if n < 1:
        raise ValueError(f"ordinal position must be positive, got {n}")
    if n <= len(config.ORDINAL_WORDS):
        return config.ORDINAL_WORDS[n - 1]
    if 10 <= n % 100 <= 20:
        suffix = "th"
    else:
        suffix = {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"


def _as_fraction(value: float) -> Fraction:
    # repr gives the shortest decimal, so 0.1 stays 1/10
    return Fraction(repr(float(value))) if not isinstance(value, int) else Fraction(value)


def nearest_rank(n: int, percentile: float) -> int:
    """
    1-based nearest rank for a percentile of n sorted values

    Args:
        n: Number of values (n >= 1)
        percentile: Percentile in [0, 100]

    Returns:
        ceil(percentile / 100 * n), clamped to [1, n]
    """
    if n < 1:
        raise ValueError("nearest rank needs at least one value")
    if not 0 <= percentile <= 100:
        raise ValueError(f"percentile out of range: {percentile}")
    rank = math.ceil(_as_fraction(percentile) * n / 100)
    return min(max(rank, 1), n)


def nearest_rank_value(sorted_values: Sequence[float], percentile: float) -> float:
    """Value at the nearest-rank percentile of an ascending sequence"""
    return sorted_values[nearest_rank(len(sorted_values), percentile) - 1]


def floor_fraction(n: int, fraction: float) -> int:
    """floor(fraction * n) computed exactly"""
    return math.floor(_as_fraction(fraction) * n)


class ProgressLogger:
    """Logs one line per configured share of a known amount of work"""

    def __init__(self, total: int, label: str, log: logging.Logger = logger):
        self.total = total
        self.label = label
        self.log = log
        self._next_step = 1

    def update(self, done: int):
        if self.total <= 0:
            return
        while self._next_step <= config.PROGRESS_STEPS and \
                done * config.PROGRESS_STEPS >= self._next_step * self.total:
            pct = self._next_step * 100 // config.PROGRESS_STEPS
            self.log.info(f"{self.label}: {pct}% ({done}/{self.total})")
            self._next_step += 1
