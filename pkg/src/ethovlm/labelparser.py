"""Turn raw model replies into exactly ``n`` behavior labels.

Policy: the last non-empty bracketed list wins; without brackets, known label
words are scanned in reading order. Extra labels are truncated, missing ones
padded with Unknown, and every such repair is logged in the outcome.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .core import BehaviorLabel

_EG = BehaviorLabel.EXPLORING_GROOMING

# Lower-cased surface forms. Canonical spellings are matched separately so they
# never count as synonym repairs.
SYNONYMS: dict[str, BehaviorLabel] = {
    "freezing": BehaviorLabel.FREEZING,
    "freeze": BehaviorLabel.FREEZING,
    "frozen": BehaviorLabel.FREEZING,
    "fleeing": BehaviorLabel.FLEEING,
    "flee": BehaviorLabel.FLEEING,
    "exploring/grooming": _EG,
    "grooming/exploring": _EG,
    "exploring / grooming": _EG,
    "grooming / exploring": _EG,
    "exploring": _EG,
    "grooming": _EG,
    "explore": _EG,
    "groom": _EG,
    "unknown": BehaviorLabel.UNKNOWN,
}
_CANONICAL = {label.value.lower(): label for label in BehaviorLabel}

# Longest alternatives first so "exploring/grooming" beats "exploring".
_SCAN = re.compile(
    r"(?<![a-z])("
    + "|".join(re.escape(s) for s in sorted((k for k in SYNONYMS if k != "unknown"), key=len, reverse=True))
    + r")(?![a-z])",
    re.IGNORECASE | re.ASCII,
)
_BRACKETED = re.compile(r"\[([^\[\]]*)\]")
_STRIP = " \t\r\n'\"`.;:*_"


@dataclass(frozen=True)
class Repair:
    kind: str  # "Truncated" | "PaddedUnknown" | "SynonymMapped" | "Unmapped"
    value: int | str

    def __str__(self) -> str:
        return f"{self.kind}({self.value})"


@dataclass(frozen=True)
class ParseOutcome:
    labels: tuple[BehaviorLabel, ...]
    repairs: tuple[Repair, ...] = ()

    @property
    def clean(self) -> bool:
        return not self.repairs


def _lookup(token: str) -> tuple[BehaviorLabel, bool]:
    """(label, via_synonym). Unmapped tokens give Unknown with via_synonym False."""
    key = " ".join(token.strip(_STRIP).lower().split())
    if key in _CANONICAL:
        return _CANONICAL[key], False
    if key in SYNONYMS:
        return SYNONYMS[key], True
    return BehaviorLabel.UNKNOWN, False


def normalize_label(token: str) -> BehaviorLabel:
    return _lookup(token)[0]


def canonical_format(labels: Sequence[BehaviorLabel]) -> str:
    return "[" + ", ".join(label.value for label in labels) + "]"


def _bracket_tokens(raw_text: str) -> list[str] | None:
    for body in reversed(_BRACKETED.findall(raw_text)):
        tokens = [t for t in body.split(",") if t.strip(_STRIP)]
        if tokens:
            return tokens
    return None


def parse_label_vector(raw_text: str | bytes, n: int) -> ParseOutcome:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if isinstance(raw_text, bytes):
        raw_text = raw_text.decode("utf-8", errors="replace")
    raw_text = raw_text or ""

    repairs: list[Repair] = []
    labels: list[BehaviorLabel] = []
    tokens = _bracket_tokens(raw_text)
    if tokens is not None:
        for token in tokens:
            label, via_synonym = _lookup(token)
            cleaned = token.strip(_STRIP)
            if via_synonym:
                repairs.append(Repair("SynonymMapped", cleaned))
            elif label is BehaviorLabel.UNKNOWN and cleaned.lower() != "unknown":
                repairs.append(Repair("Unmapped", cleaned))
            labels.append(label)
    else:
        for match in _SCAN.finditer(raw_text):
            label, via_synonym = _lookup(match.group(1))
            if via_synonym:
                repairs.append(Repair("SynonymMapped", match.group(1)))
            labels.append(label)

    if len(labels) > n:
        repairs.append(Repair("Truncated", len(labels) - n))
        labels = labels[:n]
    elif len(labels) < n:
        repairs.append(Repair("PaddedUnknown", n - len(labels)))
        labels.extend([BehaviorLabel.UNKNOWN] * (n - len(labels)))
    return ParseOutcome(tuple(labels), tuple(repairs))
