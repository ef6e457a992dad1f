"""Shared domain types for per-second behavior annotation."""

from __future__ import annotations

import csv
import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping


class BehaviorLabel(enum.Enum):
    FREEZING = "Freezing"
    FLEEING = "Fleeing"
    EXPLORING_GROOMING = "Exploring/Grooming"
    UNKNOWN = "Unknown"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def from_canonical(cls, text: str) -> "BehaviorLabel":
        """Strict inverse of ``str(label)``; raises ValueError on anything else."""
        return cls(text)


# Classes that appear in gold data, in presentation order.
GOLD_CLASSES: tuple[BehaviorLabel, ...] = (
    BehaviorLabel.FREEZING,
    BehaviorLabel.FLEEING,
    BehaviorLabel.EXPLORING_GROOMING,
)
VOCABULARY: tuple[str, ...] = tuple(label.value for label in GOLD_CLASSES)


class PromptStyle(str, enum.Enum):
    SIMPLE = "Simple"
    COMPLEX = "Complex"


class InputMode(str, enum.Enum):
    WHOLE_VIDEO = "WholeVideo"
    SEGMENT_VIDEO = "SegmentVideo"
    SEGMENT_FRAMES = "SegmentFrames"

    @property
    def per_segment(self) -> bool:
        return self is not InputMode.WHOLE_VIDEO


@dataclass(frozen=True)
class VideoMeta:
    source_path: Path
    duration_s: float
    native_fps: float
    frame_count: int

    def __post_init__(self) -> None:
        if self.duration_s < 0:
            raise ValueError(f"negative duration: {self.duration_s}")
        if self.native_fps <= 0:
            raise ValueError(f"native_fps must be positive, got {self.native_fps}")
        if self.frame_count < 0:
            raise ValueError(f"negative frame_count: {self.frame_count}")
        # One second of slack for container rounding.
        if abs(self.frame_count - self.duration_s * self.native_fps) > self.native_fps:
            raise ValueError(
                f"frame_count {self.frame_count} inconsistent with "
                f"{self.duration_s} s at {self.native_fps} fps"
            )


@dataclass(frozen=True)
class SegmentRef:
    session_id: str
    second_index: int
    frame_ids: tuple[Path, ...]

    @property
    def time_span(self) -> tuple[int, int]:
        return (self.second_index, self.second_index + 1)


@dataclass(frozen=True)
class SegmentManifest:
    session_id: str
    fps_used: int
    segments: tuple[SegmentRef, ...]
    # Original video file, when known. Not part of the directory layout, so
    # excluded from equality.
    source_video: Path | None = field(default=None, compare=False)

    @property
    def total_seconds(self) -> int:
        return len(self.segments)

    @property
    def all_frames(self) -> tuple[Path, ...]:
        return tuple(f for seg in self.segments for f in seg.frame_ids)


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_manifest(manifest: SegmentManifest) -> ValidationResult:
    """Check the manifest invariants. Violations are returned, never raised."""
    problems: list[str] = []
    if manifest.fps_used <= 0:
        problems.append(f"fps_used must be positive, got {manifest.fps_used}")
    seen: set[int] = set()
    for pos, seg in enumerate(manifest.segments):
        if seg.session_id != manifest.session_id:
            problems.append(
                f"segment {seg.second_index}: session {seg.session_id!r} != {manifest.session_id!r}"
            )
        if seg.second_index in seen:
            problems.append(f"duplicate second {seg.second_index}")
        seen.add(seg.second_index)
        if not seg.frame_ids:
            problems.append(f"segment {seg.second_index}: no frames")
        if pos > 0 and seg.second_index < manifest.segments[pos - 1].second_index:
            problems.append(f"segment {seg.second_index}: out of order")
    total = manifest.total_seconds
    for i in range(total):
        if i not in seen:
            problems.append(f"missing second {i}")
    for i in sorted(seen):
        if i < 0 or i >= total:
            problems.append(f"second {i} outside 0..{total - 1}")
    return ValidationResult(tuple(problems))


@dataclass(frozen=True)
class IclExample:
    frames: tuple[Path, ...]
    label: BehaviorLabel
    source_session: str

    def __post_init__(self) -> None:
        if self.label is BehaviorLabel.UNKNOWN:
            raise ValueError("ICL examples need a real label, not Unknown")
        if not self.frames:
            raise ValueError("ICL example without frames")


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.0
    # None selects 64 for single-second requests and 16 per label otherwise.
    max_output_tokens: int | None = None

    def tokens_for(self, n_labels: int) -> int:
        if self.max_output_tokens is not None:
            return self.max_output_tokens
        return 64 if n_labels == 1 else 16 * n_labels


@dataclass(frozen=True)
class PipelineConfig:
    prompt_style: PromptStyle = PromptStyle.COMPLEX
    icl_enabled: bool = True
    input_mode: InputMode = InputMode.SEGMENT_FRAMES
    fps_target: int = 5
    icl_count: int = 3
    decoding: Decoding = Decoding()
    concurrency_limit: int = 4
    backend_endpoint: str = ""
    cache_dir: str = ".ethovlm-cache"

    def __post_init__(self) -> None:
        # Accept plain strings for the enum fields (config files, CLI).
        object.__setattr__(self, "prompt_style", PromptStyle(self.prompt_style))
        object.__setattr__(self, "input_mode", InputMode(self.input_mode))
        if isinstance(self.decoding, Mapping):
            object.__setattr__(self, "decoding", Decoding(**self.decoding))
        if self.fps_target <= 0:
            raise ValueError("fps_target must be positive")
        if self.icl_count < 0:
            raise ValueError("icl_count must be nonnegative")
        if self.concurrency_limit <= 0:
            raise ValueError("concurrency_limit must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prompt_style"] = self.prompt_style.value
        d["input_mode"] = self.input_mode.value
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "PipelineConfig":
        data = dict(data)
        data.pop("config_id", None)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @property
    def config_id(self) -> str:
        return config_digest(self)


def config_digest(config: PipelineConfig) -> str:
    """Stable, field-order independent digest of every config field."""
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class AnnotationVector:
    session_id: str
    config_id: str
    labels: tuple[BehaviorLabel, ...]
    provenance: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.provenance):
            raise ValueError("labels and provenance differ in length")
        bad = set(self.provenance) - {"fresh", "cached"}
        if bad:
            raise ValueError(f"bad provenance flags: {sorted(bad)}")


@dataclass(frozen=True)
class GoldAnnotations:
    session_id: str
    labels: tuple[BehaviorLabel, ...]

    def __post_init__(self) -> None:
        if BehaviorLabel.UNKNOWN in self.labels:
            raise ValueError(f"gold labels for {self.session_id!r} contain Unknown")


GOLD_HEADER = ("session_id", "second_index", "label")


def read_gold_csv(path: str | Path) -> dict[str, GoldAnnotations]:
    """Read a ``session_id,second_index,label`` file into one entry per session.

    Rows may come in any order; each session must cover 0..n-1 without gaps.
    """
    rows: dict[str, dict[int, BehaviorLabel]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != GOLD_HEADER:
            raise ValueError(f"{path}: expected header {','.join(GOLD_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            session, idx, label = row
            try:
                second = int(idx)
                value = BehaviorLabel.from_canonical(label)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            per_session = rows.setdefault(session, {})
            if second in per_session:
                raise ValueError(f"{path}:{lineno}: duplicate second {second} for {session!r}")
            per_session[second] = value
    out: dict[str, GoldAnnotations] = {}
    for session, by_second in rows.items():
        missing = sorted(set(range(len(by_second))) - set(by_second))
        if missing:
            raise ValueError(f"{path}: session {session!r} is missing second {missing[0]}")
        out[session] = GoldAnnotations(session, tuple(by_second[i] for i in range(len(by_second))))
    return out


def write_gold_csv(path: str | Path, golds: Iterable[GoldAnnotations]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GOLD_HEADER)
        for gold in golds:
            for i, label in enumerate(gold.labels):
                writer.writerow([gold.session_id, i, label.value])
