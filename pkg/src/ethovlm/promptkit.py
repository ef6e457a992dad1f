"""Prompt texts, in-context example selection and request assembly."""

from __future__ import annotations

import csv
import mimetypes
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .backend import ImagePart, ModelRequest, Part, TextPart, VideoPart
from .core import (
    GOLD_CLASSES,
    VOCABULARY,
    BehaviorLabel,
    Decoding,
    IclExample,
    InputMode,
    PromptStyle,
    SegmentManifest,
    SegmentRef,
)

SIMPLE_OUTPUT_RULE = "Only output the vector!"
COMPLEX_OUTPUT_RULE = "Output only the list."
ICL_INSTRUCTION = "Given the following examples, label the last video to the best of your ability."
EXAMPLES_HEADER = "Examples:"
ANSWER_CUE = "-> [ ]"

# Fixed presentation order of one example round.
EXAMPLE_ORDER = (BehaviorLabel.EXPLORING_GROOMING, BehaviorLabel.FREEZING, BehaviorLabel.FLEEING)


class InsufficientExamples(ValueError):
    def __init__(self, label: BehaviorLabel, have: int, need: int):
        super().__init__(f"need {need} {label.value} example(s), store has {have}")
        self.label = label


class HeldOutViolation(ValueError):
    pass


class ModeMismatch(ValueError):
    pass


def load_template(style: PromptStyle | str) -> str:
    name = "simple.txt" if PromptStyle(style) is PromptStyle.SIMPLE else "complex.txt"
    return resources.files("ethovlm").joinpath("templates", name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptText:
    style: PromptStyle
    rendered_text: str
    label_vocabulary: tuple[str, ...]


def _example_vector(n: int, symbol: str) -> str:
    if n <= 3:
        return "[" + ", ".join(f"{symbol}{i}" for i in range(1, n + 1)) + "]"
    return f"[{symbol}1, {symbol}2, ..., {symbol}{n}]"


def _render(template: str, n: int, vocabulary: Sequence[str], example_vector: str) -> str:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return (
        template.replace("{n}", str(n))
        .replace("{example_vector}", example_vector)
        .replace("{vocabulary}", ", ".join(vocabulary))
        .rstrip("\n")
    )


def build_simple_prompt(
    n: int,
    vocabulary: Sequence[str] = VOCABULARY,
    with_examples: bool = False,
    template: str | None = None,
) -> PromptText:
    text = _render(template or load_template(PromptStyle.SIMPLE), n, vocabulary, _example_vector(n, "behavior_"))
    if with_examples:
        text += f" {ICL_INSTRUCTION}\n\n{EXAMPLES_HEADER}"
    return PromptText(PromptStyle.SIMPLE, text, tuple(vocabulary))


def build_complex_prompt(
    n: int,
    vocabulary: Sequence[str] = VOCABULARY,
    with_examples: bool = False,
    template: str | None = None,
) -> PromptText:
    text = _render(template or load_template(PromptStyle.COMPLEX), n, vocabulary, _example_vector(n, "l"))
    if with_examples:
        text += f"\n\n{EXAMPLES_HEADER}"
    return PromptText(PromptStyle.COMPLEX, text, tuple(vocabulary))


def build_prompt(style: PromptStyle, n: int, with_examples: bool = False, template: str | None = None) -> PromptText:
    if PromptStyle(style) is PromptStyle.SIMPLE:
        return build_simple_prompt(n, with_examples=with_examples, template=template)
    return build_complex_prompt(n, with_examples=with_examples, template=template)


def _sort_key(ex: IclExample) -> tuple[str, str]:
    return (ex.source_session, str(ex.frames[0]))


@dataclass(frozen=True)
class ExampleStore:
    examples: tuple[IclExample, ...] = ()

    def by_label(self, label: BehaviorLabel) -> list[IclExample]:
        return sorted((e for e in self.examples if e.label is label), key=_sort_key)

    @property
    def sessions(self) -> set[str]:
        return {e.source_session for e in self.examples}

    def check_held_out(self, session_ids: Iterable[str]) -> None:
        clash = self.sessions.intersection(session_ids)
        if clash:
            raise HeldOutViolation(f"ICL examples drawn from annotated session(s): {sorted(clash)}")

    @classmethod
    def from_labeled_seconds(
        cls,
        manifests: Mapping[str, SegmentManifest],
        rows: Iterable[tuple[str, int, BehaviorLabel]],
    ) -> "ExampleStore":
        examples = []
        for session, second, label in rows:
            manifest = manifests.get(session)
            if manifest is None:
                raise ValueError(f"example session {session!r} has no frames")
            if not 0 <= second < manifest.total_seconds:
                raise ValueError(f"example second {second} outside session {session!r}")
            examples.append(IclExample(manifest.segments[second].frame_ids, label, session))
        return cls(tuple(examples))


def read_examples_csv(path: str | Path) -> list[tuple[str, int, BehaviorLabel]]:
    """Rows of ``session_id,second_index,label``; unlike gold files, seconds may be sparse."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["session_id", "second_index", "label"]:
            raise ValueError(f"{path}: expected header session_id,second_index,label")
        for row in reader:
            label = BehaviorLabel.from_canonical(row["label"])
            if label is BehaviorLabel.UNKNOWN:
                raise ValueError(f"{path}: example labelled Unknown")
            out.append((row["session_id"], int(row["second_index"]), label))
    return out


def select_icl_examples(store: ExampleStore, icl_count: int) -> list[IclExample]:
    """``icl_count / 3`` examples per class, interleaved in the fixed class order."""
    if icl_count < 0 or icl_count % len(GOLD_CLASSES):
        raise ValueError(f"icl_count must be a nonnegative multiple of {len(GOLD_CLASSES)}, got {icl_count}")
    per_class = icl_count // len(GOLD_CLASSES)
    if per_class == 0:
        return []
    pools = {}
    for label in EXAMPLE_ORDER:
        pool = store.by_label(label)
        if len(pool) < per_class:
            raise InsufficientExamples(label, len(pool), per_class)
        pools[label] = pool
    return [pools[label][r] for r in range(per_class) for label in EXAMPLE_ORDER]


@dataclass(frozen=True)
class WholeVideoTarget:
    session_id: str
    total_seconds: int
    source: Path | None = None
    frames: tuple[Path, ...] = ()

    @classmethod
    def from_manifest(cls, manifest: SegmentManifest) -> "WholeVideoTarget":
        return cls(manifest.session_id, manifest.total_seconds, manifest.source_video, manifest.all_frames)


def _mime(path: Path) -> str:
    return mimetypes.guess_type(path.name)[0] or "image/jpeg"


def _images(frames: Sequence[Path]) -> list[Part]:
    return [ImagePart(Path(f).read_bytes(), _mime(Path(f))) for f in frames]


def _frames_clip(frames: Sequence[Path]) -> VideoPart:
    return VideoPart(frames=tuple(Path(f).read_bytes() for f in frames), frame_mime=_mime(Path(frames[0])))


def media_parts(frames: Sequence[Path], input_mode: InputMode) -> list[Part]:
    """One image per frame in frame mode; otherwise a single clip made of the frames."""
    if InputMode(input_mode) is InputMode.SEGMENT_FRAMES:
        return _images(frames)
    return [_frames_clip(frames)]


def assemble_request(
    prompt: PromptText,
    icl: Sequence[IclExample],
    target: SegmentRef | WholeVideoTarget,
    input_mode: InputMode,
    decoding: Decoding = Decoding(),
    model_id: str = "",
) -> ModelRequest:
    """Order: task text, then (media, label text) per example, target media, answer cue."""
    mode = InputMode(input_mode)
    if mode.per_segment != isinstance(target, SegmentRef):
        raise ModeMismatch(f"{mode.value} cannot take a {type(target).__name__} target")
    if any(ex.source_session == target.session_id for ex in icl):
        raise HeldOutViolation(f"ICL example taken from target session {target.session_id!r}")

    parts: list[Part] = [TextPart(prompt.rendered_text)]
    for i, ex in enumerate(icl, start=1):
        parts.extend(media_parts(ex.frames, mode))
        parts.append(TextPart(f"Example {i} -> [{ex.label.value}]"))

    if isinstance(target, SegmentRef):
        parts.extend(media_parts(target.frame_ids, mode))
        n = 1
        routing = (target.session_id, target.second_index)
    else:
        if target.source is not None:
            parts.append(VideoPart(ref=str(target.source)))
        elif target.frames:
            parts.append(_frames_clip(target.frames))
        else:
            raise ModeMismatch(f"whole-video target {target.session_id!r} has neither a file nor frames")
        n = target.total_seconds
        routing = (target.session_id, None)
    parts.append(TextPart(ANSWER_CUE))
    return ModelRequest(tuple(parts), decoding, n, model_id=model_id, target=routing)
