"""Run the labeling pipeline for one session, or a whole ablation grid.

Per run directory ``<workdir>/<config_id>/``:

* ``config.json``             the configuration that produced the run
* ``<session_id>.ckpt``       append-only JSON lines, one per finished second
* ``<session_id>.labels.csv`` final ``second_index,label,provenance`` table
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import threading
from concurrent.futures import CancelledError, ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .backend import BackendError, VlmClient
from .core import (
    AnnotationVector,
    BehaviorLabel,
    GoldAnnotations,
    InputMode,
    PipelineConfig,
    PromptStyle,
    SegmentManifest,
    validate_manifest,
)
from .evaluator import ConfusionMatrix, ReportEntry, confusion_matrix, per_class_f1, render_report
from .labelparser import parse_label_vector
from .promptkit import ExampleStore, WholeVideoTarget, assemble_request, build_prompt, select_icl_examples

log = logging.getLogger(__name__)

LABELS_HEADER = ("second_index", "label", "provenance")


class BackendUnavailable(RuntimeError):
    pass


@dataclass
class RunState:
    session_id: str
    config_id: str
    total_seconds: int
    checkpoint_path: Path
    labels: dict[int, BehaviorLabel] = field(default_factory=dict)
    provenance: dict[int, str] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def completed(self) -> set[int]:
        return set(self.labels)

    @classmethod
    def load(cls, path: Path, session_id: str, config_id: str, total_seconds: int) -> "RunState":
        state = cls(session_id, config_id, total_seconds, path)
        if not path.exists():
            return state
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                try:
                    rec = json.loads(line)
                    second = int(rec["second_index"])
                    label = BehaviorLabel(rec["label"])
                    prov = rec.get("provenance", "fresh")
                except (ValueError, KeyError, TypeError):
                    # A torn final line from an interrupted write; that second is redone.
                    log.warning("%s:%d: skipping unreadable checkpoint record", path, lineno)
                    continue
                if 0 <= second < total_seconds:
                    state.labels[second] = label
                    state.provenance[second] = prov
        return state

    def record(self, second: int, label: BehaviorLabel, digest: str, provenance: str, repairs: Iterable = ()) -> None:
        line = json.dumps({
            "second_index": second,
            "label": label.value,
            "request_digest": digest,
            "provenance": provenance,
            "repairs": [str(r) for r in repairs],
        })
        with self._lock:
            with open(self.checkpoint_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
            self.labels[second] = label
            self.provenance[second] = provenance


def run_dir(workdir: str | Path, config: PipelineConfig) -> Path:
    return Path(workdir) / config.config_id


def _write_config(path: Path, config: PipelineConfig) -> None:
    data = dict(config.to_dict(), config_id=config.config_id)
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    if not path.exists() or path.read_text(encoding="utf-8") != text:
        path.write_text(text, encoding="utf-8")


def write_labels_csv(path: Path, vector: AnnotationVector) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABELS_HEADER)
        for i, (label, prov) in enumerate(zip(vector.labels, vector.provenance)):
            writer.writerow([i, label.value, prov])


def read_labels_csv(path: str | Path, session_id: str = "", config_id: str = "") -> AnnotationVector:
    labels, provenance = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != LABELS_HEADER:
            raise ValueError(f"{path}: expected header {','.join(LABELS_HEADER)}")
        for expected, row in enumerate(reader):
            if int(row[0]) != expected:
                raise ValueError(f"{path}: expected second {expected}, found {row[0]}")
            labels.append(BehaviorLabel(row[1]))
            provenance.append(row[2])
    return AnnotationVector(session_id, config_id, tuple(labels), tuple(provenance))


def run_session(
    config: PipelineConfig,
    manifest: SegmentManifest,
    store: ExampleStore,
    client: VlmClient,
    workdir: str | Path,
    templates: Mapping[PromptStyle, str] | None = None,
) -> AnnotationVector:
    """Label every second of ``manifest``; resumes from an existing checkpoint.

    Segment modes issue one request per missing second; WholeVideo issues a
    single request covering the session. Labels are placed by second index,
    so completion order never matters.
    """
    check = validate_manifest(manifest)
    if not check.ok:
        raise ValueError(f"invalid manifest for {manifest.session_id!r}: {'; '.join(check.violations)}")
    icl = select_icl_examples(store, config.icl_count) if config.icl_enabled else []
    store.check_held_out([manifest.session_id])
    template = (templates or {}).get(config.prompt_style)

    out = run_dir(workdir, config)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out / "config.json", config)
    total = manifest.total_seconds
    state = RunState.load(out / f"{manifest.session_id}.ckpt", manifest.session_id, config.config_id, total)
    pending = [i for i in range(total) if i not in state.labels]
    log.info("%s/%s: %d of %d seconds pending", config.config_id, manifest.session_id, len(pending), total)

    def _finish(request, response, seconds: Sequence[int]) -> None:
        outcome = parse_label_vector(response.raw_text, request.expected_label_count)
        if not outcome.clean:
            log.debug("%s second(s) %s: repairs %s", manifest.session_id, seconds[:3],
                      [str(r) for r in outcome.repairs])
        prov = "cached" if response.from_cache else "fresh"
        for second, label in zip(seconds, outcome.labels):
            if second not in state.labels:
                state.record(second, label, request.request_digest, prov, outcome.repairs)

    if pending and config.input_mode is InputMode.WHOLE_VIDEO:
        prompt = build_prompt(config.prompt_style, total, with_examples=bool(icl), template=template)
        request = assemble_request(prompt, icl, WholeVideoTarget.from_manifest(manifest), config.input_mode,
                                   config.decoding, client.model_id)
        try:
            response = client.send(request)
        except BackendError as exc:
            raise BackendUnavailable(f"{manifest.session_id}: {exc}") from exc
        _finish(request, response, list(range(total)))
    elif pending:
        prompt = build_prompt(config.prompt_style, 1, with_examples=bool(icl), template=template)

        def job(second: int) -> None:
            request = assemble_request(prompt, icl, manifest.segments[second], config.input_mode,
                                       config.decoding, client.model_id)
            _finish(request, client.send(request), [second])

        _run_pool(job, pending, config.concurrency_limit, manifest.session_id)

    vector = AnnotationVector(
        manifest.session_id,
        config.config_id,
        tuple(state.labels[i] for i in range(total)),
        tuple(state.provenance[i] for i in range(total)),
    )
    write_labels_csv(out / f"{manifest.session_id}.labels.csv", vector)
    return vector


def _run_pool(job, items: Sequence[int], workers: int, session_id: str) -> None:
    """Run ``job`` over ``items``; on the first failure stop queueing, drain, re-raise."""
    error: BaseException | None = None
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(job, item) for item in items]
        for fut in as_completed(futures):
            try:
                fut.result()
            except CancelledError:
                continue
            except BaseException as exc:  # noqa: BLE001 - re-raised below
                if error is None:
                    error = exc
                    for f in futures:
                        f.cancel()
    if isinstance(error, BackendError):
        raise BackendUnavailable(f"{session_id}: {error}") from error
    if error is not None:
        raise error


# --- ablation -----------------------------------------------------------------


def default_grid(base: PipelineConfig = PipelineConfig()) -> list[PipelineConfig]:
    """Prompt style x ICL x input mode (whole video vs. per-second frames): 8 configs."""
    return [
        replace(base, prompt_style=style, icl_enabled=icl, input_mode=mode)
        for style, icl, mode in itertools.product(
            (PromptStyle.SIMPLE, PromptStyle.COMPLEX),
            (False, True),
            (InputMode.WHOLE_VIDEO, InputMode.SEGMENT_FRAMES),
        )
    ]


def load_grid(path: str | Path, base: PipelineConfig = PipelineConfig()) -> list[PipelineConfig]:
    """A JSON list of partial configs, each overlaid on ``base``."""
    items = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(items, list) or not items:
        raise ValueError(f"{path}: grid must be a nonempty JSON list")
    return [PipelineConfig.from_dict({**base.to_dict(), **item}) for item in items]


@dataclass(frozen=True)
class Session:
    manifest: SegmentManifest
    gold: GoldAnnotations

    def __post_init__(self) -> None:
        if self.manifest.session_id != self.gold.session_id:
            raise ValueError("manifest and gold belong to different sessions")
        if self.manifest.total_seconds != len(self.gold.labels):
            raise ValueError(
                f"session {self.gold.session_id!r}: {self.manifest.total_seconds} segments "
                f"but {len(self.gold.labels)} gold labels"
            )


@dataclass(frozen=True)
class AblationReport:
    entries: tuple[ReportEntry, ...]
    vectors: Mapping[tuple[str, str], AnnotationVector] = field(repr=False, default_factory=dict)

    def f1(self, config_id: str, label: BehaviorLabel) -> float:
        for e in self.entries:
            if e.report.config_id == config_id:
                return e.report.per_class[label].f1
        raise KeyError(config_id)


def run_ablation(
    grid: Sequence[PipelineConfig],
    sessions: Sequence[Session],
    store: ExampleStore,
    client: VlmClient,
    workdir: str | Path,
    report_dir: str | Path | None = None,
    templates: Mapping[PromptStyle, str] | None = None,
) -> AblationReport:
    """Run every config over every session and score each config on the pooled seconds."""
    if not grid:
        raise ValueError("empty grid")
    if not sessions:
        raise ValueError("no sessions to annotate")
    store.check_held_out(s.manifest.session_id for s in sessions)
    entries = []
    vectors = {}
    for config in grid:
        cm = ConfusionMatrix.empty()
        for s in sessions:
            vector = run_session(config, s.manifest, store, client, workdir, templates)
            vectors[config.config_id, s.manifest.session_id] = vector
            cm = cm + confusion_matrix(vector, s.gold)
        report = per_class_f1(cm, config.config_id, config.to_dict())
        entries.append(ReportEntry(report, cm))
        log.info("%s: F1 %s", config.config_id,
                 {c.value: round(sc.f1, 3) for c, sc in report.per_class.items()})
    result = AblationReport(tuple(entries), vectors)
    if report_dir is not None:
        render_report(result.entries, report_dir)
    return result


def evaluate_run_dir(path: str | Path, golds: Mapping[str, GoldAnnotations]) -> ReportEntry:
    """Score a finished run directory from its label CSVs."""
    path = Path(path)
    config = json.loads((path / "config.json").read_text(encoding="utf-8"))
    config_id = config.pop("config_id", path.name)
    cm = ConfusionMatrix.empty()
    found = 0
    for labels_file in sorted(path.glob("*.labels.csv")):
        session = labels_file.name[: -len(".labels.csv")]
        if session not in golds:
            log.warning("no gold labels for session %r; skipped", session)
            continue
        cm = cm + confusion_matrix(read_labels_csv(labels_file, session, config_id), golds[session])
        found += 1
    if not found:
        raise ValueError(f"{path}: no label files matching the gold sessions")
    return ReportEntry(per_class_f1(cm, config_id, config), cm)
