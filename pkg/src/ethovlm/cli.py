"""Command-line entry point: ``ethovlm <subcommand> ...``.

Exit codes: 0 success, 1 validation/usage error, 2 backend failure.
Logs go to stderr; results go to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .backend import BackendError, HttpBackend, MockBackend, MockScript, ResponseCache, VlmClient
from .core import PipelineConfig, read_gold_csv, write_gold_csv
from .evaluator import load_report, render_report
from .orchestrator import (
    BackendUnavailable,
    Session,
    default_grid,
    evaluate_run_dir,
    load_grid,
    run_ablation,
    run_session,
)
from .promptkit import ExampleStore, read_examples_csv
from .segmenter import (
    MANIFEST_NAME,
    ExtractionFailed,
    ExtractionPlan,
    ProbeFailed,
    discover_sessions,
    load_frames_dir,
    probe_video,
    segment_video,
    write_manifest,
)

log = logging.getLogger("ethovlm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON pipeline config; flags override it")
    p.add_argument("--fps", type=int, help="frames per second (fps_target)")
    p.add_argument("--concurrency", type=int, help="max in-flight requests")
    p.add_argument("--endpoint", help="chat-completions endpoint (default $VLM_ENDPOINT)")
    p.add_argument("--model", help="model id (default $VLM_MODEL_ID)")
    p.add_argument("--mock", help="offline backend: echo | noisy:<p>:<seed> | malform:<p>:<seed>")
    p.add_argument("--no-cache", action="store_true", help="bypass the response cache")
    p.add_argument("--gold", type=Path, help="gold CSV (session_id,second_index,label)")
    p.add_argument("--examples", type=Path,
                   help="held-out ICL examples CSV (default <sessions>/examples.csv when present)")
    p.add_argument("--out", type=Path, default=Path("work"), help="work directory (default ./work)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ethovlm", description="Per-second behavior labeling with a VLM endpoint")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("segment", help="split a video into one-second frame segments")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--video", type=Path)
    src.add_argument("--frames-dir", type=Path, help="validate a pre-extracted frame tree instead")
    p.add_argument("--fps", type=int, default=5)
    p.add_argument("--out", type=Path, help="frame root (required with --video)")
    p.add_argument("--session", help="session id (default: video file stem)")
    p.add_argument("--extractor", help="extractor executable (default ffmpeg)")
    p.add_argument("--max-edge", type=int, default=448)

    p = sub.add_parser("annotate", help="label sessions under one configuration")
    p.add_argument("--frames-dir", "--sessions", dest="frames_dir", type=Path, required=True)
    p.add_argument("--session", action="append", help="session id to label (repeatable; default all)")
    _add_run_flags(p)

    p = sub.add_parser("ablate", help="run a config grid and write the F1 report")
    p.add_argument("--sessions", "--frames-dir", dest="frames_dir", type=Path, required=True)
    p.add_argument("--grid", default="default", help="'default' or a JSON grid file")
    _add_run_flags(p)

    p = sub.add_parser("evaluate", help="score finished run directories against gold")
    p.add_argument("--run-dir", type=Path, action="append", required=True)
    p.add_argument("--gold", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("report", help="re-render report files from report.json")
    p.add_argument("--out", type=Path, required=True, help="directory holding report.json")

    p = sub.add_parser("mock-run", help="offline end-to-end demo on synthetic sessions")
    p.add_argument("--out", type=Path, default=Path("mock-run"))
    p.add_argument("--seconds", type=int, default=120)
    p.add_argument("--mock", default="echo")
    p.add_argument("--seed", type=int, default=0)
    return parser


# --- helpers ----------------------------------------------------------------


def _base_config(args) -> PipelineConfig:
    data = {}
    if args.config:
        data = json.loads(args.config.read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
    config = PipelineConfig.from_dict(data)
    overrides = {}
    if args.fps is not None:
        overrides["fps_target"] = args.fps
    if args.concurrency is not None:
        overrides["concurrency_limit"] = args.concurrency
    if args.endpoint:
        overrides["backend_endpoint"] = args.endpoint
    if "cache_dir" not in data:
        overrides["cache_dir"] = str(args.out / "cache")
    return replace(config, **overrides)


def _load_manifests(root: Path, fps: int, only=None) -> dict:
    if not root.is_dir():
        raise UsageError(f"no such directory: {root}")
    manifests = {}
    for sid in only or discover_sessions(root):
        fps_used = fps
        mfile = root / sid / MANIFEST_NAME
        if mfile.is_file():
            fps_used = json.loads(mfile.read_text(encoding="utf-8")).get("fps_used", fps)
        manifests[sid] = load_frames_dir(root, sid, fps_used)
    return manifests


def _example_store(args, manifests: dict) -> ExampleStore:
    path = args.examples
    if path is None:
        candidate = args.frames_dir / "examples.csv"
        path = candidate if candidate.is_file() else None
    if path is None:
        return ExampleStore()
    return ExampleStore.from_labeled_seconds(manifests, read_examples_csv(path))


def _client(args, config: PipelineConfig, golds: dict, concurrency: int) -> VlmClient:
    if args.mock:
        gold_vectors = {sid: g.labels for sid, g in golds.items()}
        backend = MockBackend(MockScript.parse(args.mock, gold_vectors))
    else:
        backend = HttpBackend.from_env(endpoint=config.backend_endpoint or None, model_id=args.model)
    cache = None if args.no_cache else ResponseCache(config.cache_dir)
    return VlmClient(backend, cache, concurrency_limit=concurrency)


def _sessions_and_store(args, golds: dict):
    manifests = _load_manifests(args.frames_dir, args.fps or 5)
    store = _example_store(args, manifests)
    held_out = store.sessions
    sessions = []
    for sid in sorted(golds):
        if sid in held_out:
            continue
        if sid not in manifests:
            raise UsageError(f"gold session {sid!r} has no frames under {args.frames_dir}")
        sessions.append(Session(manifests[sid], golds[sid]))
    return manifests, sessions, store


# --- subcommands ---------------------------------------------------------------


def cmd_segment(args) -> None:
    if args.frames_dir:
        only = [args.session] if args.session else None
        for sid, manifest in _load_manifests(args.frames_dir, args.fps, only).items():
            write_manifest(manifest, args.frames_dir)
            log.info("%s: %d seconds OK", sid, manifest.total_seconds)
        return
    if args.out is None:
        raise UsageError("--out is required with --video")
    meta = probe_video(args.video, extractor=args.extractor)
    plan = ExtractionPlan(meta, args.fps, args.out, image_max_edge_px=args.max_edge, extractor=args.extractor)
    manifest = segment_video(plan, args.session or args.video.stem)
    log.info("%s: %d seconds x %d frames -> %s", manifest.session_id, manifest.total_seconds,
             args.fps, args.out / manifest.session_id)


def cmd_annotate(args) -> None:
    config = _base_config(args)
    golds = read_gold_csv(args.gold) if args.gold else {}
    if args.mock and not golds:
        raise UsageError("--mock needs --gold to script its replies")
    manifests = _load_manifests(args.frames_dir, args.fps or config.fps_target)
    store = _example_store(args, manifests)
    targets = args.session or [s for s in manifests if s not in store.sessions]
    client = _client(args, config, golds, config.concurrency_limit)
    for sid in targets:
        if sid not in manifests:
            raise UsageError(f"unknown session {sid!r}")
        run_session(config, manifests[sid], store, client, args.out)
    log.info("labels written to %s (requests=%d, cache hits=%d)",
             args.out / config.config_id, client.network_requests, client.cache_hits)


def cmd_ablate(args) -> None:
    if not args.gold:
        raise UsageError("ablate needs --gold")
    base = _base_config(args)
    grid = default_grid(base) if args.grid == "default" else load_grid(Path(args.grid), base)
    golds = read_gold_csv(args.gold)
    _, sessions, store = _sessions_and_store(args, golds)
    client = _client(args, base, golds, max(c.concurrency_limit for c in grid))
    run_ablation(grid, sessions, store, client, args.out, report_dir=args.out / "report")
    log.info("report written to %s (requests=%d, cache hits=%d)",
             args.out / "report", client.network_requests, client.cache_hits)


def cmd_evaluate(args) -> None:
    golds = read_gold_csv(args.gold)
    entries = [evaluate_run_dir(d, golds) for d in args.run_dir]
    render_report(entries, args.out)


def cmd_report(args) -> None:
    source = args.out / "report.json"
    if not source.is_file():
        raise UsageError(f"no report.json in {args.out}")
    render_report(load_report(source), args.out)


def cmd_mock_run(args) -> None:
    from .synthetic import synthetic_gold, write_synthetic_session

    frames = args.out / "frames"
    target = synthetic_gold("session01", args.seconds, seed=args.seed)
    heldout = synthetic_gold("heldout01", 30, seed=args.seed + 1)
    for gold in (target, heldout):
        write_synthetic_session(frames, gold.session_id, len(gold.labels))
    write_gold_csv(args.out / "gold.csv", [target, heldout])
    # All held-out seconds are candidate examples; gold for target only.
    with open(frames / "examples.csv", "w", encoding="utf-8") as fh:
        fh.write("session_id,second_index,label\n")
        for i, label in enumerate(heldout.labels):
            fh.write(f"{heldout.session_id},{i},{label.value}\n")
    ns = build_parser().parse_args([
        "ablate", "--sessions", str(frames), "--gold", str(args.out / "gold.csv"),
        "--mock", args.mock, "--out", str(args.out / "work"),
    ])
    cmd_ablate(ns)


COMMANDS = {
    "segment": cmd_segment,
    "annotate": cmd_annotate,
    "ablate": cmd_ablate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "mock-run": cmd_mock_run,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose or os.environ.get("ETHOVLM_DEBUG") else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        COMMANDS[args.command](args)
    except (BackendUnavailable, BackendError) as exc:
        log.error("backend failure: %s", exc)
        return 2
    except (UsageError, ValueError, ProbeFailed, ExtractionFailed, FileNotFoundError, KeyError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
