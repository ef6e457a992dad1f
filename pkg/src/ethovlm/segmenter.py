"""Split a video (or a pre-extracted frame tree) into one-second segments.

Frame layout on disk::

    <root>/<session_id>/<second_index:06d>/<frame_index:02d>.jpg
    <root>/<session_id>/manifest.json

Decoding is delegated to an external extractor (``ffmpeg`` by default); this
module only resamples, resizes and files the frames it produces.
"""

from __future__ import annotations

import json
import logging
import math
import re
import shlex
import shutil
import subprocess
from dataclasses import dataclass
from pathlib import Path

from PIL import Image

from .core import SegmentManifest, SegmentRef, VideoMeta, validate_manifest

log = logging.getLogger(__name__)

DEFAULT_FPS = 5
DEFAULT_MAX_EDGE = 448
DEFAULT_JPEG_QUALITY = 85
DEFAULT_COMMAND = "ffmpeg -nostdin -loglevel error -y -i {input} -vf fps={fps} -start_number 0 {outpattern}"
MANIFEST_NAME = "manifest.json"
FRAME_SUFFIXES = (".jpg", ".jpeg", ".png")

_SECOND_DIR = re.compile(r"^\d{6}$")
_FRAME_FILE = re.compile(r"^(\d{2})\.(jpg|jpeg|png)$")


class ProbeFailed(RuntimeError):
    pass


class ExtractionFailed(RuntimeError):
    pass


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class ImageFormat:
    kind: str = "jpeg"  # "jpeg" | "png"
    quality: int = DEFAULT_JPEG_QUALITY

    @property
    def suffix(self) -> str:
        return ".jpg" if self.kind == "jpeg" else ".png"


@dataclass(frozen=True)
class ExtractionPlan:
    source: VideoMeta
    fps_target: int
    output_dir: Path
    image_max_edge_px: int = DEFAULT_MAX_EDGE
    image_format: ImageFormat = ImageFormat()
    command_template: str = DEFAULT_COMMAND
    extractor: str | None = None

    def __post_init__(self) -> None:
        if self.fps_target <= 0:
            raise ValueError("fps_target must be positive")
        if self.image_max_edge_px <= 0:
            raise ValueError("image_max_edge_px must be positive")
        # Never invent frames the source does not have.
        if self.fps_target > self.source.native_fps:
            raise ValueError(
                f"fps_target {self.fps_target} exceeds native fps {self.source.native_fps}"
            )


def find_extractor(name: str = "ffmpeg") -> str | None:
    """Locate the extractor on PATH, falling back to the imageio-ffmpeg binary."""
    found = shutil.which(name)
    if found:
        return found
    if name == "ffmpeg":
        try:
            import imageio_ffmpeg
        except ImportError:
            return None
        try:
            return imageio_ffmpeg.get_ffmpeg_exe()
        except RuntimeError:
            return None
    return None


_DURATION = re.compile(r"Duration:\s*(\d+):(\d+):(\d+(?:\.\d+)?)")
_FPS = re.compile(r"Video:.*?(\d+(?:\.\d+)?)\s*fps")


def probe_video(path: str | Path, extractor: str | None = None) -> VideoMeta:
    path = Path(path)
    if not path.is_file():
        raise ProbeFailed(f"no such video: {path}")
    probe = shutil.which("ffprobe")
    if probe and extractor is None:
        return _probe_ffprobe(probe, path)
    exe = extractor or find_extractor()
    if exe is None:
        raise ProbeFailed("no ffmpeg/ffprobe executable found")
    # `ffmpeg -i` with no output exits nonzero but prints stream info on stderr.
    proc = subprocess.run([exe, "-hide_banner", "-i", str(path)], capture_output=True, text=True)
    info = proc.stderr
    dur = _DURATION.search(info)
    fps = _FPS.search(info)
    if not dur or not fps:
        raise ProbeFailed(f"could not read duration/fps from {path}: {info.strip()[-200:]}")
    h, m, s = dur.groups()
    duration = int(h) * 3600 + int(m) * 60 + float(s)
    native_fps = float(fps.group(1))
    return _meta(path, duration, native_fps, round(duration * native_fps))


def _probe_ffprobe(exe: str, path: Path) -> VideoMeta:
    cmd = [exe, "-v", "error", "-select_streams", "v:0", "-show_entries",
           "stream=avg_frame_rate,nb_frames:format=duration", "-of", "json", str(path)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise ProbeFailed(f"ffprobe failed on {path}: {proc.stderr.strip()}")
    try:
        info = json.loads(proc.stdout)
        stream = info["streams"][0]
        num, den = stream["avg_frame_rate"].split("/")
        native_fps = float(num) / float(den)
        duration = float(info["format"]["duration"])
    except (KeyError, IndexError, ValueError, ZeroDivisionError) as exc:
        raise ProbeFailed(f"unreadable ffprobe output for {path}: {exc}") from None
    try:
        frames = int(stream["nb_frames"])
    except (KeyError, ValueError):
        frames = round(duration * native_fps)
    return _meta(path, duration, native_fps, frames)


def _meta(path: Path, duration: float, fps: float, frames: int) -> VideoMeta:
    try:
        return VideoMeta(path, duration, fps, frames)
    except ValueError as exc:
        raise ProbeFailed(f"{path}: {exc}") from None


def _build_command(plan: ExtractionPlan, outpattern: Path) -> list[str]:
    argv = []
    for token in shlex.split(plan.command_template):
        argv.append(
            token.replace("{input}", str(plan.source.source_path))
            .replace("{fps}", str(plan.fps_target))
            .replace("{outpattern}", str(outpattern))
        )
    exe = plan.extractor or find_extractor(argv[0])
    if exe is None:
        raise ExtractionFailed(f"extractor {argv[0]!r} not found")
    argv[0] = exe
    return argv


def _save_frame(src: Path, dst: Path, plan: ExtractionPlan) -> None:
    with Image.open(src) as img:
        img = img.convert("RGB")
        edge = plan.image_max_edge_px
        if max(img.size) > edge:
            img.thumbnail((edge, edge), Image.Resampling.LANCZOS)
        if plan.image_format.kind == "jpeg":
            img.save(dst, format="JPEG", quality=plan.image_format.quality)
        else:
            img.save(dst, format="PNG")


def segment_video(plan: ExtractionPlan, session_id: str) -> SegmentManifest:
    """Extract ``fps_target`` frames per whole second of the source.

    A trailing partial second is dropped. Frames are written under
    ``plan.output_dir/<session_id>/`` together with ``manifest.json``; any
    previous output for the session is replaced.
    """
    session_dir = Path(plan.output_dir) / session_id
    tmp_dir = session_dir / ".extract-tmp"
    if session_dir.exists():
        shutil.rmtree(session_dir)
    tmp_dir.mkdir(parents=True)
    try:
        argv = _build_command(plan, tmp_dir / "%06d.png")
        log.info("extracting %s at %d fps", plan.source.source_path, plan.fps_target)
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise ExtractionFailed(
                f"extractor exited {proc.returncode}: {proc.stderr.strip()[-500:]}"
            )
        raw = sorted(tmp_dir.glob("*.png"))
        n_seconds = math.floor(plan.source.duration_s)
        complete = len(raw) // plan.fps_target
        if complete < n_seconds:
            log.warning(
                "%s: extractor produced %d frames, only %d of %d seconds complete",
                session_id, len(raw), complete, n_seconds,
            )
            n_seconds = complete
        segments = []
        for second in range(n_seconds):
            sec_dir = session_dir / f"{second:06d}"
            sec_dir.mkdir()
            frames = []
            for k in range(plan.fps_target):
                dst = sec_dir / f"{k:02d}{plan.image_format.suffix}"
                _save_frame(raw[second * plan.fps_target + k], dst, plan)
                frames.append(dst.resolve())
            segments.append(SegmentRef(session_id, second, tuple(frames)))
    except BaseException:
        shutil.rmtree(session_dir, ignore_errors=True)
        raise
    finally:
        shutil.rmtree(tmp_dir, ignore_errors=True)
    manifest = SegmentManifest(
        session_id, plan.fps_target, tuple(segments),
        source_video=Path(plan.source.source_path).resolve(),
    )
    write_manifest(manifest, plan.output_dir)
    return manifest


def manifest_to_dict(manifest: SegmentManifest, root: str | Path) -> dict:
    session_dir = (Path(root) / manifest.session_id).resolve()
    data = {
        "session_id": manifest.session_id,
        "fps_used": manifest.fps_used,
        "total_seconds": manifest.total_seconds,
        "segments": [
            {
                "second_index": seg.second_index,
                "frames": [Path(f).resolve().relative_to(session_dir).as_posix() for f in seg.frame_ids],
            }
            for seg in manifest.segments
        ],
    }
    if manifest.source_video is not None:
        data["source_video"] = str(manifest.source_video)
    return data


def write_manifest(manifest: SegmentManifest, root: str | Path) -> Path:
    path = Path(root) / manifest.session_id / MANIFEST_NAME
    path.write_text(json.dumps(manifest_to_dict(manifest, root), indent=2) + "\n", encoding="utf-8")
    return path


def load_frames_dir(root: str | Path, session_id: str, fps_used: int) -> SegmentManifest:
    """Rebuild a session manifest from the frame directory tree alone.

    ``manifest.json``, if present, only contributes the source video path.
    """
    session_dir = (Path(root) / session_id).resolve()
    if not session_dir.is_dir():
        raise LayoutError(f"no session directory {session_dir}")
    seconds: dict[int, Path] = {}
    for child in session_dir.iterdir():
        if child.is_dir() and _SECOND_DIR.match(child.name):
            seconds[int(child.name)] = child
    if not seconds:
        raise LayoutError(f"{session_dir}: no second directories")
    segments = []
    for i in range(max(seconds) + 1):
        if i not in seconds:
            raise LayoutError(f"{session_dir}: missing second {i} (directory {i:06d}/)")
        frames = sorted(
            (p for p in seconds[i].iterdir() if p.is_file() and _FRAME_FILE.match(p.name)),
            key=lambda p: p.name,
        )
        if not frames:
            raise LayoutError(f"{session_dir}: second {i} has no frames")
        segments.append(SegmentRef(session_id, i, tuple(f.resolve() for f in frames)))
    source = None
    manifest_file = session_dir / MANIFEST_NAME
    if manifest_file.is_file():
        try:
            recorded = json.loads(manifest_file.read_text(encoding="utf-8")).get("source_video")
        except json.JSONDecodeError:
            recorded = None
        source = Path(recorded) if recorded else None
    manifest = SegmentManifest(session_id, fps_used, tuple(segments), source_video=source)
    result = validate_manifest(manifest)
    if not result.ok:
        raise LayoutError("; ".join(result.violations))
    return manifest


def discover_sessions(root: str | Path) -> list[str]:
    """Session ids under ``root``: subdirectories holding at least one second directory."""
    root = Path(root)
    found = []
    for child in sorted(root.iterdir()):
        if child.is_dir() and any(g.is_dir() and _SECOND_DIR.match(g.name) for g in child.iterdir()):
            found.append(child.name)
    return found
