"""Synthetic sessions for dry runs and tests: frame trees, gold vectors, test videos."""

from __future__ import annotations

import hashlib
import random
import subprocess
from pathlib import Path
from PIL import Image

from .core import GOLD_CLASSES, BehaviorLabel, GoldAnnotations
from .segmenter import ExtractionFailed, find_extractor, load_frames_dir, write_manifest

# Roughly the class balance of the annotated lab data (freezing ~13%, fleeing <1%).
CLASS_WEIGHTS = {
    BehaviorLabel.FREEZING: 0.127,
    BehaviorLabel.FLEEING: 0.006,
    BehaviorLabel.EXPLORING_GROOMING: 0.867,
}


def synthetic_labels(n_seconds: int, seed: int = 0, mean_bout_s: float = 4.0) -> tuple[BehaviorLabel, ...]:
    """Piecewise-constant label sequence with every class present when n_seconds >= 3."""
    rng = random.Random(seed)
    classes = list(CLASS_WEIGHTS)
    weights = [CLASS_WEIGHTS[c] for c in classes]
    labels: list[BehaviorLabel] = []
    while len(labels) < n_seconds:
        label = rng.choices(classes, weights)[0]
        bout = 1 if label is BehaviorLabel.FLEEING else max(1, round(rng.expovariate(1 / mean_bout_s)))
        labels.extend([label] * bout)
    labels = labels[:n_seconds]
    # Guarantee each class appears so every F1 is defined. Only overwrite
    # seconds whose label occurs elsewhere, so no class is lost in the swap.
    for c in GOLD_CLASSES[: min(n_seconds, len(GOLD_CLASSES))]:
        if c in labels:
            continue
        spare = [i for i, x in enumerate(labels) if labels.count(x) > 1]
        labels[rng.choice(spare)] = c
    return tuple(labels)


def _colour(session_id: str, second: int, frame: int) -> tuple[int, int, int]:
    h = hashlib.sha256(f"{session_id}/{second}/{frame}".encode()).digest()
    return h[0], h[1], h[2]


def write_synthetic_session(
    root: str | Path,
    session_id: str,
    n_seconds: int,
    fps: int = 5,
    size: int = 16,
):
    """Write a frame tree whose every frame has distinct content; return its manifest."""
    session_dir = Path(root) / session_id
    for second in range(n_seconds):
        sec_dir = session_dir / f"{second:06d}"
        sec_dir.mkdir(parents=True, exist_ok=True)
        for k in range(fps):
            img = Image.new("RGB", (size, size), _colour(session_id, second, k))
            img.save(sec_dir / f"{k:02d}.jpg", format="JPEG", quality=85)
    manifest = load_frames_dir(root, session_id, fps)
    write_manifest(manifest, root)
    return manifest


def synthetic_gold(session_id: str, n_seconds: int, seed: int = 0) -> GoldAnnotations:
    return GoldAnnotations(session_id, synthetic_labels(n_seconds, seed))


def make_test_video(path: str | Path, duration_s: float, fps: int = 30, size: str = "160x120",
                    extractor: str | None = None) -> Path:
    """Render an ffmpeg test-pattern clip (requires an ffmpeg executable)."""
    exe = extractor or find_extractor()
    if exe is None:
        raise ExtractionFailed("ffmpeg not available")
    path = Path(path)
    cmd = [exe, "-nostdin", "-loglevel", "error", "-y", "-f", "lavfi",
           "-i", f"testsrc=duration={duration_s}:size={size}:rate={fps}",
           "-pix_fmt", "yuv420p", str(path)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise ExtractionFailed(proc.stderr.strip())
    return path

