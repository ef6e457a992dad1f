from __future__ import annotations

import pytest

from ethovlm.backend import MockBackend, MockScript, ResponseCache, VlmClient
from ethovlm.core import BehaviorLabel
from ethovlm.promptkit import ExampleStore
from ethovlm.segmenter import find_extractor
from ethovlm.synthetic import synthetic_gold, write_synthetic_session

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): exit criterion; reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _ACCEPTANCE[item.nodeid] = (label, status)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, status in sorted(_ACCEPTANCE.values()):
        terminalreporter.write_line(f"[{status}] {label}")


@pytest.fixture
def ffmpeg():
    exe = find_extractor()
    if exe is None:
        pytest.skip("no ffmpeg executable available")
    return exe


@pytest.fixture
def frames_root(tmp_path):
    """A 12-second target session plus a 9-second held-out session, 5 fps."""
    root = tmp_path / "frames"
    target = synthetic_gold("s01", 12, seed=3)
    heldout = synthetic_gold("held", 9, seed=4)
    manifests = {
        g.session_id: write_synthetic_session(root, g.session_id, len(g.labels)) for g in (target, heldout)
    }
    return root, manifests, {"s01": target, "held": heldout}


@pytest.fixture
def store(frames_root):
    _, manifests, golds = frames_root
    held = golds["held"]
    rows = [("held", i, label) for i, label in enumerate(held.labels)]
    return ExampleStore.from_labeled_seconds(manifests, rows)


def make_client(golds, spec="echo", cache_dir=None, concurrency=4, **backend_kw):
    script = MockScript.parse(spec, {sid: g.labels for sid, g in golds.items()})
    backend = MockBackend(script, **backend_kw)
    cache = ResponseCache(cache_dir) if cache_dir is not None else None
    return VlmClient(backend, cache, concurrency_limit=concurrency), backend


ALL_LABELS = list(BehaviorLabel)
