import csv
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from ethovlm.cli import main
from ethovlm.core import write_gold_csv


@pytest.fixture
def workspace(tmp_path, frames_root):
    root, manifests, golds = frames_root
    write_gold_csv(tmp_path / "gold.csv", golds.values())
    with open(root / "examples.csv", "w") as fh:
        fh.write("session_id,second_index,label\n")
        for i, label in enumerate(golds["held"].labels):
            fh.write(f"held,{i},{label.value}\n")
    return tmp_path, root, golds


class _Handler(BaseHTTPRequestHandler):
    status = 200
    reply = "[Freezing]"
    bodies: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).bodies.append(body)
        if self.status != 200:
            self.send_response(self.status)
            self.end_headers()
            return
        data = json.dumps({"choices": [{"message": {"content": self.reply}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    def start(status=200):
        handler = type("H", (_Handler,), {"status": status, "bodies": []})
        srv = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        threading.Thread(target=srv.serve_forever, daemon=True).start()
        servers.append(srv)
        return f"http://127.0.0.1:{srv.server_address[1]}/v1", handler

    servers = []
    yield start
    for srv in servers:
        srv.shutdown()


def test_unknown_flag_exits_1(capsys):
    assert main(["ablate", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand_exits_1():
    assert main([]) == 1


def test_segment_video(tmp_path, ffmpeg):
    from ethovlm.synthetic import make_test_video

    video = make_test_video(tmp_path / "in.mp4", 3.5, extractor=ffmpeg)
    assert main(["segment", "--video", str(video), "--fps", "5", "--out", str(tmp_path / "work"),
                 "--extractor", ffmpeg]) == 0
    manifest = json.loads((tmp_path / "work" / "in" / "manifest.json").read_text())
    assert manifest["total_seconds"] == 3
    assert manifest["segments"][2]["frames"] == [f"000002/0{k}.jpg" for k in range(5)]


def test_segment_missing_video_exits_1(tmp_path):
    assert main(["segment", "--video", str(tmp_path / "nope.mp4"), "--out", str(tmp_path)]) == 1


def test_segment_frames_dir(workspace):
    _, root, _ = workspace
    assert main(["segment", "--frames-dir", str(root)]) == 0
    assert json.loads((root / "s01" / "manifest.json").read_text())["total_seconds"] == 12


def test_ablate_mock_echo(workspace):
    tmp, root, _ = workspace
    out = tmp / "work"
    args = ["ablate", "--grid", "default", "--sessions", str(root), "--gold", str(tmp / "gold.csv"),
            "--mock", "echo", "--out", str(out)]
    assert main(args) == 0
    with open(out / "report" / "report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 24
    assert {float(r["f1"]) for r in rows} == {1.0}
    before = {p.name: p.read_bytes() for p in (out / "report").iterdir()}
    assert main(args) == 0
    assert {p.name: p.read_bytes() for p in (out / "report").iterdir()} == before


def test_ablate_grid_file_and_config(workspace):
    tmp, root, _ = workspace
    (tmp / "grid.json").write_text(json.dumps([{"prompt_style": "Simple", "input_mode": "SegmentVideo"}]))
    (tmp / "config.json").write_text(json.dumps({"icl_enabled": False, "concurrency_limit": 2}))
    assert main(["ablate", "--grid", str(tmp / "grid.json"), "--config", str(tmp / "config.json"),
                 "--concurrency", "3", "--sessions", str(root), "--gold", str(tmp / "gold.csv"),
                 "--mock", "noisy:0.2:1", "--out", str(tmp / "w")]) == 0
    (run,) = [d for d in (tmp / "w").iterdir() if (d / "config.json").exists()]
    config = json.loads((run / "config.json").read_text())
    assert config["icl_enabled"] is False
    assert config["concurrency_limit"] == 3  # flag beats file
    assert config["input_mode"] == "SegmentVideo"


def test_ablate_needs_gold(workspace):
    _, root, _ = workspace
    assert main(["ablate", "--sessions", str(root), "--mock", "echo"]) == 1


def test_bad_mock_spec_exits_1(workspace):
    tmp, root, _ = workspace
    assert main(["ablate", "--sessions", str(root), "--gold", str(tmp / "gold.csv"), "--mock", "noisy:2"]) == 1


def test_annotate_then_evaluate_then_report(workspace):
    tmp, root, _ = workspace
    out = tmp / "work"
    assert main(["annotate", "--frames-dir", str(root), "--gold", str(tmp / "gold.csv"),
                 "--mock", "noisy:0.3:4", "--out", str(out)]) == 0
    (run,) = [d for d in out.iterdir() if (d / "config.json").exists()]
    assert (run / "s01.labels.csv").is_file()
    assert not (run / "held.labels.csv").exists()
    assert main(["evaluate", "--run-dir", str(run), "--gold", str(tmp / "gold.csv"), "--out", str(tmp / "ev")]) == 0
    report = (tmp / "ev" / "report.csv").read_bytes()
    (tmp / "ev" / "report.csv").unlink()
    assert main(["report", "--out", str(tmp / "ev")]) == 0
    assert (tmp / "ev" / "report.csv").read_bytes() == report


def test_annotate_over_http(workspace, server):
    tmp, root, _ = workspace
    url, handler = server()
    assert main(["annotate", "--frames-dir", str(root), "--session", "s01", "--endpoint", url,
                 "--model", "qwen-test", "--config", _write(tmp / "c.json", {"icl_enabled": False, "cache_dir": str(tmp / "cache")}),
                 "--out", str(tmp / "w")]) == 0
    assert len(handler.bodies) == 12
    body = handler.bodies[0]
    assert body["model"] == "qwen-test"
    assert body["max_tokens"] == 64
    kinds = [p["type"] for p in body["messages"][0]["content"]]
    assert kinds == ["text"] + ["image_url"] * 5 + ["text"]
    (run,) = [d for d in (tmp / "w").iterdir() if (d / "config.json").exists()]
    rows = (run / "s01.labels.csv").read_text().splitlines()
    assert rows[1] == "0,Freezing,fresh"
    # Second pass is served from cache.
    assert main(["annotate", "--frames-dir", str(root), "--session", "s01", "--endpoint", url,
                 "--model", "qwen-test", "--config", str(tmp / "c.json"), "--out", str(tmp / "w2")]) == 0
    assert len(handler.bodies) == 12


def test_backend_failure_exits_2(workspace, server, monkeypatch):
    tmp, root, _ = workspace
    monkeypatch.setattr("time.sleep", lambda s: None)
    url, handler = server(status=500)
    code = main(["annotate", "--frames-dir", str(root), "--session", "s01", "--endpoint", url,
                 "--config", _write(tmp / "c.json", {"icl_enabled": False, "concurrency_limit": 1}),
                 "--out", str(tmp / "w")])
    assert code == 2
    # Each attempted second costs one try plus three retries; a worker may have
    # dequeued one more second before the failure cancels the rest.
    assert len(handler.bodies) in (4, 8)


def test_mock_run(tmp_path):
    assert main(["mock-run", "--out", str(tmp_path / "demo"), "--seconds", "20"]) == 0
    assert (tmp_path / "demo" / "work" / "report" / "f1_comparison.svg").is_file()


def _write(path, data):
    path.write_text(json.dumps(data))
    return str(path)
