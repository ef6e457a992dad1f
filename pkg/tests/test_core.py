import dataclasses
import subprocess
import sys
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ethovlm.core import (
    BehaviorLabel,
    Decoding,
    GoldAnnotations,
    IclExample,
    InputMode,
    PipelineConfig,
    PromptStyle,
    SegmentManifest,
    SegmentRef,
    VideoMeta,
    config_digest,
    read_gold_csv,
    validate_manifest,
    write_gold_csv,
)


def _manifest(indices, session="s"):
    segs = tuple(SegmentRef(session, i, (Path(f"/f/{i}/00.jpg"),)) for i in indices)
    return SegmentManifest(session, 5, segs)


def test_label_vocabulary_is_closed():
    assert [label.value for label in BehaviorLabel] == ["Freezing", "Fleeing", "Exploring/Grooming", "Unknown"]


@pytest.mark.parametrize("label", list(BehaviorLabel))
def test_label_round_trips_through_canonical_string(label):
    assert BehaviorLabel.from_canonical(str(label)) is label


def test_validate_manifest_ok():
    assert validate_manifest(_manifest([0, 1, 2])).ok


def test_validate_manifest_reports_gap():
    result = validate_manifest(_manifest([0, 2]))
    assert not result.ok
    assert "missing second 1" in result.violations


def test_validate_manifest_full_dataset_size():
    assert validate_manifest(_manifest(range(3240))).ok


def test_validate_manifest_flags_empty_segment_and_foreign_session():
    segs = (SegmentRef("s", 0, ()), SegmentRef("other", 1, (Path("x.jpg"),)))
    violations = validate_manifest(SegmentManifest("s", 5, segs)).violations
    assert any("no frames" in v for v in violations)
    assert any("other" in v for v in violations)


def test_video_meta_slack():
    VideoMeta(Path("a.mp4"), 60.0, 30.0, 1800)
    VideoMeta(Path("a.mp4"), 10.4, 25.0, 260)
    with pytest.raises(ValueError):
        VideoMeta(Path("a.mp4"), 60.0, 30.0, 1700)


def test_icl_example_rejects_unknown():
    with pytest.raises(ValueError):
        IclExample((Path("a.jpg"),), BehaviorLabel.UNKNOWN, "held")


def test_gold_rejects_unknown():
    with pytest.raises(ValueError):
        GoldAnnotations("s", (BehaviorLabel.FREEZING, BehaviorLabel.UNKNOWN))


def test_config_digest_identical_configs():
    assert config_digest(PipelineConfig()) == config_digest(PipelineConfig())


def test_config_digest_sees_every_field():
    base = PipelineConfig()
    changes = {
        "prompt_style": PromptStyle.SIMPLE,
        "icl_enabled": False,
        "input_mode": InputMode.WHOLE_VIDEO,
        "fps_target": 10,
        "icl_count": 6,
        "decoding": Decoding(0.2, 32),
        "concurrency_limit": 8,
        "backend_endpoint": "http://x",
        "cache_dir": "elsewhere",
    }
    assert set(changes) == {f.name for f in dataclasses.fields(PipelineConfig)}
    digests = {config_digest(dataclasses.replace(base, **{k: v})) for k, v in changes.items()}
    digests.add(config_digest(base))
    assert len(digests) == len(changes) + 1


def test_config_digest_is_pure():
    config = PipelineConfig()
    assert len({config_digest(config) for _ in range(1000)}) == 1


def test_config_digest_field_order_independent():
    a = PipelineConfig.from_dict({"fps_target": 5, "icl_count": 3, "prompt_style": "Simple"})
    b = PipelineConfig.from_dict({"prompt_style": "Simple", "icl_count": 3, "fps_target": 5})
    assert a.config_id == b.config_id


def test_config_digest_stable_across_processes():
    config = PipelineConfig(prompt_style=PromptStyle.SIMPLE, icl_enabled=False)
    code = (
        "from ethovlm.core import *;"
        "print(config_digest(PipelineConfig(prompt_style=PromptStyle.SIMPLE, icl_enabled=False)), end='')"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, check=True).stdout
    assert out == config_digest(config).encode()


def test_config_round_trips_through_dict():
    config = PipelineConfig(decoding=Decoding(0.1, 99), input_mode=InputMode.SEGMENT_VIDEO)
    assert PipelineConfig.from_dict(config.to_dict()) == config


def test_config_rejects_unknown_fields():
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"temperature": 0.3})


def test_decoding_defaults():
    d = Decoding()
    assert d.temperature == 0.0
    assert d.tokens_for(1) == 64
    assert d.tokens_for(60) == 960


@given(st.dictionaries(st.text("abcxyz019_-.", min_size=1, max_size=8),
                       st.lists(st.sampled_from(list(BehaviorLabel)[:3]), min_size=1, max_size=20),
                       max_size=4))
def test_gold_csv_round_trip(tmp_path_factory, sessions):
    path = tmp_path_factory.mktemp("gold") / "gold.csv"
    golds = [GoldAnnotations(sid, tuple(labels)) for sid, labels in sessions.items()]
    write_gold_csv(path, golds)
    assert read_gold_csv(path) == {g.session_id: g for g in golds}


def test_gold_csv_format(tmp_path):
    path = tmp_path / "gold.csv"
    write_gold_csv(path, [GoldAnnotations("m1", (BehaviorLabel.FREEZING, BehaviorLabel.EXPLORING_GROOMING))])
    assert path.read_bytes() == b"session_id,second_index,label\nm1,0,Freezing\nm1,1,Exploring/Grooming\n"


def test_gold_csv_rejects_gaps_and_unknown(tmp_path):
    path = tmp_path / "gold.csv"
    path.write_text("session_id,second_index,label\nm1,0,Freezing\nm1,2,Fleeing\n")
    with pytest.raises(ValueError, match="missing second 1"):
        read_gold_csv(path)
    path.write_text("session_id,second_index,label\nm1,0,Unknown\n")
    with pytest.raises(ValueError):
        read_gold_csv(path)
    path.write_text("session_id,second_index,label\nm1,0,sleeping\n")
    with pytest.raises(ValueError):
        read_gold_csv(path)
