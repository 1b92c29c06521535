import hashlib
from pathlib import Path

import numpy as np
import pytest

from camtrap.datakit import (
    EMPTY,
    PartitionSpec,
    SynthSceneConfig,
    build_partition,
    class_names,
    motif_of,
    read_image,
    read_manifest,
    synth_generate,
    synth_scenes,
    validate_manifest,
)


def tree_digest(root):
    h = hashlib.sha256()
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def test_clean_config_all_foreground():
    _, m = synth_scenes(SynthSceneConfig(num_classes=4, image_side=16, train_per_class=6, eval_per_class=3))
    assert all(r.foreground and r.crop_box is not None for r in m.records)
    assert EMPTY not in m.class_table
    assert validate_manifest(m, image_size=lambda r: (16, 16)) == []
    assert set(m.class_counts("train").values()) == {6}


def test_generate_writes_valid_tree_and_is_deterministic(tmp_path):
    cfg = SynthSceneConfig(num_classes=3, image_side=12, train_per_class=4, eval_per_class=2, occlusion=0.5, seed=9)
    images, m = synth_generate(cfg, tmp_path / "a")
    synth_generate(cfg, tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    back = read_manifest(tmp_path / "a" / "manifest.jsonl")
    assert validate_manifest(back) == []
    r = back.records[0]
    np.testing.assert_array_equal(read_image(tmp_path / "a" / r.uri), images[r.id])


def test_seed_changes_output():
    base = dict(num_classes=2, image_side=12, train_per_class=3, eval_per_class=2)
    a, _ = synth_scenes(SynthSceneConfig(seed=1, **base))
    b, _ = synth_scenes(SynthSceneConfig(seed=2, **base))
    assert any(a[k].tobytes() != b[k].tobytes() for k in a if k in b)


def test_empty_rate_statistics():
    cfg = SynthSceneConfig(num_classes=4, image_side=8, train_per_class=200, eval_per_class=50, empty_frame=0.3, seed=4)
    _, m = synth_scenes(cfg)
    assert len(m.records) == 1000
    empties = sum(r.species == EMPTY for r in m.records)
    assert 270 <= empties <= 330
    assert all(not r.foreground and r.crop_box is None for r in m.records if r.species == EMPTY)


def test_empty_frames_keep_species_label_when_not_a_class():
    cfg = SynthSceneConfig(num_classes=3, image_side=8, train_per_class=30, eval_per_class=5, empty_frame=0.5, empty_as_class=False)
    _, m = synth_scenes(cfg)
    assert EMPTY not in m.class_table
    blanks = [r for r in m.records if r.crop_box is None]
    assert blanks and all(r.species in m.class_table and not r.foreground for r in blanks)
    d3 = build_partition(m, PartitionSpec("D3"))
    assert all(r.crop_box is not None for r in d3.records)


def test_invalid_rate_message():
    with pytest.raises(ValueError, match="invalid condition rate"):
        SynthSceneConfig(blur=1.5).validate()
    with pytest.raises(ValueError):
        SynthSceneConfig(num_classes=0).validate()


def test_grayscale_night_flag_and_pixels():
    cfg = SynthSceneConfig(num_classes=2, image_side=10, train_per_class=5, eval_per_class=2, grayscale_night=1.0)
    images, m = synth_scenes(cfg)
    for r in m.records:
        assert r.grayscale
        img = images[r.id].astype(int)
        assert np.all(img[..., 0] == img[..., 1]) and np.all(img[..., 1] == img[..., 2])


def test_far_animals_are_background():
    cfg = SynthSceneConfig(num_classes=2, image_side=32, train_per_class=5, eval_per_class=2, far=1.0)
    _, m = synth_scenes(cfg)
    assert all(not r.foreground for r in m.records)
    assert max(r.crop_box[2] for r in m.records) < 16


def test_motifs_distinct_and_offset_names():
    assert len({motif_of(c)[:2] for c in range(48)}) == 48
    assert class_names(3, offset=10) == class_names(13)[10:]
    _, m = synth_scenes(SynthSceneConfig(num_classes=2, image_side=8, train_per_class=2, eval_per_class=2, class_offset=5))
    assert m.class_table == class_names(7)[5:]


def test_bursts_share_a_split():
    _, m = synth_scenes(SynthSceneConfig(num_classes=3, image_side=8, train_per_class=10, eval_per_class=5, max_burst=3))
    by_event = {}
    for r in m.records:
        by_event.setdefault(r.capture_event, set()).add(m.splits[r.id])
    assert all(len(s) == 1 for s in by_event.values())
