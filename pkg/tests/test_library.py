import json

import numpy as np
import pytest

from goalgraph.errors import CorruptManifest, MissingAsset
from goalgraph.library import Library, build, demo_seeds, retrieve_transition
from goalgraph.scenarios import ScenarioConfig


@pytest.fixture(scope="module")
def small():
    return build(ScenarioConfig(family="FlexiblePlace"), 2, seed=3)


def test_build_is_deterministic(small):
    again = build(ScenarioConfig(family="FlexiblePlace"), 2, seed=3)
    assert again.digest() == small.digest()


def test_demo_seeds_depend_on_seed():
    assert demo_seeds(0, 4) == demo_seeds(0, 4)
    assert demo_seeds(0, 4) != demo_seeds(1, 4)


def test_frames_and_transitions_line_up(small):
    assert len(small.frames) == len(small.transitions) + 2
    for t in small.transitions:
        assert small.frames[t.frame_before].graph == t.g_before
        assert small.frames[t.frame_after].graph == t.g_after


def test_entries_have_matching_dims_and_labels(small):
    assert {"apple", "orange", "plum", "box", "gripper_open", "gripper_closed"} <= set(small.labels())
    for e in small.entries:
        assert e.crop.shape[:2] == e.mask.shape == (e.box.h, e.box.w)


def test_save_load_round_trip(small, tmp_path):
    small.save(tmp_path / "lib")
    back = Library.load(tmp_path / "lib")
    assert back.digest() == small.digest()
    assert np.array_equal(back.plate, small.plate)
    for a, b in zip(back.entries, small.entries):
        assert np.array_equal(a.crop, b.crop) and np.array_equal(a.mask, b.mask) and a.box == b.box
    assert np.array_equal(back.frames[5].image, small.frames[5].image)


def test_assets_are_content_addressed(small, tmp_path):
    small.save(tmp_path / "lib")
    names = [p.name for p in (tmp_path / "lib" / "assets").iterdir()]
    assert len(names) == len(set(names))
    doc = json.loads((tmp_path / "lib" / "manifest.json").read_text())
    refs = {e["crop"]["file"] for e in doc["manifest"]["entries"]}
    assert len(refs) < len(doc["manifest"]["entries"])  # identical crops share one file


def test_missing_asset(small, tmp_path):
    small.save(tmp_path / "lib")
    victim = sorted((tmp_path / "lib" / "assets").iterdir())[0]
    victim.unlink()
    with pytest.raises(MissingAsset):
        Library.load(tmp_path / "lib")


def test_truncated_asset(small, tmp_path):
    small.save(tmp_path / "lib")
    victim = sorted((tmp_path / "lib" / "assets").iterdir())[0]
    victim.write_bytes(victim.read_bytes()[:10])
    with pytest.raises(MissingAsset):
        Library.load(tmp_path / "lib")


def test_tampered_manifest(small, tmp_path):
    small.save(tmp_path / "lib")
    path = tmp_path / "lib" / "manifest.json"
    doc = json.loads(path.read_text())
    doc["manifest"]["family"] = "HybridGrill"
    path.write_text(json.dumps(doc))
    with pytest.raises(CorruptManifest):
        Library.load(tmp_path / "lib")


def test_flipped_asset_byte(small, tmp_path):
    small.save(tmp_path / "lib")
    victim = sorted((tmp_path / "lib" / "assets").iterdir())[0]
    data = bytearray(victim.read_bytes())
    data[-5] ^= 0xFF
    victim.write_bytes(bytes(data))
    with pytest.raises(CorruptManifest):
        Library.load(tmp_path / "lib")


def test_retrieve_transition_matches_graphs(small):
    t = small.transitions[4]
    rec = retrieve_transition(small, t.g_before, t.g_after, t.l_before)
    assert rec is t or (rec.g_before == t.g_before and rec.g_after == t.g_after)
    assert rec.l_before == t.l_before or rec.demo != t.demo
    assert retrieve_transition(small, t.g_after, t.g_before, t.l_before) is None
