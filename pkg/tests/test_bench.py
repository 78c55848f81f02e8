import csv
import io
import json

import pytest

from goalgraph.bench import (
    BenchConfig,
    GroupStats,
    MetricsReport,
    episode_seeds,
    load_artifacts,
    run_benchmark,
)
from goalgraph.episode import EpisodeConfig, run_episode
from goalgraph.errors import MissingArtifacts
from goalgraph.library import demo_seeds
from goalgraph.scenarios import ScenarioConfig, generate_scenario

from faults import MisplacingPredictor


def test_zero_episodes_gives_undefined_rates():
    r = run_benchmark(BenchConfig(n_seen=0, n_unseen=0), seed=0, artifacts={f: (None, None) for f in
                      ("SequentialStack", "FlexiblePlace", "HybridGrill", "HybridDrawer")})
    assert r.undefined and r.task_success is None and r.phase_success is None
    assert "task_success: undefined" in r.to_text()


def test_episode_seeds_are_separate_from_demo_seeds():
    ep = episode_seeds(0, "SequentialStack", "seen", 30)
    assert not set(ep) & set(demo_seeds(0, 30))
    assert ep == episode_seeds(0, "SequentialStack", "seen", 30)
    assert ep != episode_seeds(0, "SequentialStack", "unseen", 30)


def test_small_run_writes_layout(artifacts, tmp_path):
    arts = {"HybridDrawer": artifacts("HybridDrawer")}
    bench = BenchConfig(families=("HybridDrawer",), n_seen=1, n_unseen=2)
    r = run_benchmark(bench, seed=0, out=tmp_path, artifacts=arts)
    assert r.task_success == 1.0 and r.phase_success == 1.0
    g = r.group("HybridDrawer", "unseen")
    assert g.episodes == 2 and g.phases_total == 40
    for mode, n in (("seen", 1), ("unseen", 2)):
        dirs = list((tmp_path / "HybridDrawer" / mode).iterdir())
        assert len(dirs) == n
        doc = json.loads((dirs[0] / "episode.json").read_text())
        assert doc["success"] and doc["mode"] == mode
    rows = list(csv.DictReader(io.StringIO((tmp_path / "report.csv").read_text())))
    assert [(x["family"], x["mode"]) for x in rows] == [("HybridDrawer", "seen"), ("HybridDrawer", "unseen")]
    assert json.loads((tmp_path / "report.json").read_text())["task_success"] == 1.0


def test_fault_injection_separates_phase_and_task_rates(artifacts):
    lib, pred = artifacts("SequentialStack")
    bad = MisplacingPredictor.from_dict(pred.to_dict())
    stats = GroupStats("SequentialStack", "unseen")
    for seed in (1, 2, 3):
        world, task = generate_scenario(ScenarioConfig(mode="unseen", order_seed=2, placement_seed=seed))
        stats.add(run_episode(world, task, bad, lib, EpisodeConfig("unseen")))
    report = MetricsReport(0, [stats])
    # each 18-step chain fails at its first transport after three good phases
    assert stats.phases_total == 54 and stats.phases_completed == 9
    assert report.task_success == 0.0
    assert report.phase_success == pytest.approx(9 / 54)
    assert report.phase_success > report.task_success


def test_missing_artifacts(tmp_path):
    with pytest.raises(MissingArtifacts):
        load_artifacts(tmp_path, "SequentialStack")
    with pytest.raises(MissingArtifacts):
        run_benchmark(BenchConfig(families=("SequentialStack",), n_seen=1, n_unseen=0), 0, tmp_path, build_all=False)
