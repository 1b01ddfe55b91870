import json

import numpy as np
import pytest

from voxmotion.dataset import Scenario
from voxmotion.grids import GridSpec, SceneTimeline, build_from_boxes, save_grid
from voxmotion.models import BundleConfig, ModelBundle
from voxmotion.pipeline import (
    STITCH_FRAMES,
    RunConfig,
    aggregate_reports,
    evaluate_motion,
    generate_sequence,
    plan_segments,
    read_motion_jsonl,
    run_benchmark,
    run_scenario,
    write_benchmark_csv,
    write_motion_jsonl,
)
from voxmotion.errors import InputError, NoPath
from voxmotion.metrics import EvalReport
from voxmotion.skeleton import PELVIS, PELVIS_HEIGHT


def tiny_bundle():
    cfg = BundleConfig(
        denoiser_layers=1, denoiser_dim=32, denoiser_heads=2, diffusion_steps=10
    )
    return ModelBundle(cfg, seed=0)


def room(boxes=()):
    spec = GridSpec(origin=(0.0, 0.0, 0.0), voxel_size=0.1, dims=(64, 64, 24))
    return SceneTimeline.static(build_from_boxes(list(boxes), spec))


class TestPlanSegments:
    def test_segment_count_scales_with_distance(self):
        tl = room()
        cfg = RunConfig()
        start = np.array([1.0, PELVIS_HEIGHT, 1.0])
        _, kp_short = plan_segments(tl, start, [2.0, PELVIS_HEIGHT, 1.0], cfg)
        _, kp_long = plan_segments(tl, start, [5.5, PELVIS_HEIGHT, 1.0], cfg)
        assert len(kp_short) == 1
        assert len(kp_long) >= 2
        # last keypoint is the goal position
        np.testing.assert_allclose(kp_long[-1, [0, 2]], [5.5, 1.0], atol=0.11)

    def test_no_path_propagates(self):
        wall = ((3.0, 0.0, 0.0), (3.4, 2.0, 6.4))
        tl = room([wall])
        with pytest.raises(NoPath):
            plan_segments(
                tl, [1.0, PELVIS_HEIGHT, 3.0], [6.0, PELVIS_HEIGHT, 3.0], RunConfig()
            )


class TestGenerateSequence:
    def test_shapes_and_stitching(self):
        bundle = tiny_bundle()
        tl = room()
        result = generate_sequence(
            bundle, None, tl, "a person walks to the goal",
            [1.0, PELVIS_HEIGHT, 1.0], [5.0, PELVIS_HEIGHT, 4.0], RunConfig(seed=3),
        )
        n_seg = len(result.segments)
        assert n_seg >= 2
        assert result.motion.shape == (
            48 + (n_seg - 1) * (48 - STITCH_FRAMES),
            bundle.config.joints,
            3,
        )
        assert len(result.diagnostics) == n_seg
        for d in result.diagnostics:
            w = d["condition_weights"]
            assert abs(sum(w.values()) - 1.0) < 1e-6

    def test_deterministic_per_seed(self):
        bundle = tiny_bundle()
        tl = room()
        kw = dict(
            prompt="a person walks to the goal",
            start=[1.0, PELVIS_HEIGHT, 1.0],
            goal=[4.0, PELVIS_HEIGHT, 2.0],
        )
        a = generate_sequence(bundle, None, tl, kw["prompt"], kw["start"], kw["goal"], RunConfig(seed=1))
        b = generate_sequence(bundle, None, tl, kw["prompt"], kw["start"], kw["goal"], RunConfig(seed=1))
        c = generate_sequence(bundle, None, tl, kw["prompt"], kw["start"], kw["goal"], RunConfig(seed=2))
        np.testing.assert_array_equal(a.motion, b.motion)
        assert not np.array_equal(a.motion, c.motion)

    def test_ablation_flags_change_output(self):
        bundle = tiny_bundle()
        tl = room([((2.5, 0.0, 1.5), (3.0, 1.9, 2.5))])
        kw = ("a person walks to the goal", [1.0, PELVIS_HEIGHT, 2.0], [5.0, PELVIS_HEIGHT, 2.0])
        full = generate_sequence(bundle, None, tl, *kw, RunConfig(seed=0))
        no_nav = generate_sequence(bundle, None, tl, *kw, RunConfig(seed=0, use_navigation=False))
        assert not np.array_equal(full.motion, no_nav.motion)

    def test_gaussian_prime_without_memory(self):
        bundle = tiny_bundle()
        tl = room()
        result = generate_sequence(
            bundle, None, tl, "a person walks",
            [1.0, PELVIS_HEIGHT, 1.0], [2.0, PELVIS_HEIGHT, 1.0], RunConfig(),
        )
        assert all(d["prime_source"] == "gaussian" for d in result.diagnostics)


class TestEvaluateMotion:
    def test_report_fields_finite(self):
        tl = room()
        rng = np.random.default_rng(0)
        motion = rng.uniform(0.5, 2.0, size=(30, 22, 3))
        report = evaluate_motion(
            motion, tl, [1.0, PELVIS_HEIGHT, 1.0], [2.0, PELVIS_HEIGHT, 2.0]
        )
        for key, value in report.to_json().items():
            if value is not None:
                assert np.isfinite(value), key


class TestAggregation:
    def make_report(self, value):
        return EvalReport(
            traj_sim=value, traj_err=value, goal_err=value,
            pene_value=value, pene_rate=value, pene_mean=value,
            pene_max=value, foot_skating=value,
        )

    def test_single_report_identity(self):
        agg = aggregate_reports([self.make_report(0.5)])
        assert all(v == 0.5 for v in agg.values())

    def test_mean_of_two(self):
        agg = aggregate_reports([self.make_report(0.0), self.make_report(1.0)])
        assert all(v == 0.5 for v in agg.values())

    def test_permutation_invariant(self):
        reports = [self.make_report(v) for v in (0.1, 0.7, 0.4)]
        a = aggregate_reports(reports)
        b = aggregate_reports(reports[::-1])
        for key in a:
            assert a[key] == pytest.approx(b[key], abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            aggregate_reports([])


class TestMotionFiles:
    def test_jsonl_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        motion = rng.standard_normal((5, 22, 3))
        path = tmp_path / "m.jsonl"
        write_motion_jsonl(motion, path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 5
        first = json.loads(lines[0])
        assert first["t"] == 0
        assert len(first["joints"]) == 22
        loaded = read_motion_jsonl(path)
        np.testing.assert_allclose(loaded, motion, atol=1e-12)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(InputError):
            read_motion_jsonl(path)


class TestScenarioRun:
    def test_run_and_benchmark(self, tmp_path):
        spec = GridSpec(origin=(0.0, 0.0, 0.0), voxel_size=0.1, dims=(64, 64, 24))
        g0 = build_from_boxes([], spec)
        g1 = build_from_boxes([((2.8, 0.0, 1.6), (3.2, 1.9, 2.4))], spec)
        save_grid(g0, tmp_path / "begin.grid")
        save_grid(g1, tmp_path / "change.grid")
        scn = Scenario(
            id="t0",
            scene_begin="begin.grid",
            scene_changes=[(50, "change.grid")],
            prompt="a person walks to the goal",
            start=(1.0, PELVIS_HEIGHT, 2.0),
            goal=(5.0, PELVIS_HEIGHT, 2.0),
        )
        bundle = tiny_bundle()
        result, report = run_scenario(bundle, None, scn, tmp_path, RunConfig(seed=0))
        assert result.motion.ndim == 3
        assert 0.0 <= report.pene_rate <= 1.0

        results = run_benchmark(
            bundle, None, [scn], tmp_path,
            variants={"full": RunConfig(seed=0), "no-navigation": RunConfig(seed=0, use_navigation=False)},
        )
        assert set(results) == {"full", "no-navigation"}
        agg = results["full"]["aggregate"]
        assert agg["goal_err"] == pytest.approx(
            results["full"]["per_scenario"][0]["goal_err"]
        )
        csv_path = tmp_path / "m.csv"
        write_benchmark_csv(results, csv_path)
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0].startswith("variant,scenario,")
        assert len(lines) == 1 + 2 * 2  # header + (scenario + mean) per variant
