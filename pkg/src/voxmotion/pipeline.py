"""End-to-end sequence generation and scenario evaluation.

A long request is split into 48-frame segments along the planned global
path.  Each segment is generated in a canonical frame (segment start at the
horizontal origin) by the conditional denoiser, primed from the experience
store when possible, and stitched to the previous segment by a two-frame
overlap.  Scenario evaluation scores the result against the deterministic
replanning oracle and the scene timeline.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import ConditionWeights, condition_adapter, assemble_condition_vector, sample_segment, schedule_new
from .encoders import embed_text, encode_goal, encode_local_scene, project_text
from .errors import InputError, PlanningError
from .grids import SceneTimeline, extract_local, grid_at, inflate, project_2d, voxel_delta
from .memory import MemoryStore
from .metrics import EvalReport, foot_skating, goal_err, penetration, traj_err, traj_similarity
from .models import ModelBundle
from .navigation import (
    DEFAULT_FPS,
    DEFAULT_SPEED,
    TrajectorySegment,
    Waypoint,
    heading_from_displacement,
    oracle_navigator,
    plan_global,
    rollout,
    select_keypoints,
)
from .skeleton import PELVIS

SEGMENT_FRAMES = 48
STITCH_FRAMES = 2


@dataclass
class RunConfig:
    segment_frames: int = SEGMENT_FRAMES
    fps: int = DEFAULT_FPS
    speed: float = DEFAULT_SPEED
    inflate_radius: float = 0.25
    height_band: tuple[float, float] = (0.1, 1.8)
    use_navigation: bool = True
    use_memory: bool = True
    use_adapter: bool = True
    seed: int = 0
    # if the character is still farther than this from the goal after the
    # planned segments, keep appending goal-directed segments, up to a cap
    arrival_tolerance: float = 0.15
    max_extra_segments: int = 4

    @property
    def segment_distance(self) -> float:
        return self.segment_frames * self.speed / self.fps


@dataclass
class GenerationResult:
    motion: np.ndarray  # (F, J, 3)
    segments: list[TrajectorySegment]
    diagnostics: list[dict] = field(default_factory=list)

    @property
    def root_trajectory(self) -> np.ndarray:
        return self.motion[:, PELVIS, :]


def _straight_line_segment(start, goal, frames, frame_offset) -> TrajectorySegment:
    """Constant-velocity fallback trajectory used by the no-navigation
    ablation; ignores the scene entirely."""
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    ts = np.linspace(0.0, 1.0, frames + 1)[1:]
    waypoints = [
        Waypoint(position=(1.0 - t) * start + t * goal, confidence=1.0) for t in ts
    ]
    return TrajectorySegment(waypoints=waypoints, frame_offset=frame_offset)


def _pin_endpoint(traj: TrajectorySegment, seg_goal: np.ndarray) -> TrajectorySegment:
    """Ramp a correction along the segment so the last waypoint lands on the
    segment goal.

    The learned step policy has a preferred walking speed and orbits a goal
    it has already reached instead of stopping on it, so near-goal rollouts
    end a step length away.  The ramp preserves the rollout's obstacle
    avoiding shape while making the terminal frame exact.
    """
    positions = traj.positions()
    corr = np.asarray(seg_goal, dtype=np.float64) - positions[-1]
    if np.linalg.norm(corr) > 0.75:
        return traj  # far off target: trust the rollout, do not teleport
    ramp = np.linspace(0.0, 1.0, len(positions))[:, None]
    pinned = positions + ramp * corr
    return TrajectorySegment(
        waypoints=[
            Waypoint(position=p, confidence=w.confidence)
            for p, w in zip(pinned, traj.waypoints)
        ],
        frame_offset=traj.frame_offset,
    )


def plan_segments(timeline: SceneTimeline, start, goal, config: RunConfig):
    """Initial global plan and its uniform per-segment keypoints.

    The number of segments is the path length divided by the nominal
    distance one segment covers at walking speed, rounded up.
    """
    nav = inflate(
        project_2d(grid_at(timeline, 0), config.height_band), config.inflate_radius
    )
    plan = plan_global(nav, (start[0], start[2]), (goal[0], goal[2]))
    arc = float(plan.arc_lengths()[-1])
    n_segments = max(1, math.ceil(arc / config.segment_distance))
    keypoints = select_keypoints(plan, n_segments)
    # interpolate the vertical coordinate from start to goal across keypoints
    for i in range(n_segments):
        t = (i + 1) / n_segments
        keypoints[i, 1] = (1.0 - t) * start[1] + t * goal[1]
    return plan, keypoints


def generate_sequence(
    bundle: ModelBundle,
    memory: MemoryStore | None,
    timeline: SceneTimeline,
    prompt: str,
    start,
    goal,
    config: RunConfig = RunConfig(),
) -> GenerationResult:
    """Generate a full motion sequence for one request."""
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    text = embed_text(prompt)
    schedule = schedule_new(
        bundle.config.diffusion_steps,
        bundle.config.beta_start,
        bundle.config.beta_end,
    )
    frames = config.segment_frames
    _, keypoints = plan_segments(timeline, start, goal, config)

    motion_parts: list[np.ndarray] = []
    segments: list[TrajectorySegment] = []
    diagnostics: list[dict] = []
    pos = start.copy()
    yaw = heading_from_displacement(goal - start, 0.0)
    prev_tail: np.ndarray | None = None  # last two world-frame pose frames
    prev_window = None
    frame_offset = 0

    queue = list(keypoints)
    extra = 0
    si = -1
    while queue:
        seg_goal = queue.pop(0)
        si += 1
        if config.use_navigation:
            # replan from the current position on the live grid so scene
            # changes reroute the remaining segments; on a mid-run planning
            # failure keep the statically planned keypoint
            try:
                nav = inflate(
                    project_2d(grid_at(timeline, frame_offset), config.height_band),
                    config.inflate_radius,
                )
                plan = plan_global(nav, (pos[0], pos[2]), (goal[0], goal[2]))
                arc = float(plan.arc_lengths()[-1])
                n_rem = max(1, math.ceil(arc / config.segment_distance))
                seg_goal = select_keypoints(plan, n_rem)[0].copy()
                seg_goal[1] = pos[1] + (goal[1] - pos[1]) / n_rem
            except PlanningError:
                pass
            traj = _pin_endpoint(
                rollout(
                    bundle.navigator, pos, seg_goal, timeline, text,
                    frames=frames, frame_offset=frame_offset, initial_yaw=yaw,
                ),
                seg_goal,
            )
        else:
            traj = _straight_line_segment(pos, seg_goal, frames, frame_offset)

        window = extract_local(grid_at(timeline, frame_offset), pos, yaw)
        scene = encode_local_scene(window, bundle.encoders)
        changed_voxels = 0
        if prev_window is not None:
            changed_voxels = voxel_delta(window, prev_window)[0]
        prev_window = window

        if memory is not None and config.use_memory:
            prime, prime_source = memory.retrieve(
                prompt, scene.vector, config.seed + si
            )
        else:
            rng = np.random.default_rng(config.seed + si)
            prime = rng.standard_normal((frames, bundle.config.joints, 3))
            prime_source = "gaussian"

        if config.use_adapter:
            weights = condition_adapter(text.vector, bundle.denoiser.adapter)
        else:
            weights = ConditionWeights.uniform()

        offset = np.array([pos[0], 0.0, pos[2]])
        # frame i of the trajectory condition is the root at frame i: the
        # current position first, then all but the last predicted waypoint
        traj_canon = np.vstack([pos - offset, traj.positions()[:-1] - offset])
        traj_conf = np.concatenate([[1.0], traj.confidences()[:-1]])
        goal_feat = encode_goal(
            (seg_goal - offset).astype(np.float32), bundle.encoders
        )
        cond = assemble_condition_vector(
            scene.vector,
            traj_canon,
            traj_conf,
            project_text(text, bundle.encoders),
            goal_feat.vector,
            weights,
        )
        prev_two = None
        if prev_tail is not None:
            prev_two = prev_tail - offset
        sampled = sample_segment(
            bundle.denoiser,
            schedule,
            cond,
            np.asarray(prime, dtype=np.float64),
            prev_two=prev_two,
            seed=config.seed * 1000 + si,
        )
        seg_motion = sampled + offset

        if prev_tail is None:
            motion_parts.append(seg_motion)
        else:
            motion_parts.append(seg_motion[STITCH_FRAMES:])
        segments.append(traj)
        diagnostics.append(
            {
                "segment": si,
                "frame_offset": frame_offset,
                "goal": [float(v) for v in seg_goal],
                "prime_source": prime_source,
                "condition_weights": {
                    "scene": float(weights.scene),
                    "trajectory": float(weights.trajectory),
                    "text": float(weights.text),
                    "goal": float(weights.goal),
                },
                "local_voxels_changed": int(changed_voxels),
            }
        )

        prev_tail = seg_motion[-STITCH_FRAMES:].copy()
        new_pos = seg_motion[-1, PELVIS, :].copy()
        disp = new_pos - pos
        if np.linalg.norm(disp[[0, 2]]) > 1e-6:
            yaw = heading_from_displacement(disp, yaw)
        pos = new_pos
        # the next segment's first two frames overlap this segment's tail
        frame_offset += frames - STITCH_FRAMES
        if (
            not queue
            and extra < config.max_extra_segments
            and np.linalg.norm(pos - goal) > config.arrival_tolerance
        ):
            queue.append(goal.copy())
            extra += 1
    motion = np.concatenate(motion_parts, axis=0)
    return GenerationResult(motion=motion, segments=segments, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Scenario evaluation
# ---------------------------------------------------------------------------

def evaluate_motion(
    motion: np.ndarray,
    timeline: SceneTimeline,
    start,
    goal,
    config: RunConfig = RunConfig(),
) -> EvalReport:
    """Score a motion against the replanning oracle and the scene."""
    motion = np.asarray(motion, dtype=np.float64)
    frames = len(motion)
    reference = oracle_navigator(
        timeline, start, goal, frames,
        speed=config.speed, fps=config.fps,
        inflate_radius=config.inflate_radius, height_band=config.height_band,
    ).positions()
    root = motion[:, PELVIS, :]
    pen = penetration(motion, timeline)
    return EvalReport(
        traj_sim=traj_similarity(root, reference, tau=0.5),
        traj_err=traj_err(root, reference),
        goal_err=float(np.linalg.norm(root[-1] - np.asarray(goal, dtype=np.float64))),
        pene_value=pen.value,
        pene_rate=pen.rate,
        pene_mean=pen.mean,
        pene_max=float(pen.max),
        foot_skating=foot_skating(motion, fps=config.fps),
    )


def run_scenario(
    bundle: ModelBundle,
    memory: MemoryStore | None,
    scenario,
    base_dir,
    config: RunConfig = RunConfig(),
) -> tuple[GenerationResult, EvalReport]:
    timeline = scenario.timeline(base_dir)
    result = generate_sequence(
        bundle, memory, timeline, scenario.prompt,
        scenario.start, scenario.goal, config,
    )
    report = evaluate_motion(
        result.motion, timeline, scenario.start, scenario.goal, config
    )
    return result, report


def aggregate_reports(reports: list[EvalReport]) -> dict:
    if not reports:
        raise InputError("no reports to aggregate")
    keys = (
        "traj_sim", "traj_err", "goal_err",
        "pene_value", "pene_rate", "pene_mean", "pene_max", "foot_skating",
    )
    return {
        k: float(np.mean([getattr(r, k) for r in reports])) for k in keys
    }


def run_benchmark(
    bundle: ModelBundle,
    memory: MemoryStore | None,
    scenarios,
    base_dir,
    config: RunConfig = RunConfig(),
    variants: dict[str, RunConfig] | None = None,
) -> dict:
    """Evaluate every scenario under one or more configurations.

    Returns {variant: {"per_scenario": [...], "aggregate": {...}}}.
    """
    if variants is None:
        variants = {"full": config}
    results: dict[str, dict] = {}
    for name, cfg in variants.items():
        reports = []
        per_scenario = []
        for scenario in scenarios:
            _, report = run_scenario(bundle, memory, scenario, base_dir, cfg)
            reports.append(report)
            per_scenario.append({"scenario": scenario.id, **report.to_json()})
        results[name] = {
            "per_scenario": per_scenario,
            "aggregate": aggregate_reports(reports),
        }
    return results


def write_motion_jsonl(motion: np.ndarray, path) -> None:
    """One JSON object per line: {"t": i, "joints": [[x, y, z], ...]}."""
    motion = np.asarray(motion, dtype=np.float64)
    with open(path, "w") as fh:
        for i, frame in enumerate(motion):
            fh.write(
                json.dumps({"t": i, "joints": [[float(v) for v in j] for j in frame]})
            )
            fh.write("\n")


def read_motion_jsonl(path) -> np.ndarray:
    frames = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            frames.append(doc["joints"])
    if not frames:
        raise InputError(f"no frames in {path}")
    return np.asarray(frames, dtype=np.float64)


def write_benchmark_csv(results: dict, path) -> None:
    """Flat delimited summary: variant, scenario, then each metric."""
    import csv

    keys = (
        "traj_sim", "traj_err", "goal_err",
        "pene_value", "pene_rate", "pene_mean", "pene_max", "foot_skating",
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "scenario", *keys])
        for variant, block in results.items():
            for row in block["per_scenario"]:
                writer.writerow(
                    [variant, row["scenario"], *[f"{row[k]:.6f}" for k in keys]]
                )
            agg = block["aggregate"]
            writer.writerow(
                [variant, "mean", *[f"{agg[k]:.6f}" for k in keys]]
            )
