"""Procedural toy dataset and dynamic evaluation scenarios.

Scenes are rooms populated with axis-aligned furniture boxes; ground-truth
clips follow replanned shortest paths at walking speed with a sinusoidal
gait, plus sit / reach / drink variants.  Dynamic scenarios displace one
movable box at a change frame and export both voxelized states.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, NoPath, PlanningError
from .grids import (
    BoxScene,
    GridSpec,
    OccupancyGrid,
    SceneTimeline,
    inflate,
    load_grid,
    project_2d,
    save_grid,
)
from .navigation import (
    DEFAULT_FPS,
    DEFAULT_SPEED,
    heading_from_displacement,
    oracle_navigator,
    plan_global,
)
from .skeleton import PELVIS_HEIGHT, local_pose, pose_to_world

# Room layout constants: 6.4 m x 6.4 m footprint, 2.4 m tall, 0.1 m voxels.
ROOM_SIZE = 6.4
ROOM_HEIGHT = 2.4
VOXEL_SIZE = 0.1
ROOM_SPEC = GridSpec(
    origin=(0.0, 0.0, 0.0),
    voxel_size=VOXEL_SIZE,
    dims=(int(ROOM_SIZE / VOXEL_SIZE), int(ROOM_SIZE / VOXEL_SIZE), int(ROOM_HEIGHT / VOXEL_SIZE)),
)

GEN_INFLATE_RADIUS = 0.4  # generous clearance so oracle clips never penetrate
STRIDE_LENGTH = 0.66      # meters per half gait cycle
SEAT_HEIGHT = 0.45
SEAT_CLEARANCE = 0.04     # pelvis rests this far above the seat top

WALK_PROMPTS = (
    "a person walks to the {target}",
    "someone walks across the room to the {target}",
    "a person walks slowly toward the {target}",
    "walk over to the {target}",
)
SIT_PROMPTS = (
    "a person sits down on the {target}",
    "someone walks over and sits on the {target}",
)
REACH_PROMPTS = (
    "a person reaches for the {target}",
    "someone reaches up toward the {target}",
)
DRINK_PROMPTS = (
    "a person drinks water",
    "someone stands and drinks from a cup",
)


@dataclass
class ToyDatasetSpec:
    num_scenes: int = 8
    boxes_per_scene: tuple[int, int] = (2, 4)
    # walk is listed three times so locomotion dominates the clip mix; the
    # downstream scenarios are all navigation prompts
    actions: tuple[str, ...] = ("walk", "walk", "walk", "sit", "reach", "drink")
    frames_per_clip: int = 48
    clips_per_scene: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.num_scenes < 1 or self.clips_per_scene < 1 or self.frames_per_clip < 1:
            raise InputError("dataset counts must be at least 1")


@dataclass
class Scenario:
    """One dynamic evaluation task."""

    id: str
    scene_begin: str                      # path to .grid, relative to the file
    scene_changes: list[tuple[int, str]]  # (frame, grid path)
    prompt: str
    start: tuple[float, float, float]
    goal: tuple[float, float, float]

    def __post_init__(self):
        frames = [f for f, _ in self.scene_changes]
        if any(f <= 0 for f in frames) or any(
            b <= a for a, b in zip(frames, frames[1:])
        ):
            raise InputError("change frames must be strictly increasing and > 0")

    def save(self, path: Path) -> None:
        doc = asdict(self)
        doc["scene_changes"] = [[f, p] for f, p in self.scene_changes]
        Path(path).write_text(json.dumps(doc, indent=2))

    @staticmethod
    def load(path) -> "Scenario":
        doc = json.loads(Path(path).read_text())
        doc["scene_changes"] = [(int(f), str(p)) for f, p in doc["scene_changes"]]
        doc["start"] = tuple(doc["start"])
        doc["goal"] = tuple(doc["goal"])
        return Scenario(**doc)

    def timeline(self, base_dir) -> SceneTimeline:
        base = Path(base_dir)
        states = [(0, load_grid(base / self.scene_begin))]
        for frame, rel in self.scene_changes:
            states.append((frame, load_grid(base / rel)))
        return SceneTimeline(states=tuple(states))


# ---------------------------------------------------------------------------
# Scene synthesis
# ---------------------------------------------------------------------------

def _boxes_overlap(a_min, a_max, b_min, b_max, margin: float = 0.0) -> bool:
    return all(
        a_min[i] - margin < b_max[i] and b_min[i] - margin < a_max[i]
        for i in (0, 2)
    )


def _place_box(rng, boxes, footprint, height, margin=0.7, max_tries=60):
    """Random non-overlapping axis-aligned box; None if placement fails."""
    w, d = footprint
    for _ in range(max_tries):
        x = rng.uniform(0.8, ROOM_SIZE - 0.8 - w)
        z = rng.uniform(0.8, ROOM_SIZE - 0.8 - d)
        lo = [x, 0.0, z]
        hi = [x + w, height, z + d]
        if not any(
            _boxes_overlap(lo, hi, b["min"], b["max"], margin) for b in boxes
        ):
            return lo, hi
    return None


def make_scene(rng: np.random.Generator, spec: ToyDatasetSpec) -> BoxScene:
    """One furnished room: tall obstacles, one movable cabinet, one seat,
    one shelf target."""
    boxes: list[dict] = []
    lo, hi = _place_box(rng, boxes, (0.7, 0.7), 1.8)
    boxes.append({"min": lo, "max": hi, "tag": "cabinet", "movable": True})
    placement = _place_box(rng, boxes, (0.5, 0.5), 1.7)
    if placement:
        boxes.append({"min": placement[0], "max": placement[1], "tag": "shelf"})
    placement = _place_box(rng, boxes, (0.45, 0.45), SEAT_HEIGHT)
    if placement:
        boxes.append({"min": placement[0], "max": placement[1], "tag": "seat"})
    n_extra = int(rng.integers(spec.boxes_per_scene[0], spec.boxes_per_scene[1] + 1)) - 3
    for _ in range(max(n_extra, 0)):
        placement = _place_box(rng, boxes, (0.6, 0.6), float(rng.uniform(1.5, 1.9)))
        if placement:
            boxes.append({"min": placement[0], "max": placement[1], "tag": "pillar"})
    return BoxScene(spec=ROOM_SPEC, boxes=boxes)


# ---------------------------------------------------------------------------
# Clip synthesis
# ---------------------------------------------------------------------------

def _free_point(rng, nav, max_tries=200):
    nx, nz = nav.spec.dims
    for _ in range(max_tries):
        ix = int(rng.integers(0, nx))
        iz = int(rng.integers(0, nz))
        if not nav.cells[ix, iz]:
            return np.array(nav.cell_center(ix, iz))
    raise NoPath("no free cell found")


def motion_from_trajectory(
    roots: np.ndarray, action: str, progress: np.ndarray | None = None
) -> np.ndarray:
    """Skin a root trajectory with the procedural skeleton.

    ``roots`` is (F, 3) pelvis positions; gait phase advances with distance
    traveled; yaw follows the displacement direction.
    """
    frames = len(roots)
    out = np.zeros((frames, 22, 3))
    yaw = 0.0
    if frames > 1:
        yaw = heading_from_displacement(roots[1] - roots[0], 0.0)
    phase = 0.0
    dist = 0.0
    for i in range(frames):
        if i > 0:
            step = roots[i] - roots[i - 1]
            step_len = float(np.hypot(step[0], step[2]))
            dist += step_len
            if step_len > 1e-6:
                yaw = heading_from_displacement(step, yaw)
            phase = 2.0 * math.pi * dist / STRIDE_LENGTH
        moving = i > 0 and float(np.hypot(*(roots[i] - roots[i - 1])[[0, 2]])) > 1e-5
        frame_action = action
        prog = 0.0
        if action == "walk":
            frame_action = "walk" if moving else "stand"
        elif progress is not None:
            prog = float(progress[i])
            if prog <= 0.0:
                frame_action = "walk" if moving else "stand"
        pose = local_pose(frame_action, phase, prog)
        root = roots[i].copy()
        if frame_action == "walk":
            root[1] += 0.015 * math.sin(2.0 * phase)
        out[i] = pose_to_world(pose, root, yaw)
    return out


def _walk_clip(rng, timeline, nav, frames):
    """Start/goal pair with a path long enough to fill the clip."""
    for _ in range(40):
        start_xz = _free_point(rng, nav)
        goal_xz = _free_point(rng, nav)
        try:
            plan = plan_global(nav, start_xz, goal_xz)
        except PlanningError:
            continue
        arc = plan.arc_lengths()[-1]
        max_reach = frames * DEFAULT_SPEED / DEFAULT_FPS
        if 0.6 * max_reach <= arc <= 1.05 * max_reach:
            start = np.array([start_xz[0], PELVIS_HEIGHT, start_xz[1]])
            goal = np.array([goal_xz[0], PELVIS_HEIGHT, goal_xz[1]])
            seg = oracle_navigator(
                timeline, start, goal, frames, inflate_radius=GEN_INFLATE_RADIUS
            )
            roots = np.vstack([[start], seg.positions()])[:frames]
            return roots, goal
    return None


def _approach_clip(rng, scene: BoxScene, nav, tag: str, standoff: float):
    """A start pose facing box ``tag`` from ``standoff`` meters, with the
    straight approach corridor free."""
    targets = [b for b in scene.boxes if b.get("tag") == tag]
    if not targets:
        return None
    box = targets[0]
    cx = 0.5 * (box["min"][0] + box["max"][0])
    cz = 0.5 * (box["min"][2] + box["max"][2])
    half = 0.5 * (box["max"][0] - box["min"][0])
    for _ in range(40):
        ang = rng.uniform(0.0, 2.0 * math.pi)
        px = cx + (half + standoff) * math.cos(ang)
        pz = cz + (half + standoff) * math.sin(ang)
        cell = nav.point_to_cell(px, pz)
        if cell is None or nav.cells[cell]:
            continue
        return np.array([px, pz]), np.array([cx, cz]), box
    return None


def generate_toy_dataset(spec: ToyDatasetSpec, out_dir) -> dict:
    """Write scenes, ground-truth motions, prompts, and the manifest.

    Fully reproducible from ``spec.seed``; walk clips are verified to have
    zero penetration against their own scene.
    """
    from .metrics import penetration  # local import to avoid a cycle

    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "motions").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    frames = spec.frames_per_clip

    scenes = []
    clips = []
    for si in range(spec.num_scenes):
        scene = make_scene(rng, spec)
        scene_id = f"scene_{si:03d}"
        scene.save(out / "scenes" / f"{scene_id}.json")
        grid = scene.voxelize()
        save_grid(grid, out / "scenes" / f"{scene_id}.grid")
        scenes.append(
            {
                "id": scene_id,
                "json": f"scenes/{scene_id}.json",
                "grid": f"scenes/{scene_id}.grid",
            }
        )
        timeline = SceneTimeline.static(grid)
        nav = inflate(project_2d(grid), GEN_INFLATE_RADIUS)

        ci = 0
        attempts = 0
        while ci < spec.clips_per_scene and attempts < spec.clips_per_scene * 8:
            attempts += 1
            action = spec.actions[int(rng.integers(0, len(spec.actions)))]
            clip = _make_clip(rng, scene, timeline, nav, action, frames)
            if clip is None:
                continue
            motion, prompt, start, goal = clip
            if action == "walk":
                pen = penetration(motion, timeline)
                if pen.max > 0:
                    continue
            clip_id = f"{scene_id}_clip_{ci:03d}"
            np.save(out / "motions" / f"{clip_id}.npy", motion.astype(np.float32))
            clips.append(
                {
                    "id": clip_id,
                    "scene_id": scene_id,
                    "action": action,
                    "prompt": prompt,
                    "start": [float(v) for v in start],
                    "goal": [float(v) for v in goal],
                    "motion_file": f"motions/{clip_id}.npy",
                    "frames": frames,
                }
            )
            ci += 1

    manifest = {"spec": asdict(spec), "scenes": scenes, "clips": clips}
    manifest["spec"]["boxes_per_scene"] = list(spec.boxes_per_scene)
    manifest["spec"]["actions"] = list(spec.actions)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def _make_clip(rng, scene, timeline, nav, action, frames):
    if action == "walk":
        result = _walk_clip(rng, timeline, nav, frames)
        if result is None:
            return None
        roots, goal = result
        motion = motion_from_trajectory(roots, "walk")
        target = "goal" if rng.random() < 0.5 else "door"
        prompt = WALK_PROMPTS[int(rng.integers(0, len(WALK_PROMPTS)))].format(target=target)
        return motion, prompt, roots[0], goal

    if action == "sit":
        approach = _approach_clip(rng, scene, nav, "seat", standoff=1.1)
        if approach is None:
            return None
        start_xz, seat_xz, box = approach
        seat_top = box["max"][1]
        pre = seat_xz + (start_xz - seat_xz) / np.linalg.norm(start_xz - seat_xz) * 0.30
        half = frames // 2
        roots = np.zeros((frames, 3))
        progress = np.zeros(frames)
        for i in range(half):
            t = i / max(half - 1, 1)
            xz = (1 - t) * start_xz + t * pre
            roots[i] = [xz[0], PELVIS_HEIGHT, xz[1]]
        for i in range(half, frames):
            t = (i - half) / max(frames - half - 1, 1)
            xz = (1 - t) * pre + t * seat_xz
            y = (1 - t) * PELVIS_HEIGHT + t * (seat_top + SEAT_CLEARANCE)
            roots[i] = [xz[0], y, xz[1]]
            progress[i] = t
        motion = motion_from_trajectory(roots, "sit", progress)
        prompt = SIT_PROMPTS[int(rng.integers(0, len(SIT_PROMPTS)))].format(target="seat")
        goal = np.array([seat_xz[0], seat_top + SEAT_CLEARANCE, seat_xz[1]])
        return motion, prompt, roots[0], goal

    if action in ("reach", "drink"):
        approach = _approach_clip(rng, scene, nav, "shelf", standoff=0.8)
        if approach is None:
            return None
        start_xz, _, _ = approach
        roots = np.repeat(
            np.array([[start_xz[0], PELVIS_HEIGHT, start_xz[1]]]), frames, axis=0
        )
        ramp = np.clip((np.arange(frames) - 12) / 24.0, 0.0, 1.0)
        motion = motion_from_trajectory(roots, action, ramp)
        prompts = REACH_PROMPTS if action == "reach" else DRINK_PROMPTS
        prompt = prompts[int(rng.integers(0, len(prompts)))].format(target="shelf")
        return motion, prompt, roots[0], roots[-1]

    return None


# ---------------------------------------------------------------------------
# Dynamic scenarios
# ---------------------------------------------------------------------------

def _segment_near_box(path_xz: np.ndarray, lo, hi, margin: float) -> bool:
    """Does the polyline pass within ``margin`` of the box footprint?"""
    px = np.clip(path_xz[:, 0], lo[0] - margin, hi[0] + margin)
    pz = np.clip(path_xz[:, 1], lo[2] - margin, hi[2] + margin)
    inside = (
        (path_xz[:, 0] >= lo[0] - margin)
        & (path_xz[:, 0] <= hi[0] + margin)
        & (path_xz[:, 1] >= lo[2] - margin)
        & (path_xz[:, 1] <= hi[2] + margin)
    )
    del px, pz
    return bool(inside.any())


def make_dyn_scenarios(dataset_dir, n: int, seed: int, out_dir, inflate_radius: float = 0.25) -> list[Scenario]:
    """Build ``n`` dynamic scenarios from the dataset's scenes.

    Each scenario displaces one movable box at a change frame in [40, 100];
    displacements that land the box near the initially planned path are
    preferred so the change actually matters.
    """
    dataset_dir = Path(dataset_dir)
    out = Path(out_dir)
    (out / "grids").mkdir(parents=True, exist_ok=True)
    manifest = json.loads((dataset_dir / "manifest.json").read_text())
    rng = np.random.default_rng(seed)

    scenarios: list[Scenario] = []
    scene_docs = [
        BoxScene.load(dataset_dir / s["json"]) for s in manifest["scenes"]
    ]
    tries = 0
    while len(scenarios) < n and tries < n * 30:
        tries += 1
        scene = scene_docs[int(rng.integers(0, len(scene_docs)))]
        movable = [b for b in scene.boxes if b.get("movable")]
        if not movable:
            continue
        box = movable[0]
        grid0 = scene.voxelize()
        nav0 = inflate(project_2d(grid0), inflate_radius)

        # start/goal reachable in the initial scene, path long enough for
        # several segments
        try:
            start_xz = _free_point(rng, nav0)
            goal_xz = _free_point(rng, nav0)
            plan = plan_global(nav0, start_xz, goal_xz)
        except PlanningError:
            continue
        arc = plan.arc_lengths()[-1]
        if not 3.6 <= arc <= 5.8:
            continue

        candidate = _displace_box(rng, scene, box, plan, nav0, start_xz, goal_xz, inflate_radius)
        if candidate is None:
            continue
        moved_scene, change_frame = candidate

        sid = f"dyn_{len(scenarios):03d}"
        begin_rel = f"grids/{sid}_begin.grid"
        change_rel = f"grids/{sid}_change.grid"
        save_grid(grid0, out / begin_rel)
        save_grid(moved_scene.voxelize(), out / change_rel)
        scenario = Scenario(
            id=sid,
            scene_begin=begin_rel,
            scene_changes=[(change_frame, change_rel)],
            prompt="a person walks to the goal",
            start=(float(start_xz[0]), PELVIS_HEIGHT, float(start_xz[1])),
            goal=(float(goal_xz[0]), PELVIS_HEIGHT, float(goal_xz[1])),
        )
        scenario.save(out / f"{sid}.json")
        scenarios.append(scenario)
    return scenarios


def _displace_box(rng, scene, box, plan, nav0, start_xz, goal_xz, inflate_radius):
    """Candidate displacement: collision-free, keeps start/goal reachable in
    the changed scene, preferably blocking the initial path."""
    lo = np.array(box["min"])
    hi = np.array(box["max"])
    others = [b for b in scene.boxes if b is not box]
    preferred = None
    fallback = None
    for _ in range(60):
        ang = rng.uniform(0.0, 2.0 * math.pi)
        mag = rng.uniform(0.6, 1.6)
        off = np.array([mag * math.cos(ang), 0.0, mag * math.sin(ang)])
        nlo, nhi = lo + off, hi + off
        if nlo[0] < 0.2 or nlo[2] < 0.2 or nhi[0] > ROOM_SIZE - 0.2 or nhi[2] > ROOM_SIZE - 0.2:
            continue
        if any(_boxes_overlap(nlo, nhi, b["min"], b["max"], 0.15) for b in others):
            continue
        # keep the endpoints clear of the moved footprint
        if _segment_near_box(np.array([start_xz, goal_xz]), nlo, nhi, inflate_radius + 0.1):
            continue
        # the box must land ahead of the walker, never on top of it: keep
        # the stretch of path already covered by the change frame (plus a
        # short reaction distance) clear of the moved footprint
        change_frame = int(rng.integers(40, 101))
        step = DEFAULT_SPEED / DEFAULT_FPS
        arcs = plan.arc_lengths()
        covered = plan.world_points[arcs <= change_frame * step + 0.6]
        if len(covered) and _segment_near_box(covered, nlo, nhi, inflate_radius + 0.1):
            continue
        moved = BoxScene(
            spec=scene.spec,
            boxes=[
                dict(b) if b is not box else {**box, "min": list(nlo), "max": list(nhi)}
                for b in scene.boxes
            ],
        )
        nav1 = inflate(project_2d(moved.voxelize()), inflate_radius)
        try:
            plan_global(nav1, start_xz, goal_xz)
        except PlanningError:
            continue
        candidate = (moved, change_frame)
        ahead = plan.world_points[arcs > change_frame * step + 0.6]
        if len(ahead) and _segment_near_box(ahead, nlo, nhi, inflate_radius):
            preferred = candidate
            break
        if fallback is None:
            fallback = candidate
    return preferred or fallback
