"""Global A* planning on the inflated X-Z grid, uniform keypoint selection,
the learned step-wise navigator, and a deterministic replanning oracle.

The learned navigator consumes character-local features and emits the next
position together with a confidence score; the oracle follows replanned A*
paths at a fixed walking speed and is used both as a baseline and as the
teacher for navigator training.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .encoders import (
    FEATURE_DIM,
    FeatureEncoders,
    GoalFeature,
    SceneDelta,
    SceneFeature,
    TextEmbedding,
    encode_goal,
    encode_local_scene,
    project_text,
    step_embedding,
)
from .errors import InputError, NoPath, NumericError, UnreachableEndpoint
from .grids import (
    DEFAULT_HEIGHT_BAND,
    DEFAULT_INFLATE_RADIUS,
    NavGrid2D,
    SceneTimeline,
    extract_local,
    grid_at,
    inflate,
    project_2d,
)

SQRT2 = math.sqrt(2.0)

DEFAULT_SPEED = 1.2  # m/s, typical walking pace
DEFAULT_FPS = 30
SEGMENT_FRAMES = 48


@dataclass(frozen=True)
class Waypoint:
    position: np.ndarray  # (3,)
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError("confidence must lie in [0, 1]")


@dataclass
class TrajectorySegment:
    waypoints: list[Waypoint]
    frame_offset: int

    def positions(self) -> np.ndarray:
        return np.stack([w.position for w in self.waypoints]).astype(np.float64)

    def confidences(self) -> np.ndarray:
        return np.array([w.confidence for w in self.waypoints], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.waypoints)


@dataclass
class PathPlan:
    cells: list[tuple[int, int]]
    world_points: np.ndarray  # (n, 2) x/z cell centers
    cost: float  # in cell units: 1 per axis move, sqrt(2) per diagonal
    keypoints: np.ndarray | None = field(default=None)

    def arc_lengths(self) -> np.ndarray:
        """Cumulative arc length along world_points, in meters."""
        if len(self.world_points) < 2:
            return np.zeros(len(self.world_points))
        deltas = np.linalg.norm(np.diff(self.world_points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(deltas)])


_NEIGHBORS = [
    (1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
    (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2),
]


def _octile(a: tuple[int, int], b: tuple[int, int]) -> float:
    dx = abs(a[0] - b[0])
    dz = abs(a[1] - b[1])
    return max(dx, dz) + (SQRT2 - 1.0) * min(dx, dz)


def plan_global(nav: NavGrid2D, start, goal) -> PathPlan:
    """Minimal-cost 8-connected A* path on the inflated grid.

    Ties are broken by smaller heuristic, then lexicographic cell index,
    making the returned path deterministic.
    """
    s = nav.point_to_cell(float(start[0]), float(start[1]))
    g = nav.point_to_cell(float(goal[0]), float(goal[1]))
    if s is None or g is None:
        raise UnreachableEndpoint("start or goal lies outside the grid")
    if nav.cells[s] or nav.cells[g]:
        raise UnreachableEndpoint("start or goal cell is blocked after inflation")
    if s == g:
        return PathPlan(cells=[s], world_points=np.array([nav.cell_center(*s)]), cost=0.0)

    nx, nz = nav.spec.dims
    blocked = nav.cells
    g_cost: dict[tuple[int, int], float] = {s: 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    h0 = _octile(s, g)
    frontier: list[tuple[float, float, int, int]] = [(h0, h0, s[0], s[1])]
    closed: set[tuple[int, int]] = set()

    while frontier:
        f, h, cx, cz = heapq.heappop(frontier)
        cur = (cx, cz)
        if cur in closed:
            continue
        closed.add(cur)
        if cur == g:
            cells = [cur]
            while cur in parent:
                cur = parent[cur]
                cells.append(cur)
            cells.reverse()
            pts = np.array([nav.cell_center(ix, iz) for ix, iz in cells])
            return PathPlan(cells=cells, world_points=pts, cost=g_cost[g])
        base = g_cost[cur]
        for dx, dz, step in _NEIGHBORS:
            n = (cx + dx, cz + dz)
            if not (0 <= n[0] < nx and 0 <= n[1] < nz) or blocked[n]:
                continue
            cand = base + step
            if cand < g_cost.get(n, math.inf) - 1e-12:
                g_cost[n] = cand
                parent[n] = cur
                hn = _octile(n, g)
                heapq.heappush(frontier, (cand + hn, hn, n[0], n[1]))
    raise NoPath("no path between start and goal")


def _interp_along(points: np.ndarray, cum: np.ndarray, s: float) -> np.ndarray:
    """Point at arc length ``s`` along the polyline ``points``."""
    total = cum[-1]
    if total == 0.0:
        return points[0].astype(np.float64)
    s = min(max(s, 0.0), total)
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(i, len(points) - 2)
    seg = cum[i + 1] - cum[i]
    t = 0.0 if seg == 0.0 else (s - cum[i]) / seg
    return (1.0 - t) * points[i] + t * points[i + 1]


def select_keypoints(plan: PathPlan, k: int, ground_y: float = 0.0) -> np.ndarray:
    """k goals at arc-length fractions i/k along the path; the last keypoint
    is the path endpoint."""
    if k < 1:
        raise InputError("k must be at least 1")
    if len(plan.world_points) == 0:
        raise InputError("path is empty")
    cum = plan.arc_lengths()
    total = cum[-1]
    out = np.zeros((k, 3), dtype=np.float64)
    for i in range(1, k + 1):
        xz = _interp_along(plan.world_points, cum, total * i / k)
        out[i - 1] = [xz[0], ground_y, xz[1]]
    return out


# ---------------------------------------------------------------------------
# Learned step-wise navigator
# ---------------------------------------------------------------------------

class NavigatorParams(nn.Module):
    """4-layer decoder over concatenated 32-wide features with position and
    confidence heads.  Owns the shared feature encoders."""

    def __init__(self, hidden: int = 128):
        super().__init__()
        self.encoders = FeatureEncoders()
        in_dim = 5 * FEATURE_DIM  # position, text, goal, scene, scene-delta
        self.decoder = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
        )
        self.pos_head = nn.Linear(hidden, 3)
        self.conf_head = nn.Linear(hidden, 1)

    def forward(self, pos, step_emb, text_f, goal_f, scene_f, delta_f):
        """All inputs are torch tensors; supports batched leading dims."""
        pos_f = self.encoders.position(pos, step_emb)
        h = self.decoder(torch.cat([pos_f, text_f, goal_f, scene_f, delta_f], dim=-1))
        return self.pos_head(h), self.conf_head(h).squeeze(-1)


def predict_step(
    params: NavigatorParams,
    position,
    text: TextEmbedding,
    goal: GoalFeature,
    scene: SceneFeature,
    delta: SceneDelta,
    step: int,
) -> Waypoint:
    """One decoder step: next position plus sigmoid confidence."""
    pos = np.asarray(position, dtype=np.float64)
    feats = np.concatenate([pos, text.vector, goal.vector, scene.vector, delta.vector])
    if not np.all(np.isfinite(feats)):
        raise NumericError("non-finite navigator inputs")
    with torch.no_grad():
        text_f = params.encoders.text(torch.from_numpy(text.vector))
        out_pos, logit = params(
            torch.as_tensor(pos, dtype=torch.float32),
            torch.from_numpy(step_embedding(step)),
            text_f,
            torch.from_numpy(goal.vector),
            torch.from_numpy(scene.vector),
            torch.from_numpy(delta.vector),
        )
    p = out_pos.numpy().astype(np.float64)
    if not np.all(np.isfinite(p)):
        raise NumericError("non-finite navigator output")
    conf = float(torch.sigmoid(logit).item())
    return Waypoint(position=p, confidence=conf)


def heading_from_displacement(disp, fallback: float = 0.0) -> float:
    """Yaw of the last nonzero horizontal displacement (0 = facing +x)."""
    dx, dz = float(disp[0]), float(disp[2])
    if math.hypot(dx, dz) < 1e-9:
        return fallback
    # Rotation convention matches extract_local: local +x maps to world
    # (cos yaw, -sin yaw) in the (x, z) plane.
    return math.atan2(-dz, dx)


def rollout(
    params: NavigatorParams,
    start,
    segment_goal,
    timeline: SceneTimeline,
    text: TextEmbedding,
    frames: int = SEGMENT_FRAMES,
    frame_offset: int = 0,
    initial_yaw: float | None = None,
) -> TrajectorySegment:
    """Autoregressive navigator rollout with per-step local-scene refresh.

    Positions handed to the decoder are expressed relative to the segment
    start (horizontal shift only) so the learned map is translation
    invariant; emitted waypoints are world-frame.
    """
    if frames < 1:
        raise InputError("frames must be at least 1")
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(segment_goal, dtype=np.float64)
    offset = np.array([start[0], 0.0, start[2]])

    if initial_yaw is None:
        initial_yaw = heading_from_displacement(goal - start)
    yaw = initial_yaw

    goal_feat = encode_goal((goal - offset).astype(np.float32), params.encoders)
    pos = start.copy()
    prev_scene: SceneFeature | None = None
    waypoints: list[Waypoint] = []

    for i in range(frames):
        grid = grid_at(timeline, frame_offset + i)
        local = extract_local(grid, pos, yaw)
        scene = encode_local_scene(local, params.encoders)
        if prev_scene is None:
            delta = SceneDelta(vector=np.zeros_like(scene.vector))
        else:
            delta = SceneDelta(vector=scene.vector - prev_scene.vector)
        prev_scene = scene
        wp = predict_step(params, pos - offset, text, goal_feat, scene, delta, i)
        new_pos = wp.position + offset
        if np.linalg.norm((new_pos - pos)[[0, 2]]) > 1e-6:
            yaw = heading_from_displacement(new_pos - pos, yaw)
        pos = new_pos
        waypoints.append(Waypoint(position=pos.copy(), confidence=wp.confidence))
    return TrajectorySegment(waypoints=waypoints, frame_offset=frame_offset)


def confidence_target(traj_gt, traj_pred) -> np.ndarray:
    """Soft per-step confidence target exp(-error); 1 at zero error."""
    gt = np.asarray(traj_gt, dtype=np.float64)
    pred = np.asarray(traj_pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise InputError("trajectory length mismatch")
    err = np.linalg.norm(gt - pred, axis=-1)
    return np.exp(-err)


def _bce(p: np.ndarray, y: np.ndarray) -> float:
    eps = 1e-7
    p = np.clip(p, eps, 1.0 - eps)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def nav_loss(pred: TrajectorySegment | np.ndarray, gt, conf_pred) -> tuple[float, float]:
    """Trajectory MSE plus confidence BCE against the soft target."""
    pred_pos = pred.positions() if isinstance(pred, TrajectorySegment) else np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    conf_pred = np.asarray(conf_pred, dtype=np.float64)
    if pred_pos.shape != gt.shape or conf_pred.shape[0] != pred_pos.shape[0]:
        raise InputError("shape mismatch in nav_loss")
    l_traj = float(np.mean(np.sum((pred_pos - gt) ** 2, axis=-1)))
    target = confidence_target(gt, pred_pos)
    l_conf = _bce(conf_pred, target)
    return l_traj, l_conf


# ---------------------------------------------------------------------------
# Deterministic replanning oracle
# ---------------------------------------------------------------------------

def _nearest_free_cell(nav: NavGrid2D, cell: tuple[int, int]) -> tuple[int, int]:
    """Closest free cell by breadth-first ring search (oracle recovery when a
    scene change lands on the agent's cell)."""
    if not nav.cells[cell]:
        return cell
    nx, nz = nav.spec.dims
    for r in range(1, max(nx, nz)):
        candidates = []
        for dx in range(-r, r + 1):
            for dz in range(-r, r + 1):
                if max(abs(dx), abs(dz)) != r:
                    continue
                n = (cell[0] + dx, cell[1] + dz)
                if 0 <= n[0] < nx and 0 <= n[1] < nz and not nav.cells[n]:
                    candidates.append((dx * dx + dz * dz, n))
        if candidates:
            return min(candidates)[1]
    raise NoPath("no free cell in grid")


def oracle_navigator(
    timeline: SceneTimeline,
    start,
    goal,
    frames: int,
    *,
    speed: float = DEFAULT_SPEED,
    fps: int = DEFAULT_FPS,
    inflate_radius: float = DEFAULT_INFLATE_RADIUS,
    height_band=DEFAULT_HEIGHT_BAND,
    frame_offset: int = 0,
) -> TrajectorySegment:
    """Follow replanned A* paths at fixed speed with confidence 1.

    Replans whenever the active grid changes; vertical coordinate is
    interpolated from start to goal by the fraction of path traversed.
    """
    if frames < 1:
        raise InputError("frames must be at least 1")
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)

    def planned_path(grid, from_xz):
        nav = inflate(project_2d(grid, height_band), inflate_radius)
        s_cell = nav.point_to_cell(from_xz[0], from_xz[1])
        if s_cell is None:
            raise UnreachableEndpoint("position outside grid")
        s_cell = _nearest_free_cell(nav, s_cell)
        plan = plan_global(nav, nav.cell_center(*s_cell), (goal[0], goal[2]))
        pts = plan.world_points
        # route from the actual position, then via cell centers
        pts = np.vstack([[from_xz], pts])
        cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        return pts, cum

    pos_xz = np.array([start[0], start[2]])
    current_grid = grid_at(timeline, frame_offset)
    pts, cum = planned_path(current_grid, pos_xz)
    s = 0.0
    step = speed / fps

    total_hint = max(cum[-1], 1e-9)
    travelled = 0.0
    waypoints: list[Waypoint] = []
    for i in range(frames):
        g = grid_at(timeline, frame_offset + i)
        if g is not current_grid:
            current_grid = g
            pts, cum = planned_path(current_grid, pos_xz)
            total_hint = max(travelled + cum[-1], 1e-9)
            s = 0.0
        advance = min(step, max(cum[-1] - s, 0.0))
        s += advance
        travelled += advance
        pos_xz = _interp_along(pts, cum, s)
        frac = min(travelled / total_hint, 1.0)
        y = (1.0 - frac) * start[1] + frac * goal[1]
        waypoints.append(
            Waypoint(position=np.array([pos_xz[0], y, pos_xz[1]]), confidence=1.0)
        )
    return TrajectorySegment(waypoints=waypoints, frame_offset=frame_offset)
