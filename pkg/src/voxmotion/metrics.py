"""Quantitative evaluation: trajectory metrics, the four penetration
metrics over deterministic body sample points, MPJPE, foot skating,
diversity, and a clearly labeled Frechet proxy on kinematic features.

Body "vertices" are a fixed 253-point sampling of the 22-joint skeleton:
the joints themselves, 3 interpolated points per bone, and an 8-point
capsule ring of radius 0.05 m at each bone midpoint.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

from .errors import InputError
from .grids import SceneTimeline, grid_at, query_occupied_many
from .skeleton import FOOT_JOINTS, NUM_JOINTS, PARENTS, PELVIS

BONES = tuple((PARENTS[j], j) for j in range(NUM_JOINTS) if PARENTS[j] >= 0)
BONE_FRACTIONS = (0.25, 0.5, 0.75)
RING_POINTS = 8
CAPSULE_RADIUS = 0.05
BODY_SAMPLE_COUNT = NUM_JOINTS + len(BONES) * (len(BONE_FRACTIONS) + RING_POINTS)

DEFAULT_TRAJ_TAU = 0.1   # meters, trajectory-similarity threshold
FOOT_CONTACT_HEIGHT = 0.05
PENETRATION_SCALE = 100.0
DEFAULT_FPS = 30


@dataclass
class EvalReport:
    """Per-scenario metric record; batch-level fields may stay None."""

    traj_sim: float
    traj_err: float
    goal_err: float
    pene_value: float
    pene_rate: float
    pene_mean: float
    pene_max: float
    foot_skating: float
    mpjpe: float | None = None
    diversity: float | None = None
    fid_proxy: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Trajectory metrics
# ---------------------------------------------------------------------------

def _check_paired(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim < 1 or len(pred) < 1:
        raise InputError("trajectories must be equal-length and non-empty")
    return pred, gt


def traj_err(pred, gt) -> float:
    """Mean per-frame Euclidean root error."""
    pred, gt = _check_paired(pred, gt)
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)))


def goal_err(pred, gt) -> float:
    """Last-frame Euclidean root error."""
    pred, gt = _check_paired(pred, gt)
    return float(np.linalg.norm(pred[-1] - gt[-1]))


def traj_similarity(pred, gt, tau: float = DEFAULT_TRAJ_TAU) -> float:
    """Fraction of frames with positional error below ``tau``."""
    if tau <= 0:
        raise InputError("tau must be positive")
    pred, gt = _check_paired(pred, gt)
    errors = np.linalg.norm(pred - gt, axis=-1)
    return float(np.mean(errors < tau))


# ---------------------------------------------------------------------------
# Body sample points
# ---------------------------------------------------------------------------

def _ring_basis(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    up = np.array([0.0, 1.0, 0.0])
    u = np.cross(direction, up)
    if np.linalg.norm(u) < 1e-9:
        u = np.cross(direction, np.array([1.0, 0.0, 0.0]))
    u /= np.linalg.norm(u)
    v = np.cross(direction, u)
    v /= np.linalg.norm(v)
    return u, v


_RING_ANGLES = 2.0 * np.pi * np.arange(RING_POINTS) / RING_POINTS


def body_samples(frame: np.ndarray) -> np.ndarray:
    """Deterministic sample points for one pose, shape (253, 3).

    Layout: 22 joints, then per bone 3 interior points, then per bone 8
    capsule-ring points.  Zero-length bones collapse their ring onto the
    child joint.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (NUM_JOINTS, 3):
        raise InputError(f"frame must be ({NUM_JOINTS}, 3)")
    points = [frame]
    interior = []
    for parent, child in BONES:
        for f in BONE_FRACTIONS:
            interior.append((1.0 - f) * frame[parent] + f * frame[child])
    points.append(np.array(interior))
    rings = []
    for parent, child in BONES:
        d = frame[child] - frame[parent]
        length = np.linalg.norm(d)
        if length < 1e-9:
            rings.append(np.repeat(frame[child][None, :], RING_POINTS, axis=0))
            continue
        u, v = _ring_basis(d / length)
        mid = 0.5 * (frame[parent] + frame[child])
        ring = mid + CAPSULE_RADIUS * (
            np.cos(_RING_ANGLES)[:, None] * u + np.sin(_RING_ANGLES)[:, None] * v
        )
        rings.append(ring)
    points.append(np.concatenate(rings))
    return np.concatenate(points)


def body_samples_motion(motion: np.ndarray) -> np.ndarray:
    """Sample points for every frame, shape (F, 253, 3)."""
    motion = np.asarray(motion, dtype=np.float64)
    return np.stack([body_samples(f) for f in motion])


# ---------------------------------------------------------------------------
# Penetration metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PenetrationResult:
    value: float  # 100 * mean over frames of squared intersecting fraction
    rate: float   # total intersections / total samples
    mean: float   # mean intersecting count per frame
    max: int      # largest per-frame intersecting count


def penetration(motion: np.ndarray, timeline: SceneTimeline) -> PenetrationResult:
    """Test every body sample against the frame-active grid."""
    motion = np.asarray(motion, dtype=np.float64)
    if motion.ndim != 3 or len(motion) < 1:
        raise InputError("motion must be non-empty (F, J, 3)")
    samples = body_samples_motion(motion)
    n_frames, n_samples = samples.shape[0], samples.shape[1]
    counts = np.zeros(n_frames, dtype=np.int64)
    for t in range(n_frames):
        hits = query_occupied_many(grid_at(timeline, t), samples[t])
        counts[t] = int(hits.sum())
    fractions = counts / n_samples
    return PenetrationResult(
        value=float(PENETRATION_SCALE * np.mean(fractions**2)),
        rate=float(counts.sum() / (n_frames * n_samples)),
        mean=float(counts.mean()),
        max=int(counts.max()),
    )


# ---------------------------------------------------------------------------
# Pose metrics
# ---------------------------------------------------------------------------

def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-joint position error over frames and joints."""
    pred, gt = _check_paired(pred, gt)
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)))


def foot_skating(motion: np.ndarray, fps: int = DEFAULT_FPS) -> float:
    """Height-damped horizontal foot slip, averaged over frames and feet.

    Per frame and foot: speed * max(0, 2 - 2^(h/H)) with H = 0.05 m, so a
    foot above H contributes nothing.
    """
    motion = np.asarray(motion, dtype=np.float64)
    if len(motion) < 2:
        return 0.0
    feet = motion[:, list(FOOT_JOINTS), :]  # (F, 2, 3)
    disp = feet[1:] - feet[:-1]
    speed = np.linalg.norm(disp[:, :, [0, 2]], axis=-1) * fps
    h = feet[1:, :, 1]
    damp = np.maximum(0.0, 2.0 - np.exp2(h / FOOT_CONTACT_HEIGHT))
    return float(np.mean(speed * damp))


def diversity(motions, pairs: int, seed: int = 0) -> float:
    """Mean distance between seeded random disjoint pairs of motions."""
    flats = [np.asarray(m, dtype=np.float64).reshape(-1) for m in motions]
    n = len(flats)
    if n < 2:
        raise InputError("diversity needs at least 2 motions")
    if pairs < 1 or 2 * pairs > n:
        raise InputError("pairs must satisfy 1 <= 2*pairs <= batch size")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    dists = [
        np.linalg.norm(flats[perm[2 * i]] - flats[perm[2 * i + 1]])
        for i in range(pairs)
    ]
    return float(np.mean(dists))


# ---------------------------------------------------------------------------
# Frechet proxy on kinematic features
# ---------------------------------------------------------------------------

def motion_features(motion: np.ndarray, fps: int = DEFAULT_FPS) -> np.ndarray:
    """Fixed kinematic feature vector: per-joint mean speed (22), root
    velocity stats (2), pose variance (1)."""
    motion = np.asarray(motion, dtype=np.float64)
    vel = (motion[1:] - motion[:-1]) * fps if len(motion) > 1 else np.zeros_like(motion)
    joint_speed = np.linalg.norm(vel, axis=-1).mean(axis=0)  # (J,)
    root_v = vel[:, PELVIS, :]
    root_speed = np.linalg.norm(root_v[:, [0, 2]], axis=-1)
    rel = motion - motion[:, PELVIS : PELVIS + 1, :]
    pose_var = rel.var(axis=0).mean()
    return np.concatenate([joint_speed, [root_speed.mean(), root_speed.std()], [pose_var]])


def _frechet_gaussian(mu1, sigma1, mu2, sigma2, eps: float = 1e-6) -> float:
    diff = mu1 - mu2
    covmean, _ = linalg.sqrtm(sigma1 @ sigma2, disp=False)
    if not np.isfinite(covmean).all():
        warnings.warn("degenerate covariance in Frechet proxy; regularizing")
        offset = np.eye(sigma1.shape[0]) * eps
        covmean, _ = linalg.sqrtm((sigma1 + offset) @ (sigma2 + offset), disp=False)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    value = diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * np.trace(covmean)
    return float(max(value, 0.0))


def fid_proxy(generated, reference, fps: int = DEFAULT_FPS) -> float:
    """Frechet distance between Gaussian fits of kinematic features.

    This is *not* the conventional FID over a pretrained motion extractor;
    it is reported under the distinct name ``fid_proxy`` everywhere.
    """
    gen = np.stack([motion_features(m, fps) for m in generated])
    ref = np.stack([motion_features(m, fps) for m in reference])
    if len(gen) < 2 or len(ref) < 2:
        raise InputError("fid_proxy needs at least 2 motions per batch")
    mu1, mu2 = gen.mean(axis=0), ref.mean(axis=0)
    sigma1 = np.cov(gen, rowvar=False)
    sigma2 = np.cov(ref, rowvar=False)
    return _frechet_gaussian(mu1, sigma1, mu2, sigma2)
