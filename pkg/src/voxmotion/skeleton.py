"""Fixed 22-joint marker skeleton and procedural pose synthesis.

Character-local frame: forward +x, up +y, left +z.  World poses are the
local pose rotated by the character yaw and translated by the root.
The same yaw convention as the local occupancy window is used throughout.
"""
from __future__ import annotations

import numpy as np

JOINT_NAMES = (
    "pelvis", "spine", "chest", "neck", "head",
    "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee",
    "l_foot", "r_foot", "r_ankle",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
    "l_hand", "r_hand", "head_top",
)
NUM_JOINTS = len(JOINT_NAMES)

PELVIS = 0
L_FOOT = 10
R_FOOT = 11
FOOT_JOINTS = (L_FOOT, R_FOOT)

# parent index per joint; -1 for the root
PARENTS = (
    -1, 0, 1, 2, 3,
    0, 5, 6, 0, 8,
    7, 12, 9,
    2, 13, 14, 2, 16, 17,
    15, 18, 4,
)

_OFFSETS = {
    "spine": (0.0, 0.15, 0.0),
    "chest": (0.0, 0.15, 0.0),
    "neck": (0.0, 0.15, 0.0),
    "head": (0.0, 0.12, 0.0),
    "l_hip": (0.0, -0.05, 0.10),
    "l_knee": (0.0, -0.40, 0.0),
    "l_ankle": (0.0, -0.40, 0.0),
    "r_hip": (0.0, -0.05, -0.10),
    "r_knee": (0.0, -0.40, 0.0),
    "r_ankle": (0.0, -0.40, 0.0),
    "l_foot": (0.12, -0.05, 0.0),
    "r_foot": (0.12, -0.05, 0.0),
    "l_shoulder": (0.0, 0.05, 0.18),
    "l_elbow": (0.0, -0.28, 0.0),
    "r_shoulder": (0.0, 0.05, -0.18),
    "r_elbow": (0.0, -0.28, 0.0),
    "l_wrist": (0.0, -0.26, 0.0),
    "r_wrist": (0.0, -0.26, 0.0),
    "l_hand": (0.05, -0.05, 0.0),
    "r_hand": (0.05, -0.05, 0.0),
    "head_top": (0.0, 0.12, 0.0),
}

PELVIS_HEIGHT = 0.92  # standing root height; feet rest ~2 cm above ground


def rest_pose() -> np.ndarray:
    """Local joint positions relative to the pelvis, shape (22, 3)."""
    pose = np.zeros((NUM_JOINTS, 3))
    resolved = {PELVIS}
    while len(resolved) < NUM_JOINTS:
        for j, name in enumerate(JOINT_NAMES):
            p = PARENTS[j]
            if j in resolved or p not in resolved:
                continue
            pose[j] = pose[p] + np.array(_OFFSETS[name])
            resolved.add(j)
    return pose


_REST = rest_pose()


def _gait_deltas(phase: float, stride: float = 0.12, lift: float = 0.05) -> np.ndarray:
    """Sinusoidal limb offsets for a walk cycle at ``phase`` (radians)."""
    d = np.zeros((NUM_JOINTS, 3))
    left = np.sin(phase)
    right = np.sin(phase + np.pi)
    for side, s in (("l", left), ("r", right)):
        for part, fx in ((f"{side}_knee", 0.5), (f"{side}_ankle", 0.9), (f"{side}_foot", 1.0)):
            j = JOINT_NAMES.index(part)
            d[j, 0] = stride * fx * s
        foot = JOINT_NAMES.index(f"{side}_foot")
        ankle = JOINT_NAMES.index(f"{side}_ankle")
        raise_amt = lift * max(0.0, np.sin(phase if side == "l" else phase + np.pi))
        d[foot, 1] = raise_amt
        d[ankle, 1] = raise_amt
    # counter-swinging arms
    for side, s in (("l", right), ("r", left)):
        for part, fx in ((f"{side}_elbow", 0.4), (f"{side}_wrist", 0.8), (f"{side}_hand", 1.0)):
            j = JOINT_NAMES.index(part)
            d[j, 0] = 0.08 * fx * s
    return d


def _sit_deltas(progress: float) -> np.ndarray:
    """Move knees/ankles forward as the pelvis lowers onto a seat."""
    d = np.zeros((NUM_JOINTS, 3))
    for part, fx, fy in (
        ("l_knee", 0.30, 0.28), ("r_knee", 0.30, 0.28),
        ("l_ankle", 0.32, 0.05), ("r_ankle", 0.32, 0.05),
        ("l_foot", 0.32, 0.05), ("r_foot", 0.32, 0.05),
    ):
        j = JOINT_NAMES.index(part)
        d[j, 0] = fx * progress
        d[j, 1] = fy * progress
    return d


def _arm_raise_deltas(progress: float, to_mouth: bool = False) -> np.ndarray:
    """Raise the right arm; optionally bend the hand toward the head."""
    d = np.zeros((NUM_JOINTS, 3))
    r_elbow = JOINT_NAMES.index("r_elbow")
    r_wrist = JOINT_NAMES.index("r_wrist")
    r_hand = JOINT_NAMES.index("r_hand")
    d[r_elbow] = np.array([0.12, 0.10, 0.02]) * progress
    d[r_wrist] = np.array([0.22, 0.40, 0.05]) * progress
    d[r_hand] = np.array([0.22, 0.45, 0.05]) * progress
    if to_mouth:
        d[r_wrist] += np.array([-0.05, 0.12, 0.06]) * progress
        d[r_hand] += np.array([-0.10, 0.18, 0.08]) * progress
    return d


def local_pose(action: str, phase: float, progress: float = 0.0) -> np.ndarray:
    """Local pose for one frame.

    ``phase`` drives the gait cycle for walking; ``progress`` in [0, 1]
    drives sit/reach/drink transitions.
    """
    pose = _REST.copy()
    if action == "walk":
        pose += _gait_deltas(phase)
    elif action == "sit":
        pose += _sit_deltas(progress)
    elif action == "reach":
        pose += _arm_raise_deltas(progress)
    elif action == "drink":
        pose += _arm_raise_deltas(progress, to_mouth=True)
    # "stand" and unknown actions keep the rest pose
    return pose


def pose_to_world(local: np.ndarray, root: np.ndarray, yaw: float) -> np.ndarray:
    """Rotate the local pose by yaw about +y and translate by the root."""
    c, s = np.cos(yaw), np.sin(yaw)
    out = np.empty_like(local)
    out[:, 0] = c * local[:, 0] + s * local[:, 2]
    out[:, 1] = local[:, 1]
    out[:, 2] = -s * local[:, 0] + c * local[:, 2]
    return out + np.asarray(root)
