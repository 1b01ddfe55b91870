"""Joint training of the navigator, the denoiser, and the shared encoders.

One Adam optimizer drives the combined objective

    L = L_motion + lambda_traj * L_traj + lambda_conf * L_conf

where L_motion is the clean-segment reconstruction error of the denoiser,
and L_traj / L_conf are the teacher-forced navigator losses.  Segments are
canonicalized by subtracting the segment-start horizontal root position so
both models learn translation-invariant maps.  After every optimizer step
the segment is offered to the experience store under its current motion
loss.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .diffusion import schedule_new
from .encoders import embed_text, pool_local_grid, step_embedding
from .errors import InputError, TrainingError
from .grids import SceneTimeline, extract_local, load_grid
from .memory import MemoryEntry, MemoryStore
from .models import BundleConfig, ModelBundle
from .navigation import heading_from_displacement
from .skeleton import PELVIS

DEFAULT_LAMBDA_TRAJ = 0.5
DEFAULT_LAMBDA_CONF = 0.01


@dataclass
class TrainConfig:
    epochs: int = 40
    lr: float = 3e-4
    lambda_traj: float = DEFAULT_LAMBDA_TRAJ
    lambda_conf: float = DEFAULT_LAMBDA_CONF
    navigator_input_noise: float = 0.05
    memory_capacity: int = 20
    memory_loss_gate: float = 0.05
    seed: int = 0
    grad_clip: float = 1.0
    timesteps_per_clip: int = 3  # diffusion timesteps sampled per clip per epoch
    # extra reconstruction weight on the root channels: the root carries the
    # goal-reaching signal but is only 3 of the 66 motion dimensions
    root_weight: float = 8.0

    def __post_init__(self):
        if self.epochs < 1:
            raise InputError("epochs must be at least 1")
        if self.lr <= 0:
            raise InputError("lr must be positive")


def _clip_yaws(roots: np.ndarray, goal: np.ndarray) -> np.ndarray:
    yaw = heading_from_displacement(goal - roots[0], 0.0)
    yaws = np.empty(len(roots))
    for i in range(len(roots)):
        if i > 0:
            yaw = heading_from_displacement(roots[i] - roots[i - 1], yaw)
        yaws[i] = yaw
    return yaws


def prepare_clips(manifest: dict, dataset_dir) -> list[dict]:
    """Load motions and precompute canonical tensors and local windows."""
    dataset_dir = Path(dataset_dir)
    grids = {
        s["id"]: load_grid(dataset_dir / s["grid"]) for s in manifest["scenes"]
    }
    clips = []
    for doc in manifest["clips"]:
        motion = np.load(dataset_dir / doc["motion_file"]).astype(np.float64)
        frames = motion.shape[0]
        grid = grids[doc["scene_id"]]
        roots = motion[:, PELVIS, :]
        goal = np.asarray(doc["goal"], dtype=np.float64)
        yaws = _clip_yaws(roots, goal)
        offset = np.array([roots[0, 0], 0.0, roots[0, 2]])

        pooled = np.stack(
            [
                pool_local_grid(extract_local(grid, roots[i], yaws[i]))
                for i in range(frames - 1)
            ]
        )
        start_window = extract_local(grid, roots[0], yaws[0])
        canon = motion - offset
        steps = np.stack([step_embedding(i) for i in range(frames - 1)])
        text = embed_text(doc["prompt"])
        clips.append(
            {
                "id": doc["id"],
                "prompt": doc["prompt"],
                "text": text,
                "x0": torch.as_tensor(
                    canon.reshape(frames, -1), dtype=torch.float32
                ),
                "nav_inputs": torch.as_tensor(canon[:-1, PELVIS, :], dtype=torch.float32),
                "nav_targets": torch.as_tensor(canon[1:, PELVIS, :], dtype=torch.float32),
                "step_embs": torch.as_tensor(steps, dtype=torch.float32),
                "pooled": torch.as_tensor(pooled, dtype=torch.float32),
                "text64": torch.as_tensor(text.vector, dtype=torch.float32),
                "goal": torch.as_tensor(goal - offset, dtype=torch.float32),
                "offset": offset,
                "start_window": start_window,
                "canon": canon,
            }
        )
    return clips


def _yaw_matrix(theta: float) -> torch.Tensor:
    c, s = math.cos(theta), math.sin(theta)
    return torch.tensor(
        [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], dtype=torch.float32
    )


def _rotate_flat(x: torch.Tensor, rot: torch.Tensor) -> torch.Tensor:
    """Rotate a (frames, joints*3) motion about the vertical axis."""
    frames = x.shape[0]
    return (x.reshape(frames, -1, 3) @ rot.T).reshape(frames, -1)


def _rotate_clip(clip: dict, theta: float) -> dict:
    """Rotate the canonical clip about the vertical axis.

    The local occupancy windows are character-frame and therefore invariant
    under a world rotation, so only motions, trajectories, and the goal
    change.  This augmentation removes every absolute-heading cue except the
    conditioning itself, which forces the denoiser to read its condition
    token instead of memorizing clip orientations.
    """
    rot = _yaw_matrix(theta)
    out = dict(clip)
    out["x0"] = _rotate_flat(clip["x0"], rot)
    out["nav_inputs"] = clip["nav_inputs"] @ rot.T
    out["nav_targets"] = clip["nav_targets"] @ rot.T
    out["goal"] = rot @ clip["goal"]
    return out


def _navigator_losses(bundle: ModelBundle, clip: dict, noise_sigma: float, gen: torch.Generator):
    """Teacher-forced trajectory and confidence losses for one clip."""
    nav = bundle.navigator
    inputs = clip["nav_inputs"]
    if noise_sigma > 0:
        inputs = inputs + noise_sigma * torch.randn(
            inputs.shape, generator=gen, dtype=torch.float32
        )
    n = inputs.shape[0]
    scene_f = nav.encoders.scene(clip["pooled"])  # (n, 32)
    delta_f = torch.cat([torch.zeros(1, scene_f.shape[1]), scene_f[1:] - scene_f[:-1]])
    text_f = nav.encoders.text(clip["text64"]).unsqueeze(0).expand(n, -1)
    goal_f = nav.encoders.goal(clip["goal"]).unsqueeze(0).expand(n, -1)
    pred_pos, conf_logit = nav(inputs, clip["step_embs"], text_f, goal_f, scene_f, delta_f)
    err = pred_pos - clip["nav_targets"]
    l_traj = (err**2).sum(dim=-1).mean()
    with torch.no_grad():
        conf_target = torch.exp(-err.norm(dim=-1))
    l_conf = torch.nn.functional.binary_cross_entropy_with_logits(
        conf_logit, conf_target
    )
    with torch.no_grad():
        pred_traj = torch.cat([clip["nav_inputs"][:1], pred_pos], dim=0)
        pred_conf = torch.sigmoid(conf_logit)
        pred_conf = torch.cat([torch.ones(1), pred_conf], dim=0)
    return l_traj, l_conf, pred_traj, pred_conf


def _denoiser_loss(
    bundle: ModelBundle,
    clip: dict,
    schedule,
    pred_traj: torch.Tensor,
    pred_conf: torch.Tensor,
    rng: np.random.Generator,
    n_timesteps: int,
    root_weight: float = 1.0,
):
    """Reconstruction loss of x0 from noised copies under the assembled
    condition; the trajectory condition is the detached navigator output."""
    den = bundle.denoiser
    enc = bundle.encoders
    cfg = den.config
    x0 = clip["x0"]
    dims = x0.shape[1]
    dim_w = torch.ones(dims)
    dim_w[PELVIS * 3 : PELVIS * 3 + 3] = root_weight
    dim_w = dim_w * (dims / dim_w.sum())

    scene_f = enc.scene(clip["pooled"][0])
    text32 = enc.text(clip["text64"])
    goal_f = enc.goal(clip["goal"])
    weights = den.adapter(clip["text64"])  # (4,) softmax
    traj_cond = (pred_traj * pred_conf.unsqueeze(-1)).reshape(-1)
    cond = torch.cat(
        [
            scene_f * weights[0],
            traj_cond * weights[1],
            text32 * weights[2],
            goal_f * weights[3],
        ]
    ).unsqueeze(0)

    total = 0.0
    for _ in range(n_timesteps):
        t = int(rng.integers(1, schedule.T + 1))
        ab = schedule.alpha_bar(t)
        noise = torch.as_tensor(
            rng.standard_normal(x0.shape), dtype=torch.float32
        )
        # The schedule keeps a strong x0 imprint in x_t even at t = T, so a
        # model trained only on matched inputs learns to copy that imprint
        # and never reads its condition; at generation time the prime then
        # dictates the output.  Corrupting the imprint's heading (or, at
        # high t, removing it) while keeping the true x0 as the target
        # teaches the model to treat the input as style and the condition
        # as the authority on where the motion goes.
        draw = rng.random()
        if t > schedule.T // 2:
            # high t: sampling starts from a pure-noise prime, so train the
            # condition-only path hardest here
            if draw < 0.45:
                leak = None
            elif draw < 0.8:
                leak = _rotate_flat(x0, _yaw_matrix(rng.uniform(0.0, 2.0 * math.pi)))
            else:
                leak = x0
        elif draw < 0.3:
            leak = _rotate_flat(x0, _yaw_matrix(rng.uniform(0.0, 2.0 * math.pi)))
        else:
            leak = x0
        if leak is None:
            x_t = noise
        else:
            x_t = math.sqrt(ab) * leak + math.sqrt(1.0 - ab) * noise
        x0_hat = den(
            x_t.unsqueeze(0), torch.tensor([t], dtype=torch.long), cond
        ).squeeze(0)
        total = total + (dim_w * (x0_hat - x0) ** 2).mean()
    return total / n_timesteps


@dataclass
class TrainResult:
    bundle: ModelBundle
    memory: MemoryStore
    history: list[dict] = field(default_factory=list)


def train(
    manifest: dict,
    dataset_dir,
    config: TrainConfig = TrainConfig(),
    bundle_config: BundleConfig = BundleConfig(),
    log=None,
) -> TrainResult:
    """Run the full joint optimization over the dataset's clips."""
    clips = prepare_clips(manifest, dataset_dir)
    if not clips:
        raise InputError("dataset has no clips")
    frames = bundle_config.frames
    for clip in clips:
        if clip["x0"].shape[0] != frames:
            raise InputError(
                f"clip {clip['id']} has {clip['x0'].shape[0]} frames, expected {frames}"
            )

    bundle = ModelBundle(bundle_config, seed=config.seed)
    schedule = schedule_new(
        bundle_config.diffusion_steps, bundle_config.beta_start, bundle_config.beta_end
    )
    memory = MemoryStore(
        capacity=config.memory_capacity,
        loss_gate=config.memory_loss_gate,
        frames=frames,
        joints=bundle_config.joints,
    )
    optimizer = torch.optim.Adam(bundle.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)

    history: list[dict] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(clips))
        sums = {"motion": 0.0, "traj": 0.0, "conf": 0.0, "total": 0.0}
        t_start = time.perf_counter()
        for idx in order:
            clip = clips[idx]
            aug = _rotate_clip(clip, rng.uniform(0.0, 2.0 * math.pi))
            optimizer.zero_grad()
            l_traj, l_conf, pred_traj, pred_conf = _navigator_losses(
                bundle, aug, config.navigator_input_noise, gen
            )
            l_motion = _denoiser_loss(
                bundle, aug, schedule, pred_traj, pred_conf, rng,
                config.timesteps_per_clip, config.root_weight,
            )
            loss = (
                l_motion
                + config.lambda_traj * l_traj
                + config.lambda_conf * l_conf
            )
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, clip {clip['id']}"
                )
            loss.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(bundle.parameters(), config.grad_clip)
            optimizer.step()

            l_motion_val = float(l_motion.detach())
            sums["motion"] += l_motion_val
            sums["traj"] += float(l_traj.detach())
            sums["conf"] += float(l_conf.detach())
            sums["total"] += float(loss.detach())

            _offer_to_memory(memory, bundle, clip, schedule, l_motion_val, rng)

        n = len(clips)
        record = {
            "epoch": epoch,
            "motion": sums["motion"] / n,
            "traj": sums["traj"] / n,
            "conf": sums["conf"] / n,
            "total": sums["total"] / n,
            "memory_entries": memory.total_entries(),
            "seconds": time.perf_counter() - t_start,
        }
        history.append(record)
        if log is not None:
            log(
                f"epoch {epoch:3d}  total {record['total']:.4f}  "
                f"motion {record['motion']:.4f}  traj {record['traj']:.4f}  "
                f"conf {record['conf']:.4f}  mem {record['memory_entries']}"
            )
    return TrainResult(bundle=bundle, memory=memory, history=history)


def _offer_to_memory(memory, bundle, clip, schedule, l_motion, rng):
    """Offer the clip's canonical segment to the experience store; the stored
    prime is a fully noised copy of the clean motion."""
    with torch.no_grad():
        scene_feat = (
            bundle.encoders.scene(clip["pooled"][0]).numpy().astype(np.float32)
        )
    clean = clip["canon"].astype(np.float32)
    ab_T = schedule.alpha_bar(schedule.T)
    noisy = (
        math.sqrt(ab_T) * clean
        + math.sqrt(1.0 - ab_T) * rng.standard_normal(clean.shape)
    ).astype(np.float32)
    entry = MemoryEntry(
        noisy_motion=noisy,
        clean_motion=clean,
        scene_context=clip["start_window"],
        scene_feature=scene_feat,
        text_embedding=clip["text"],
        prompt=clip["prompt"],
        admission_similarity=0.0,
    )
    memory.consider_store(entry, l_motion)


def save_history(history: list[dict], path) -> None:
    Path(path).write_text(json.dumps(history, indent=2))
