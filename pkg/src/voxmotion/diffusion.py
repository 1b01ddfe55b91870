"""Conditional motion denoiser: noise schedule, forward noising, condition
adapter, condition assembly, and the reverse sampler with two-frame
autoregressive stitching.

The denoiser predicts the clean segment x0 directly; reverse steps use the
standard posterior derived from that prediction.  Conditioning enters as a
single prefix token: scene, confidence-weighted trajectory, text, and goal
features are scaled by the adapter weights, concatenated, and projected.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .encoders import FEATURE_DIM, TEXT_DIM
from .errors import ConfigurationError, InputError, NumericError

DEFAULT_T = 100
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02

SEGMENT_FRAMES = 48
DEFAULT_JOINTS = 22


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray        # (T,), betas[i] is beta_{i+1}
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t: int) -> float:
        """alpha_bar_t with alpha_bar_0 = 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])


def schedule_new(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    if T < 2:
        raise ConfigurationError("schedule needs at least 2 steps")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ConfigurationError("betas must satisfy 0 < beta_start < beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def q_sample(x0: np.ndarray, t: int, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward process: sqrt(ab_t) x0 + sqrt(1 - ab_t) noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise InputError("x0 and noise shapes differ")
    if not 1 <= t <= schedule.T:
        raise InputError(f"t={t} outside [1, {schedule.T}]")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


@dataclass(frozen=True)
class ConditionWeights:
    """Adapter output: importance of scene, trajectory, text, goal."""

    scene: float
    trajectory: float
    text: float
    goal: float

    def __post_init__(self):
        vals = (self.scene, self.trajectory, self.text, self.goal)
        if any(v < 0 for v in vals):
            raise InputError("condition weights must be non-negative")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise InputError("condition weights must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.scene, self.trajectory, self.text, self.goal])

    @staticmethod
    def uniform() -> "ConditionWeights":
        return ConditionWeights(0.25, 0.25, 0.25, 0.25)


class ConditionAdapter(nn.Module):
    """Text feature -> softmax importance weights over the four conditions.

    The head is zero-initialized so a fresh adapter is exactly uniform.
    """

    def __init__(self):
        super().__init__()
        self.body = nn.Sequential(nn.Linear(TEXT_DIM, 64), nn.ReLU())
        self.head = nn.Linear(64, 4)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, text_vec: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.head(self.body(text_vec)), dim=-1)


def condition_adapter(text_vector, adapter: ConditionAdapter) -> ConditionWeights:
    t = torch.as_tensor(np.asarray(text_vector, dtype=np.float32))
    with torch.no_grad():
        r = adapter(t).numpy().astype(np.float64)
    r = r / r.sum()  # exact unit sum under float64
    return ConditionWeights(*r)


@dataclass(frozen=True)
class DenoiserConfig:
    frames: int = SEGMENT_FRAMES
    joints: int = DEFAULT_JOINTS
    layers: int = 4
    d_model: int = 128
    heads: int = 4
    T: int = DEFAULT_T

    @property
    def frame_dim(self) -> int:
        return self.joints * 3

    @property
    def cond_dim(self) -> int:
        # scene + confidence-weighted trajectory + text + goal
        return FEATURE_DIM + self.frames * 3 + FEATURE_DIM + FEATURE_DIM


class DenoiserParams(nn.Module):
    """x0-predicting transformer over 48 frame tokens plus one condition
    prefix token; timestep enters as a learned embedding on the prefix."""

    def __init__(self, config: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.config = config
        d = config.d_model
        self.in_proj = nn.Linear(config.frame_dim, d)
        self.frame_pos = nn.Parameter(torch.zeros(config.frames, d))
        nn.init.normal_(self.frame_pos, std=0.02)
        self.t_embed = nn.Embedding(config.T + 1, d)
        self.cond_proj = nn.Linear(config.cond_dim, d)
        layer = nn.TransformerEncoderLayer(
            d_model=d,
            nhead=config.heads,
            dim_feedforward=2 * d,
            dropout=0.0,
            batch_first=True,
        )
        self.backbone = nn.TransformerEncoder(layer, num_layers=config.layers)
        self.out_proj = nn.Linear(d, config.frame_dim)
        self.adapter = ConditionAdapter()

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """Predict x0.

        x_t: (B, frames, joints*3); t: (B,) long; cond: (B, cond_dim).
        """
        tokens = self.in_proj(x_t) + self.frame_pos
        prefix = (self.cond_proj(cond) + self.t_embed(t)).unsqueeze(1)
        h = self.backbone(torch.cat([prefix, tokens], dim=1))
        return self.out_proj(h[:, 1:, :])


def assemble_condition_vector(
    scene_vec,
    traj_positions,
    traj_confidences,
    text_vec32,
    goal_vec,
    weights: ConditionWeights,
) -> np.ndarray:
    """Scale each condition by its adapter weight (trajectory additionally
    per-waypoint by confidence) and concatenate."""
    scene_vec = np.asarray(scene_vec, dtype=np.float64).reshape(-1)
    text_vec32 = np.asarray(text_vec32, dtype=np.float64).reshape(-1)
    goal_vec = np.asarray(goal_vec, dtype=np.float64).reshape(-1)
    traj = np.asarray(traj_positions, dtype=np.float64)
    conf = np.asarray(traj_confidences, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[1] != 3 or conf.shape != (traj.shape[0],):
        raise InputError("trajectory must be (frames, 3) with matching confidences")
    if scene_vec.size != FEATURE_DIM or text_vec32.size != FEATURE_DIM or goal_vec.size != FEATURE_DIM:
        raise InputError("feature vectors must be 32-wide")
    traj_flat = (traj * conf[:, None]).reshape(-1) * weights.trajectory
    return np.concatenate(
        [
            scene_vec * weights.scene,
            traj_flat,
            text_vec32 * weights.text,
            goal_vec * weights.goal,
        ]
    )


def assemble_conditions(params: DenoiserParams, cond_vector: np.ndarray) -> torch.Tensor:
    """Project the assembled condition vector to the single prefix token."""
    v = torch.as_tensor(np.asarray(cond_vector, dtype=np.float32))
    if v.shape[-1] != params.config.cond_dim:
        raise InputError("condition vector has wrong width")
    with torch.no_grad():
        return params.cond_proj(v)


def _predict_x0(params: DenoiserParams, x_t: np.ndarray, t: int, cond_vector: np.ndarray) -> np.ndarray:
    cfg = params.config
    xt = torch.as_tensor(
        np.asarray(x_t, dtype=np.float32).reshape(1, cfg.frames, cfg.frame_dim)
    )
    cond = torch.as_tensor(np.asarray(cond_vector, dtype=np.float32)).unsqueeze(0)
    with torch.no_grad():
        out = params(xt, torch.tensor([t], dtype=torch.long), cond)
    return out.numpy().astype(np.float64).reshape(cfg.frames, cfg.joints, 3)


def denoise_step(
    params: DenoiserParams | None,
    x_t: np.ndarray,
    t: int,
    cond_vector: np.ndarray | None,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    predict_fn=None,
) -> np.ndarray:
    """One reverse step x_t -> x_{t-1} under the x0 parameterization.

    ``predict_fn(x_t, t) -> x0`` may replace the learned model (used by the
    oracle-denoiser sampler checks).
    """
    if not 1 <= t <= schedule.T:
        raise InputError(f"t={t} outside [1, {schedule.T}]")
    x_t = np.asarray(x_t, dtype=np.float64)
    if predict_fn is not None:
        x0_hat = np.asarray(predict_fn(x_t, t), dtype=np.float64)
    else:
        x0_hat = _predict_x0(params, x_t, t, cond_vector)
    if not np.all(np.isfinite(x0_hat)):
        raise NumericError(f"non-finite denoiser output at t={t}")
    if t == 1:
        return x0_hat
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t - 1)
    beta_t = schedule.beta(t)
    alpha_t = 1.0 - beta_t
    coef_x0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_xt = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef_x0 * x0_hat + coef_xt * x_t
    var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    return mean + np.sqrt(var) * rng.standard_normal(x_t.shape)


def sample_segment(
    params: DenoiserParams | None,
    schedule: NoiseSchedule,
    cond_vector: np.ndarray | None,
    prime: np.ndarray,
    prev_two: np.ndarray | None = None,
    seed: int = 0,
    predict_fn=None,
) -> np.ndarray:
    """Reverse the diffusion process starting from ``prime`` (= x_T).

    When ``prev_two`` (2, J, 3) is given, frames 0-1 are inpainted each step
    with the noise-matched previous frames and overwritten exactly at the end
    so consecutive segments stitch without seams.
    """
    x = np.asarray(prime, dtype=np.float64).copy()
    if prev_two is not None:
        prev_two = np.asarray(prev_two, dtype=np.float64)
        if prev_two.shape != (2,) + x.shape[1:]:
            raise InputError("prev_two must be (2, J, 3)")
    rng = np.random.default_rng(seed)
    if prev_two is not None:
        x[:2] = q_sample(prev_two, schedule.T, rng.standard_normal(prev_two.shape), schedule)
    for t in range(schedule.T, 0, -1):
        x = denoise_step(params, x, t, cond_vector, schedule, rng, predict_fn=predict_fn)
        if prev_two is not None and t - 1 >= 1:
            noise = rng.standard_normal(prev_two.shape)
            x[:2] = q_sample(prev_two, t - 1, noise, schedule)
    if prev_two is not None:
        x[:2] = prev_two
    return x
