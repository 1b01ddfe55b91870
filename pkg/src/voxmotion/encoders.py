"""Fixed-width feature encoders for text, local scene, position, and goal.

The text encoder is a deterministic hashed bag-of-words; the scene encoder
pools the 32^3 local window into 4^3 patches before a small learned map.
Both stand in for large pretrained encoders while keeping the downstream
interface shapes: text is 64-wide, every other feature is 32-wide, and text
is projected to 32 wherever it is concatenated with the rest.
"""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import InputError
from .grids import LOCAL_DIM, LocalGrid

TEXT_DIM = 64
FEATURE_DIM = 32
SCENE_PATCH = 4  # pooling factor: 32^3 -> 8^3 patch means
SCENE_POOLED = (LOCAL_DIM // SCENE_PATCH) ** 3
STEP_EMBED_DIM = 16

# Fixed 40-entry verb lexicon used as coarse action keys.
VERB_LEXICON = (
    "walk", "run", "sit", "stand", "reach", "drink", "lie", "jump",
    "turn", "grab", "pick", "place", "open", "close", "push", "pull",
    "climb", "step", "crouch", "kneel", "wave", "point", "carry", "throw",
    "catch", "lean", "stretch", "bend", "squat", "dance", "eat", "look",
    "touch", "hold", "put", "move", "stop", "rise", "sweep", "wipe",
)

_WORD_RE = re.compile(r"[a-z']+")


@dataclass(frozen=True)
class TextEmbedding:
    vector: np.ndarray  # (64,), unit L2 norm
    verb: str


@dataclass(frozen=True)
class SceneFeature:
    vector: np.ndarray  # (32,)


@dataclass(frozen=True)
class PositionFeature:
    vector: np.ndarray  # (32,)


@dataclass(frozen=True)
class GoalFeature:
    vector: np.ndarray  # (32,)


@dataclass(frozen=True)
class SceneDelta:
    vector: np.ndarray  # (32,)


def _tokenize(prompt: str) -> list[str]:
    return _WORD_RE.findall(prompt.lower())


def _verb_match(token: str) -> str | None:
    """Match a token against the lexicon, allowing plain inflections."""
    if token in VERB_LEXICON:
        return token
    for suffix in ("s", "es", "ing", "ed"):
        stem = token[: -len(suffix)] if token.endswith(suffix) else None
        if stem and stem in VERB_LEXICON:
            return stem
        # doubled final consonant: "sitting" -> "sit"
        if stem and len(stem) >= 2 and stem[-1] == stem[-2] and stem[:-1] in VERB_LEXICON:
            return stem[:-1]
    return None


def extract_verb(prompt: str) -> str:
    """First lexicon verb in the prompt, else the first word."""
    tokens = _tokenize(prompt)
    if not tokens:
        raise InputError("prompt must contain at least one word")
    for token in tokens:
        verb = _verb_match(token)
        if verb is not None:
            return verb
    return tokens[0]


def _token_bucket(token: str) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "little")
    bucket = value % TEXT_DIM
    sign = 1.0 if (value >> 32) & 1 else -1.0
    return bucket, sign


def embed_text(prompt: str) -> TextEmbedding:
    """Deterministic hashed bag-of-words embedding, L2-normalized."""
    if not prompt or not prompt.strip():
        raise InputError("prompt must be non-empty")
    tokens = _tokenize(prompt)
    if not tokens:
        raise InputError("prompt must contain at least one word")
    vec = np.zeros(TEXT_DIM, dtype=np.float64)
    for token in tokens:
        bucket, sign = _token_bucket(token)
        vec[bucket] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        # pathological all-cancelling prompt; fall back to a one-hot
        vec[_token_bucket(tokens[0])[0]] = 1.0
        norm = 1.0
    vec = (vec / norm).astype(np.float32)
    return TextEmbedding(vector=vec, verb=extract_verb(prompt))


def cosine_sim(a, b) -> float:
    """Cosine similarity clamped to [-1, 1]; zero vectors map to 0."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InputError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def scene_feature_delta(curr: SceneFeature, prev: SceneFeature) -> SceneDelta:
    """Elementwise difference of consecutive local-scene features."""
    if curr.vector.shape != prev.vector.shape:
        raise InputError("scene feature dimensions differ")
    return SceneDelta(vector=(curr.vector - prev.vector))


def pool_local_grid(local: LocalGrid) -> np.ndarray:
    """Mean-pool the 32^3 window over 4^3 patches -> 512 floats."""
    n = LOCAL_DIM // SCENE_PATCH
    b = local.bits.astype(np.float32).reshape(
        n, SCENE_PATCH, n, SCENE_PATCH, n, SCENE_PATCH
    )
    return b.mean(axis=(1, 3, 5)).reshape(-1)


def step_embedding(step: int, dim: int = STEP_EMBED_DIM) -> np.ndarray:
    """Sinusoidal embedding of the decoding step index."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = step * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)]).astype(np.float32)


class FeatureEncoders(nn.Module):
    """Learned maps from pooled scene, position, goal, and text inputs to
    32-wide features.  Shared by the navigator and the denoiser."""

    def __init__(self):
        super().__init__()
        self.scene_mlp = nn.Sequential(
            nn.Linear(SCENE_POOLED, 64), nn.ReLU(), nn.Linear(64, FEATURE_DIM)
        )
        self.pos_mlp = nn.Sequential(
            nn.Linear(3 + STEP_EMBED_DIM, 64), nn.ReLU(), nn.Linear(64, FEATURE_DIM)
        )
        self.goal_mlp = nn.Sequential(
            nn.Linear(3, 64), nn.ReLU(), nn.Linear(64, FEATURE_DIM)
        )
        self.text_proj = nn.Linear(TEXT_DIM, FEATURE_DIM)

    def scene(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.scene_mlp(pooled)

    def position(self, pos: torch.Tensor, step: torch.Tensor) -> torch.Tensor:
        return self.pos_mlp(torch.cat([pos, step], dim=-1))

    def goal(self, goal: torch.Tensor) -> torch.Tensor:
        return self.goal_mlp(goal)

    def text(self, text_vec: torch.Tensor) -> torch.Tensor:
        return self.text_proj(text_vec)


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float32)


def encode_local_scene(local: LocalGrid, encoders: FeatureEncoders) -> SceneFeature:
    pooled = torch.from_numpy(pool_local_grid(local))
    with torch.no_grad():
        out = encoders.scene(pooled)
    return SceneFeature(vector=_to_numpy(out))


def encode_position(pos, step_index: int, encoders: FeatureEncoders) -> PositionFeature:
    if step_index < 0:
        raise InputError("step_index must be non-negative")
    p = torch.as_tensor(np.asarray(pos, dtype=np.float32))
    s = torch.from_numpy(step_embedding(step_index))
    with torch.no_grad():
        out = encoders.position(p, s)
    return PositionFeature(vector=_to_numpy(out))


def encode_goal(goal, encoders: FeatureEncoders) -> GoalFeature:
    g = torch.as_tensor(np.asarray(goal, dtype=np.float32))
    with torch.no_grad():
        out = encoders.goal(g)
    return GoalFeature(vector=_to_numpy(out))


def project_text(text: TextEmbedding, encoders: FeatureEncoders) -> np.ndarray:
    t = torch.from_numpy(text.vector)
    with torch.no_grad():
        out = encoders.text(t)
    return _to_numpy(out)
