"""Verb-keyed bounded store of noisy motion primes.

Admission is gated by the per-sample training loss; when a bucket is full
the candidate competes on a weighted multi-modal similarity (scene, joints,
text) and replaces the least similar member only if it scores higher.
Retrieval narrows coarse verb -> text shortlist -> best scene match, with a
seeded Gaussian fallback for unseen verbs.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .encoders import TEXT_DIM, TextEmbedding, cosine_sim, embed_text
from .errors import FormatError, InputError
from .grids import LOCAL_DIM, LocalGrid

MEM_MAGIC = b"DHSMEM1"
MEM_VERSION = 1

DEFAULT_WEIGHTS = (0.1, 0.4, 0.5)  # scene, joints, text
DEFAULT_LOSS_GATE = 0.001
DEFAULT_CAPACITY = 20  # desk-scale; configurable up to 200
RETRIEVAL_SHORTLIST = 10


@dataclass(frozen=True)
class MemoryEntry:
    noisy_motion: np.ndarray  # (frames, J, 3) float32, the stored prime
    clean_motion: np.ndarray  # (frames, J, 3) float32, for joint similarity
    scene_context: LocalGrid  # local window snapshot at segment start
    scene_feature: np.ndarray  # (32,) float32, encoded snapshot
    text_embedding: TextEmbedding
    prompt: str
    admission_similarity: float

    def __post_init__(self):
        noisy = np.asarray(self.noisy_motion, dtype=np.float32)
        clean = np.asarray(self.clean_motion, dtype=np.float32)
        if noisy.ndim != 3 or noisy.shape[2] != 3 or noisy.shape != clean.shape:
            raise InputError("motion arrays must share shape (frames, J, 3)")
        noisy = noisy.copy()
        clean = clean.copy()
        noisy.setflags(write=False)
        clean.setflags(write=False)
        object.__setattr__(self, "noisy_motion", noisy)
        object.__setattr__(self, "clean_motion", clean)
        feat = np.asarray(self.scene_feature, dtype=np.float32).copy()
        feat.setflags(write=False)
        object.__setattr__(self, "scene_feature", feat)


class StoreOutcome(Enum):
    REJECTED_BY_LOSS = "rejected_by_loss"
    INSERTED = "inserted"
    REPLACED = "replaced"
    REJECTED_BY_SIMILARITY = "rejected_by_similarity"


@dataclass(frozen=True)
class StoreDecision:
    outcome: StoreOutcome
    replaced_index: int | None = None


def combined_similarity(candidate: MemoryEntry, reference: MemoryEntry, weights=DEFAULT_WEIGHTS) -> float:
    """Weighted sum of scene, joint, and text cosine similarities."""
    if candidate.clean_motion.shape != reference.clean_motion.shape:
        raise InputError("joint count mismatch between entries")
    a, b, c = weights
    sim_scene = cosine_sim(candidate.scene_feature, reference.scene_feature)
    sim_joints = cosine_sim(
        candidate.clean_motion.reshape(-1), reference.clean_motion.reshape(-1)
    )
    sim_text = cosine_sim(candidate.text_embedding.vector, reference.text_embedding.vector)
    return a * sim_scene + b * sim_joints + c * sim_text


class MemoryStore:
    """Bounded verb-keyed buckets of MemoryEntry."""

    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        weights=DEFAULT_WEIGHTS,
        loss_gate: float = DEFAULT_LOSS_GATE,
        frames: int = 48,
        joints: int = 22,
    ):
        w = np.asarray(weights, dtype=np.float64)
        if w.size != 3 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InputError("similarity weights must be non-negative and sum to 1")
        if capacity < 1:
            raise InputError("capacity must be positive")
        self.capacity = int(capacity)
        self.weights = tuple(float(x) for x in w)
        self.loss_gate = float(loss_gate)
        self.frames = int(frames)
        self.joints = int(joints)
        self.buckets: dict[str, list[MemoryEntry]] = {}

    def total_entries(self) -> int:
        return sum(len(b) for b in self.buckets.values())

    def consider_store(self, entry: MemoryEntry, training_loss: float) -> StoreDecision:
        """Loss-gated admission with similarity-based replacement."""
        if training_loss > self.loss_gate:
            return StoreDecision(StoreOutcome.REJECTED_BY_LOSS)
        verb = entry.text_embedding.verb
        bucket = self.buckets.setdefault(verb, [])
        if bucket:
            cand_score = float(
                np.mean([combined_similarity(entry, m, self.weights) for m in bucket])
            )
        else:
            cand_score = 1.0
        entry = replace(entry, admission_similarity=cand_score)
        if len(bucket) < self.capacity:
            bucket.append(entry)
            return StoreDecision(StoreOutcome.INSERTED)
        # member score: mean similarity to the *other* current members
        member_scores = []
        for i, m in enumerate(bucket):
            others = [combined_similarity(m, o, self.weights) for j, o in enumerate(bucket) if j != i]
            member_scores.append(float(np.mean(others)) if others else 1.0)
        worst = int(np.argmin(member_scores))
        if cand_score > member_scores[worst]:
            bucket[worst] = entry
            return StoreDecision(StoreOutcome.REPLACED, replaced_index=worst)
        return StoreDecision(StoreOutcome.REJECTED_BY_SIMILARITY)

    def retrieve(self, prompt: str, scene_feature, rng_seed: int) -> tuple[np.ndarray, str]:
        """Return (prime, source) where source is "memory" or "gaussian"."""
        text = embed_text(prompt)
        bucket = self.buckets.get(text.verb)
        if not bucket:
            rng = np.random.default_rng(rng_seed)
            prime = rng.standard_normal((self.frames, self.joints, 3)).astype(np.float32)
            return prime, "gaussian"
        text_scores = np.array(
            [cosine_sim(text.vector, e.text_embedding.vector) for e in bucket]
        )
        order = np.argsort(-text_scores, kind="stable")
        shortlist = order[:RETRIEVAL_SHORTLIST]
        scene_feature = np.asarray(scene_feature, dtype=np.float64).reshape(-1)
        scene_scores = [
            cosine_sim(scene_feature, bucket[i].scene_feature) for i in shortlist
        ]
        best = shortlist[int(np.argmax(scene_scores))]
        return bucket[best].noisy_motion.copy(), "memory"


def consider_store(store: MemoryStore, entry: MemoryEntry, training_loss: float) -> StoreDecision:
    return store.consider_store(entry, training_loss)


def retrieve(store: MemoryStore, prompt: str, scene_feature, rng_seed: int):
    return store.retrieve(prompt, scene_feature, rng_seed)


# ---------------------------------------------------------------------------
# ".mem" serialization
# ---------------------------------------------------------------------------

def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError("truncated memory file")
    return data


def _write_str(fh, s: str) -> None:
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n).decode("utf-8")


def save_memory(store: MemoryStore, path) -> None:
    buf = io.BytesIO()
    buf.write(MEM_MAGIC)
    buf.write(struct.pack("<B", MEM_VERSION))
    buf.write(
        struct.pack(
            "<3ddIII",
            *store.weights,
            store.loss_gate,
            store.capacity,
            store.frames,
            store.joints,
        )
    )
    buf.write(struct.pack("<I", len(store.buckets)))
    for verb in sorted(store.buckets):
        bucket = store.buckets[verb]
        _write_str(buf, verb)
        buf.write(struct.pack("<I", len(bucket)))
        for e in bucket:
            _write_str(buf, e.prompt)
            buf.write(struct.pack("<d", e.admission_similarity))
            _write_str(buf, e.text_embedding.verb)
            buf.write(e.text_embedding.vector.astype(np.float32).tobytes())
            buf.write(e.scene_feature.astype(np.float32).tobytes())
            buf.write(struct.pack("<4d", *e.scene_context.center, e.scene_context.yaw))
            buf.write(np.packbits(e.scene_context.bits.reshape(-1)).tobytes())
            buf.write(e.noisy_motion.astype(np.float32).tobytes())
            buf.write(e.clean_motion.astype(np.float32).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_memory(path) -> MemoryStore:
    with open(path, "rb") as raw:
        fh = io.BytesIO(raw.read())
    if _read_exact(fh, len(MEM_MAGIC)) != MEM_MAGIC:
        raise FormatError(f"bad magic in memory file: {path}")
    (version,) = struct.unpack("<B", _read_exact(fh, 1))
    if version != MEM_VERSION:
        raise FormatError(f"unsupported memory file version {version}")
    a, b, c, gate, capacity, frames, joints = struct.unpack(
        "<3ddIII", _read_exact(fh, struct.calcsize("<3ddIII"))
    )
    store = MemoryStore(
        capacity=capacity, weights=(a, b, c), loss_gate=gate, frames=frames, joints=joints
    )
    (n_buckets,) = struct.unpack("<I", _read_exact(fh, 4))
    bits_bytes = (LOCAL_DIM**3 + 7) // 8
    motion_bytes = frames * joints * 3 * 4
    for _ in range(n_buckets):
        verb = _read_str(fh)
        (n_entries,) = struct.unpack("<I", _read_exact(fh, 4))
        bucket = []
        for _ in range(n_entries):
            prompt = _read_str(fh)
            (adm,) = struct.unpack("<d", _read_exact(fh, 8))
            entry_verb = _read_str(fh)
            text_vec = np.frombuffer(_read_exact(fh, TEXT_DIM * 4), dtype="<f4").copy()
            scene_feat = np.frombuffer(_read_exact(fh, 32 * 4), dtype="<f4").copy()
            cx, cy, cz, yaw = struct.unpack("<4d", _read_exact(fh, 32))
            packed = np.frombuffer(_read_exact(fh, bits_bytes), dtype=np.uint8)
            bits = np.unpackbits(packed)[: LOCAL_DIM**3].astype(bool)
            noisy = np.frombuffer(_read_exact(fh, motion_bytes), dtype="<f4").reshape(
                frames, joints, 3
            )
            clean = np.frombuffer(_read_exact(fh, motion_bytes), dtype="<f4").reshape(
                frames, joints, 3
            )
            bucket.append(
                MemoryEntry(
                    noisy_motion=noisy,
                    clean_motion=clean,
                    scene_context=LocalGrid(
                        bits=bits.reshape(LOCAL_DIM, LOCAL_DIM, LOCAL_DIM),
                        center=(cx, cy, cz),
                        yaw=yaw,
                    ),
                    scene_feature=scene_feat,
                    text_embedding=TextEmbedding(vector=text_vec, verb=entry_verb),
                    prompt=prompt,
                    admission_similarity=adm,
                )
            )
        store.buckets[verb] = bucket
    return store
