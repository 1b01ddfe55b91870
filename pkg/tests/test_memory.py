import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxmotion.encoders import embed_text
from voxmotion.errors import FormatError, InputError
from voxmotion.grids import LocalGrid
from voxmotion.memory import (
    MemoryEntry,
    MemoryStore,
    StoreOutcome,
    combined_similarity,
    load_memory,
    save_memory,
)

FRAMES, JOINTS = 12, 4  # small shapes keep these tests fast


def make_entry(rng, prompt="a person walks forward", motion=None, scene=None):
    motion = (
        motion
        if motion is not None
        else rng.standard_normal((FRAMES, JOINTS, 3)).astype(np.float32)
    )
    scene = (
        scene if scene is not None else rng.standard_normal(32).astype(np.float32)
    )
    return MemoryEntry(
        noisy_motion=rng.standard_normal((FRAMES, JOINTS, 3)).astype(np.float32),
        clean_motion=motion,
        scene_context=LocalGrid(
            bits=rng.random((32, 32, 32)) < 0.2, center=(1.0, 0.9, 2.0), yaw=0.3
        ),
        scene_feature=scene,
        text_embedding=embed_text(prompt),
        prompt=prompt,
        admission_similarity=0.0,
    )


def make_store(**kw):
    defaults = dict(capacity=4, frames=FRAMES, joints=JOINTS, loss_gate=0.5)
    defaults.update(kw)
    return MemoryStore(**defaults)


class TestEntry:
    def test_immutability(self):
        rng = np.random.default_rng(0)
        e = make_entry(rng)
        with pytest.raises(ValueError):
            e.clean_motion[0, 0, 0] = 1.0

    def test_shape_validation(self):
        rng = np.random.default_rng(1)
        with pytest.raises(InputError):
            MemoryEntry(
                noisy_motion=np.zeros((5, 4, 3), np.float32),
                clean_motion=np.zeros((6, 4, 3), np.float32),
                scene_context=LocalGrid(
                    bits=np.zeros((32, 32, 32), bool), center=(0, 0, 0), yaw=0.0
                ),
                scene_feature=np.zeros(32, np.float32),
                text_embedding=embed_text("walk"),
                prompt="walk",
                admission_similarity=0.0,
            )


class TestSimilarity:
    def test_self_similarity_is_weight_sum(self):
        rng = np.random.default_rng(2)
        e = make_entry(rng)
        assert combined_similarity(e, e) == pytest.approx(1.0)

    def test_matches_hand_weighted_sum(self):
        rng = np.random.default_rng(3)
        a, b = make_entry(rng, "walk ahead"), make_entry(rng, "sit down")

        def cos(u, v):
            u = np.asarray(u, np.float64).reshape(-1)
            v = np.asarray(v, np.float64).reshape(-1)
            return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))

        expected = (
            0.1 * cos(a.scene_feature, b.scene_feature)
            + 0.4 * cos(a.clean_motion, b.clean_motion)
            + 0.5 * cos(a.text_embedding.vector, b.text_embedding.vector)
        )
        assert combined_similarity(a, b) == pytest.approx(expected, abs=1e-9)


class TestStorePolicy:
    def test_loss_gate_rejects(self):
        rng = np.random.default_rng(4)
        store = make_store(loss_gate=0.001)
        decision = store.consider_store(make_entry(rng), training_loss=0.01)
        assert decision.outcome is StoreOutcome.REJECTED_BY_LOSS
        assert store.total_entries() == 0

    def test_inserts_until_capacity(self):
        rng = np.random.default_rng(5)
        store = make_store(capacity=3)
        for _ in range(3):
            d = store.consider_store(make_entry(rng), 0.0)
            assert d.outcome is StoreOutcome.INSERTED
        assert store.total_entries() == 3

    def test_verb_buckets_are_independent(self):
        rng = np.random.default_rng(6)
        store = make_store(capacity=1)
        store.consider_store(make_entry(rng, "a person walks"), 0.0)
        store.consider_store(make_entry(rng, "a person sits"), 0.0)
        assert set(store.buckets) == {"walk", "sit"}
        assert store.total_entries() == 2

    def test_replacement_requires_higher_similarity(self):
        rng = np.random.default_rng(7)
        store = make_store(capacity=2)
        scene = rng.standard_normal(32).astype(np.float32)
        a = rng.standard_normal((FRAMES, JOINTS, 3)).astype(np.float32)
        b = rng.standard_normal((FRAMES, JOINTS, 3)).astype(np.float32)
        # identical prompt and scene: similarity differences come from motion
        store.consider_store(make_entry(rng, "a person walks", motion=a, scene=scene), 0.0)
        store.consider_store(make_entry(rng, "a person walks", motion=b, scene=scene), 0.0)
        # candidate opposite to both motions: mean similarity below the
        # members' mutual similarity, so it is rejected
        odd = make_entry(rng, "a person walks", motion=-(a + b), scene=scene)
        d = store.consider_store(odd, 0.0)
        assert d.outcome is StoreOutcome.REJECTED_BY_SIMILARITY
        # candidate nearly equal to one member: mean similarity above the
        # members' mutual similarity, so it replaces the least similar one
        dup = make_entry(rng, "a person walks", motion=a + 0.01, scene=scene)
        d = store.consider_store(dup, 0.0)
        assert d.outcome is StoreOutcome.REPLACED
        assert d.replaced_index is not None
        assert store.total_entries() == 2

    @given(seed=st.integers(0, 200))
    @settings(max_examples=30, deadline=None)
    def test_capacity_never_exceeded(self, seed):
        rng = np.random.default_rng(seed)
        store = make_store(capacity=3, loss_gate=0.5)
        prompts = ["a person walks", "someone sits down", "reach up high"]
        for _ in range(30):
            prompt = prompts[int(rng.integers(0, 3))]
            store.consider_store(make_entry(rng, prompt), float(rng.uniform(0, 1)))
        for bucket in store.buckets.values():
            assert len(bucket) <= 3

    def test_invalid_weights(self):
        with pytest.raises(InputError):
            MemoryStore(weights=(0.5, 0.5, 0.5))
        with pytest.raises(InputError):
            MemoryStore(weights=(-0.1, 0.6, 0.5))


class TestRetrieval:
    def test_gaussian_fallback_for_unseen_verb(self):
        store = make_store()
        prime, source = store.retrieve("a person jumps", np.zeros(32), rng_seed=9)
        assert source == "gaussian"
        assert prime.shape == (FRAMES, JOINTS, 3)

    def test_gaussian_fallback_statistics(self):
        store = MemoryStore(frames=50, joints=20, loss_gate=0.5)
        samples = []
        for seed in range(34):  # > 1e5 scalars in total
            prime, source = store.retrieve("a person jumps", np.zeros(32), seed)
            assert source == "gaussian"
            samples.append(prime.reshape(-1))
        flat = np.concatenate(samples)
        assert flat.size >= 100_000
        assert abs(flat.mean()) < 0.02
        assert 0.96 < flat.var() < 1.04

    def test_gaussian_fallback_seeded(self):
        store = make_store()
        p1, _ = store.retrieve("a person jumps", np.zeros(32), 3)
        p2, _ = store.retrieve("a person jumps", np.zeros(32), 3)
        np.testing.assert_array_equal(p1, p2)

    def test_retrieves_best_scene_match(self):
        rng = np.random.default_rng(10)
        store = make_store(capacity=8)
        target_scene = rng.standard_normal(32).astype(np.float32)
        best = make_entry(rng, "a person walks", scene=target_scene * 2.0)
        store.consider_store(best, 0.0)
        for _ in range(4):
            store.consider_store(
                make_entry(rng, "a person walks", scene=-target_scene), 0.0
            )
        prime, source = store.retrieve("a person walks", target_scene, 0)
        assert source == "memory"
        np.testing.assert_array_equal(prime, best.noisy_motion)

    def test_text_shortlist_narrows_before_scene(self):
        rng = np.random.default_rng(11)
        store = make_store(capacity=15)
        scene = rng.standard_normal(32).astype(np.float32)
        # 11 entries with the exact query prompt but an opposite scene
        for _ in range(11):
            store.consider_store(
                make_entry(rng, "a person walks to the door", scene=-scene), 0.0
            )
        # one entry with an unrelated prompt but a perfect scene match; it
        # falls outside the 10-entry text shortlist and must never win even
        # though it dominates on scene similarity
        perfect_scene = make_entry(
            rng, "walk and then wave at the crowd please", scene=scene * 2.0
        )
        store.consider_store(perfect_scene, 0.0)
        prime, source = store.retrieve("a person walks to the door", scene, 0)
        assert source == "memory"
        assert not np.array_equal(prime, perfect_scene.noisy_motion)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        store = make_store(capacity=5)
        for prompt in ("a person walks", "a person sits", "reach the shelf"):
            for _ in range(3):
                store.consider_store(make_entry(rng, prompt), 0.0)
        path = tmp_path / "store.mem"
        save_memory(store, path)
        loaded = load_memory(path)
        assert loaded.capacity == store.capacity
        assert loaded.weights == store.weights
        assert loaded.loss_gate == store.loss_gate
        assert set(loaded.buckets) == set(store.buckets)
        for verb, bucket in store.buckets.items():
            lb = loaded.buckets[verb]
            assert len(lb) == len(bucket)
            for a, b in zip(bucket, lb):
                np.testing.assert_array_equal(a.noisy_motion, b.noisy_motion)
                np.testing.assert_array_equal(a.clean_motion, b.clean_motion)
                np.testing.assert_array_equal(
                    a.scene_context.bits, b.scene_context.bits
                )
                np.testing.assert_array_equal(a.scene_feature, b.scene_feature)
                assert a.prompt == b.prompt
                assert a.admission_similarity == b.admission_similarity

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mem"
        path.write_bytes(b"NOTAMEMF" + b"\x00" * 32)
        with pytest.raises(FormatError):
            load_memory(path)

    def test_truncation(self, tmp_path):
        rng = np.random.default_rng(13)
        store = make_store()
        store.consider_store(make_entry(rng), 0.0)
        path = tmp_path / "t.mem"
        save_memory(store, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(FormatError):
            load_memory(path)
