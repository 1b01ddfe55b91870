"""Shared fixtures.

The end-to-end checks need a trained model, which takes minutes to build.
The trained artifacts (dataset, scenarios, checkpoint, memory, benchmark
results) are cached on disk under ``.accept_cache/`` keyed by a hash of the
full recipe, so repeated test runs skip the expensive work.
"""
import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import pytest

from voxmotion.dataset import Scenario, ToyDatasetSpec, generate_toy_dataset, make_dyn_scenarios
from voxmotion.memory import load_memory, save_memory
from voxmotion.models import load_checkpoint, save_checkpoint
from voxmotion.training import TrainConfig, save_history, train

# bump when the training recipe changes in a way that invalidates caches
RECIPE_VERSION = 4

DATASET_SPEC = ToyDatasetSpec(seed=0)
TRAIN_CONFIG = TrainConfig(epochs=150, seed=0)
SCENARIO_COUNT = 30
SCENARIO_SEED = 1


def _cache_dir() -> Path:
    key = json.dumps(
        {
            "version": RECIPE_VERSION,
            "dataset": asdict(DATASET_SPEC),
            "train": asdict(TRAIN_CONFIG),
            "scenarios": [SCENARIO_COUNT, SCENARIO_SEED],
        },
        sort_keys=True,
    )
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    return Path(__file__).resolve().parent.parent / ".accept_cache" / digest


@pytest.fixture(scope="session")
def trained_artifacts():
    """Dataset, scenarios, and a trained model under the standard recipe."""
    cache = _cache_dir()
    ds_dir = cache / "dataset"
    scn_dir = cache / "scenarios"
    ckpt = cache / "model.ckpt"
    mem = cache / "memory.mem"

    if not (ckpt.exists() and mem.exists()):
        cache.mkdir(parents=True, exist_ok=True)
        manifest = generate_toy_dataset(DATASET_SPEC, ds_dir)
        make_dyn_scenarios(ds_dir, SCENARIO_COUNT, SCENARIO_SEED, scn_dir)
        result = train(manifest, ds_dir, TRAIN_CONFIG)
        save_checkpoint(result.bundle, ckpt)
        save_memory(result.memory, mem)
        save_history(result.history, cache / "history.json")

    scenarios = [Scenario.load(p) for p in sorted(scn_dir.glob("*.json"))]
    return {
        "bundle": load_checkpoint(ckpt),
        "memory": load_memory(mem),
        "dataset_dir": ds_dir,
        "scenario_dir": scn_dir,
        "scenarios": scenarios,
        "manifest": json.loads((ds_dir / "manifest.json").read_text()),
        "history": json.loads((cache / "history.json").read_text()),
        "cache_dir": cache,
    }
