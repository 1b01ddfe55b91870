"""Text-conditioned human motion generation in dynamic voxelized scenes.

Library layout:

* ``grids``      voxel occupancy, timelines, local windows, 2-D projection
* ``encoders``   deterministic text hashing and small learned feature maps
* ``navigation`` A* planning, the step-wise navigator, the replanning oracle
* ``memory``     verb-keyed bounded store of noisy motion primes
* ``diffusion``  noise schedule, condition adapter, denoiser, sampler
* ``skeleton``   fixed 22-joint skeleton and procedural poses
* ``metrics``    trajectory, penetration, and kinematic metrics
* ``dataset``    procedural toy dataset and dynamic scenarios
* ``training``   joint optimization of all learned parts
* ``pipeline``   segmented generation with two-frame stitching
* ``cli``        command-line entry points
"""

from .errors import (
    ConfigurationError,
    FormatError,
    InputError,
    NoPath,
    NumericError,
    PlanningError,
    TrainingError,
    UnreachableEndpoint,
    VoxmotionError,
)
from .grids import (
    BoxScene,
    GridSpec,
    LocalGrid,
    NavGrid2D,
    OccupancyGrid,
    SceneTimeline,
    build_from_boxes,
    extract_local,
    grid_at,
    inflate,
    load_grid,
    project_2d,
    query_occupied,
    save_grid,
    voxel_delta,
)
from .memory import MemoryEntry, MemoryStore, load_memory, save_memory
from .models import BundleConfig, ModelBundle, load_checkpoint, save_checkpoint
from .pipeline import GenerationResult, RunConfig, generate_sequence, run_scenario
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "BoxScene",
    "BundleConfig",
    "ConfigurationError",
    "FormatError",
    "GenerationResult",
    "GridSpec",
    "InputError",
    "LocalGrid",
    "MemoryEntry",
    "MemoryStore",
    "ModelBundle",
    "NavGrid2D",
    "NoPath",
    "NumericError",
    "OccupancyGrid",
    "PlanningError",
    "RunConfig",
    "SceneTimeline",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "UnreachableEndpoint",
    "VoxmotionError",
    "build_from_boxes",
    "extract_local",
    "generate_sequence",
    "grid_at",
    "inflate",
    "load_checkpoint",
    "load_grid",
    "load_memory",
    "project_2d",
    "query_occupied",
    "run_scenario",
    "save_checkpoint",
    "save_grid",
    "save_memory",
    "train",
    "voxel_delta",
]
