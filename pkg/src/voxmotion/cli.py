"""Command-line interface.

Exit codes: 0 success, 2 bad input or file format, 3 no navigable path,
4 numeric or training failure.
"""
from __future__ import annotations

import functools
import json
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from .dataset import Scenario, ToyDatasetSpec, generate_toy_dataset, make_dyn_scenarios
from .errors import (
    ConfigurationError,
    FormatError,
    InputError,
    NumericError,
    PlanningError,
    TrainingError,
)
from .grids import BoxScene, GridSpec, OccupancyGrid, load_grid, save_grid
from .memory import load_memory, save_memory
from .models import BundleConfig, load_checkpoint, save_checkpoint
from .pipeline import (
    RunConfig,
    run_benchmark,
    run_scenario,
    write_benchmark_csv,
    write_motion_jsonl,
)
from .training import TrainConfig, save_history, train

EXIT_INPUT = 2
EXIT_NO_PATH = 3
EXIT_NUMERIC = 4


def _exit_codes(fn):
    """Map package exceptions onto the documented process exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (InputError, FormatError, ConfigurationError, FileNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INPUT)
        except PlanningError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NO_PATH)
        except (NumericError, TrainingError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)

    return wrapper


def _load_config(path, cls, **overrides):
    """Build a config dataclass from an optional JSON file plus overrides."""
    fields = {}
    if path is not None:
        try:
            fields.update(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad config file {path}: {exc}") from exc
    fields.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**fields)
    except TypeError as exc:
        raise InputError(f"bad config for {cls.__name__}: {exc}") from exc


@click.group()
def main():
    """Text-conditioned motion generation in dynamic voxel scenes."""


@main.command("gen-data")
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--num-scenes", type=int, default=None)
@click.option("--clips-per-scene", type=int, default=None)
@_exit_codes
def gen_data(out, seed, config_path, num_scenes, clips_per_scene):
    """Generate the procedural toy dataset."""
    spec = _load_config(
        config_path, ToyDatasetSpec,
        seed=seed, num_scenes=num_scenes, clips_per_scene=clips_per_scene,
    )
    manifest = generate_toy_dataset(spec, out)
    click.echo(
        f"wrote {len(manifest['scenes'])} scenes, {len(manifest['clips'])} clips to {out}"
    )


@main.command("make-scenarios")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-n", "--count", type=int, default=30, show_default=True)
@_exit_codes
def make_scenarios(dataset, out, seed, count):
    """Build dynamic scenarios by displacing a movable box per scene."""
    scenarios = make_dyn_scenarios(dataset, count, seed, out)
    if len(scenarios) < count:
        click.echo(
            f"warning: only {len(scenarios)} of {count} scenarios could be built",
            err=True,
        )
    click.echo(f"wrote {len(scenarios)} scenarios to {out}")


@main.command("train")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--epochs", type=int, default=None)
@_exit_codes
def train_cmd(dataset, out, seed, config_path, epochs):
    """Train the navigator and denoiser jointly on a toy dataset."""
    from .plotting import plot_loss_curves

    config = _load_config(config_path, TrainConfig, seed=seed, epochs=epochs)
    dataset = Path(dataset)
    manifest = json.loads((dataset / "manifest.json").read_text())
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(manifest, dataset, config, log=click.echo)
    save_checkpoint(result.bundle, out / "model.ckpt")
    save_memory(result.memory, out / "memory.mem")
    save_history(result.history, out / "history.json")
    plot_loss_curves(result.history, out / "loss_curves.png")
    click.echo(
        f"saved checkpoint, memory ({result.memory.total_entries()} entries), "
        f"history, and loss figure to {out}"
    )


def _ablation_options(fn):
    fn = click.option("--no-navigation", is_flag=True, help="straight-line trajectories")(fn)
    fn = click.option("--no-memory", is_flag=True, help="always Gaussian primes")(fn)
    fn = click.option("--no-adapter", is_flag=True, help="fixed uniform condition weights")(fn)
    return fn


def _make_run_config(seed, no_navigation, no_memory, no_adapter) -> RunConfig:
    return RunConfig(
        use_navigation=not no_navigation,
        use_memory=not no_memory,
        use_adapter=not no_adapter,
        seed=seed,
    )


@main.command("run")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--memory", "memory_path", type=click.Path(exists=True), default=None)
@click.option("--scenario", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@_ablation_options
@_exit_codes
def run_cmd(checkpoint, memory_path, scenario, out, seed, no_navigation, no_memory, no_adapter):
    """Generate and evaluate one scenario."""
    from .plotting import plot_topdown

    bundle = load_checkpoint(checkpoint)
    memory = load_memory(memory_path) if memory_path else None
    scn = Scenario.load(scenario)
    base_dir = Path(scenario).parent
    config = _make_run_config(seed, no_navigation, no_memory, no_adapter)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result, report = run_scenario(bundle, memory, scn, base_dir, config)
    write_motion_jsonl(result.motion, out / "motion.jsonl")
    (out / "report.json").write_text(
        json.dumps(
            {"scenario": scn.id, "diagnostics": result.diagnostics, **report.to_json()},
            indent=2,
        )
    )
    plot_topdown(
        result.motion, scn.timeline(base_dir), out / "trajectory.png", goal=scn.goal
    )
    click.echo(
        f"{scn.id}: goal_err {report.goal_err:.3f} m, pene_rate {report.pene_rate:.4f}"
    )


def _format_table(results: dict) -> str:
    keys = (
        "traj_sim", "traj_err", "goal_err",
        "pene_value", "pene_rate", "pene_mean", "pene_max", "foot_skating",
    )
    width = max(len(v) for v in results) + 2
    lines = ["variant".ljust(width) + "".join(k.rjust(13) for k in keys)]
    for variant, block in results.items():
        agg = block["aggregate"]
        lines.append(
            variant.ljust(width) + "".join(f"{agg[k]:13.4f}" for k in keys)
        )
    return "\n".join(lines)


@main.command("bench")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--memory", "memory_path", type=click.Path(exists=True), default=None)
@click.option("--scenarios", "scenario_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--full-only", is_flag=True, help="skip the ablation variants")
@_exit_codes
def bench_cmd(checkpoint, memory_path, scenario_dir, out, seed, full_only):
    """Evaluate all scenarios in a directory under every configuration."""
    from .plotting import plot_benchmark

    bundle = load_checkpoint(checkpoint)
    memory = load_memory(memory_path) if memory_path else None
    scenario_dir = Path(scenario_dir)
    files = sorted(scenario_dir.glob("*.json"))
    scenarios = [Scenario.load(f) for f in files]
    if not scenarios:
        raise InputError(f"no scenario files in {scenario_dir}")
    base = _make_run_config(seed, False, False, False)
    variants = {"full": base}
    if not full_only:
        variants["no-navigation"] = _make_run_config(seed, True, False, False)
        variants["no-memory"] = _make_run_config(seed, False, True, False)
        variants["no-adapter"] = _make_run_config(seed, False, False, True)
    results = run_benchmark(bundle, memory, scenarios, scenario_dir, variants=variants)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(results, indent=2))
    write_benchmark_csv(results, out / "metrics.csv")
    table = _format_table(results)
    (out / "table.txt").write_text(table + "\n")
    plot_benchmark(results, out / "benchmark.png")
    click.echo(table)


@main.group("memory")
def memory_group():
    """Experience-store utilities."""


@memory_group.command("inspect")
@click.argument("path", type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
@_exit_codes
def memory_inspect(path, as_json):
    """Summarize a stored experience file."""
    store = load_memory(path)
    doc = {
        "capacity": store.capacity,
        "weights": list(store.weights),
        "loss_gate": store.loss_gate,
        "frames": store.frames,
        "joints": store.joints,
        "total_entries": store.total_entries(),
        "buckets": {
            verb: {
                "entries": len(bucket),
                "prompts": [e.prompt for e in bucket],
            }
            for verb, bucket in sorted(store.buckets.items())
        },
    }
    if as_json:
        click.echo(json.dumps(doc, indent=2))
        return
    click.echo(
        f"{store.total_entries()} entries in {len(store.buckets)} buckets "
        f"(capacity {store.capacity}/bucket, gate {store.loss_gate})"
    )
    for verb, info in doc["buckets"].items():
        click.echo(f"  {verb}: {info['entries']}")


def _grid_to_boxes(grid: OccupancyGrid) -> BoxScene:
    """Lossless inverse of voxelization: merge occupied voxels into
    column-aligned boxes (runs along y per (x, z) column)."""
    spec = grid.spec
    ox, oy, oz = spec.origin
    vs = spec.voxel_size
    boxes = []
    nx, nz, ny = spec.dims
    for ix in range(nx):
        for iz in range(nz):
            col = grid.dense[ix, iz]
            iy = 0
            while iy < ny:
                if not col[iy]:
                    iy += 1
                    continue
                top = iy
                while top < ny and col[top]:
                    top += 1
                boxes.append(
                    {
                        "min": [ox + ix * vs, oy + iy * vs, oz + iz * vs],
                        "max": [ox + (ix + 1) * vs, oy + top * vs, oz + (iz + 1) * vs],
                    }
                )
                iy = top
    return BoxScene(spec=spec, boxes=boxes)


@main.group("grid")
def grid_group():
    """Voxel grid file utilities."""


@grid_group.command("convert")
@click.argument("source", type=click.Path(exists=True))
@click.argument("dest", type=click.Path())
@_exit_codes
def grid_convert(source, dest):
    """Convert between the box-scene JSON document and the binary grid.

    Direction is inferred from the file extensions.
    """
    src, dst = Path(source), Path(dest)
    if src.suffix == ".json" and dst.suffix == ".grid":
        save_grid(BoxScene.load(src).voxelize(), dst)
    elif src.suffix == ".grid" and dst.suffix == ".json":
        _grid_to_boxes(load_grid(src)).save(dst)
    else:
        raise InputError(
            "expected a .json -> .grid or .grid -> .json conversion"
        )
    click.echo(f"wrote {dst}")


if __name__ == "__main__":
    main()
