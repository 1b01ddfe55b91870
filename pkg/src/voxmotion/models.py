"""Model bundle (navigator + denoiser + shared encoders) and the ".ckpt"
checkpoint format: magic "DHSCKPT1", JSON config block, named float32
parameter tensors with shapes, little-endian throughout.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .diffusion import DenoiserConfig, DenoiserParams
from .errors import FormatError
from .navigation import NavigatorParams

CKPT_MAGIC = b"DHSCKPT1"


@dataclass(frozen=True)
class BundleConfig:
    frames: int = 48
    joints: int = 22
    navigator_hidden: int = 128
    denoiser_layers: int = 4
    denoiser_dim: int = 128
    denoiser_heads: int = 4
    diffusion_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            frames=self.frames,
            joints=self.joints,
            layers=self.denoiser_layers,
            d_model=self.denoiser_dim,
            heads=self.denoiser_heads,
            T=self.diffusion_steps,
        )


class ModelBundle(nn.Module):
    """All learned components under one parameter namespace."""

    def __init__(self, config: BundleConfig = BundleConfig(), seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.config = config
        self.navigator = NavigatorParams(hidden=config.navigator_hidden)
        self.denoiser = DenoiserParams(config.denoiser_config())

    @property
    def encoders(self):
        return self.navigator.encoders


def save_checkpoint(bundle: ModelBundle, path) -> None:
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    config_raw = json.dumps(asdict(bundle.config)).encode("utf-8")
    buf.write(struct.pack("<I", len(config_raw)))
    buf.write(config_raw)
    state = bundle.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        raw_name = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError("truncated checkpoint file")
    return data


def load_checkpoint(path) -> ModelBundle:
    with open(path, "rb") as raw:
        fh = io.BytesIO(raw.read())
    if _read_exact(fh, len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise FormatError(f"bad magic in checkpoint: {path}")
    (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4))
    try:
        config = BundleConfig(**json.loads(_read_exact(fh, cfg_len)))
    except (json.JSONDecodeError, TypeError) as exc:
        raise FormatError(f"bad checkpoint config block: {exc}") from exc
    bundle = ModelBundle(config)
    (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4))
    state = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
        shape = tuple(
            struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim)
        )
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(_read_exact(fh, count * 4), dtype="<f4").reshape(shape)
        state[name] = torch.from_numpy(data.copy())
    try:
        bundle.load_state_dict(state)
    except RuntimeError as exc:
        raise FormatError(f"checkpoint tensors do not match config: {exc}") from exc
    return bundle
