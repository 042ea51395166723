"""Checkpoint persistence: config echo, weights, optimizer, carries and RNG cursors."""

from __future__ import annotations

import io
import pickle
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .act import Trainer
from .baselines import FeedForwardNet, RecurrentNet
from .config import ModelConfig
from .core import init_params
from .data.datasets import atomic_write

FORMAT_VERSION = "hrm-checkpoint/1"


def build_model(config: ModelConfig, variant: str = "hrm", depth: int | None = None,
                loops: int = 1):
    if variant == "hrm":
        return init_params(config)
    depth = depth or 2 * config.blocks_per_module
    if variant == "feedforward":
        return FeedForwardNet(config, depth)
    if variant == "recurrent":
        return RecurrentNet(config, depth, loops)
    raise ValueError(f"unknown model variant {variant!r}")


def model_spec(net) -> dict[str, Any]:
    if isinstance(net, RecurrentNet):
        return {"variant": "recurrent", "depth": net.depth, "loops": net.loops}
    if isinstance(net, FeedForwardNet):
        return {"variant": "feedforward", "depth": net.depth, "loops": 1}
    return {"variant": "hrm", "depth": None, "loops": 1}


def _to_plain(obj):
    """Tree of builtins only; tensors and arrays become tagged raw-byte records."""
    if isinstance(obj, torch.Tensor):
        arr = obj.detach().cpu().contiguous().numpy()
        return {"__array__": "torch", "dtype": arr.dtype.str, "shape": list(arr.shape), "data": arr.tobytes()}
    if isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj)
        return {"__array__": "numpy", "dtype": arr.dtype.str, "shape": list(arr.shape), "data": arr.tobytes()}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _from_plain(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            arr = np.frombuffer(obj["data"], dtype=np.dtype(obj["dtype"])).reshape(obj["shape"]).copy()
            return torch.from_numpy(arr) if obj["__array__"] == "torch" else arr
        return {k: _from_plain(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_from_plain(v) for v in obj]
    return obj


def _dumps(tree) -> bytes:
    buf = io.BytesIO()
    p = pickle.Pickler(buf, protocol=4)
    p.fast = True  # no memo: identical trees give identical bytes regardless of object identity
    p.dump(tree)
    return buf.getvalue()


def checkpoint_bytes(trainer: Trainer, extra: dict[str, Any] | None = None) -> bytes:
    payload = {
        "format": FORMAT_VERSION,
        "config": trainer.config.to_dict(),
        "model": model_spec(trainer.net),
        "trainer": trainer.state_dict(),
        "step": trainer.step_count,
        "extra": extra or {},
    }
    return _dumps(_to_plain(payload))


def save_checkpoint(path, trainer: Trainer, extra: dict[str, Any] | None = None) -> None:
    atomic_write(path, checkpoint_bytes(trainer, extra))


def load_checkpoint(path) -> dict[str, Any]:
    with open(Path(path), "rb") as fh:
        payload = _from_plain(pickle.load(fh))
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    return payload


def restore(payload: dict[str, Any], data=None):
    """Rebuild ``(config, net, trainer)``; ``trainer`` is None without ``data``."""
    config = ModelConfig.from_dict(payload["config"])
    model_info = payload["model"]
    net = build_model(config, model_info["variant"], model_info["depth"], model_info["loops"])
    state = payload["trainer"]
    net.load_state_dict(state["net"])
    trainer = None
    if data is not None:
        trainer = Trainer(net, data, config, use_act=state["use_act"])
        trainer.load_state_dict(state)
    return config, net, trainer
