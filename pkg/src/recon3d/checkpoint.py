"""Checkpoints: a torch state dict plus a JSON sidecar listing every tensor's
shape and content hash, verified on load."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch

from .config import ConfigError


def tensor_hash(t: torch.Tensor) -> str:
    t = t.detach().contiguous().cpu()
    h = hashlib.sha256(str(t.dtype).encode() + str(tuple(t.shape)).encode())
    h.update(t.reshape(-1).view(torch.uint8).numpy().tobytes() if t.numel() else b"")
    return h.hexdigest()


def state_hash(state: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        h.update(tensor_hash(state[name]).encode())
    return h.hexdigest()


def params_hash(params) -> str:
    """Hash of an ordered collection of tensors (e.g. a frozen parameter list)."""
    h = hashlib.sha256()
    for p in params:
        h.update(tensor_hash(p).encode())
    return h.hexdigest()


def save(path, modules: dict, extra: dict | None = None) -> str:
    """Save several modules into one file; returns the content hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {f"{k}.{n}": v.detach().cpu().clone() for k, m in modules.items() for n, v in m.state_dict().items()}
    digest = state_hash(state)
    torch.save(state, path)
    sidecar = {"hash": digest, "tensors": {n: {"shape": list(v.shape), "sha256": tensor_hash(v)}
                                           for n, v in sorted(state.items())}}
    if extra:
        sidecar["extra"] = extra
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    return digest


def load(path, modules: dict) -> dict:
    """Load into ``modules`` after checking names, shapes and hashes; returns the sidecar."""
    path = Path(path)
    side_path = path.with_suffix(path.suffix + ".json")
    if not path.is_file() or not side_path.is_file():
        raise ConfigError(f"missing checkpoint {path}")
    sidecar = json.loads(side_path.read_text())
    state = torch.load(path, map_location="cpu", weights_only=True)
    if state_hash(state) != sidecar["hash"]:
        raise ConfigError(f"checkpoint {path} does not match its recorded hash")
    for key, module in modules.items():
        own = module.state_dict()
        sub = {n[len(key) + 1:]: v for n, v in state.items() if n.startswith(key + ".")}
        if set(sub) != set(own):
            raise ConfigError(f"checkpoint {path}: parameter names of '{key}' do not match the model")
        for n, v in sub.items():
            if tuple(v.shape) != tuple(own[n].shape):
                raise ConfigError(f"checkpoint {path}: {key}.{n} has shape {tuple(v.shape)}, "
                                  f"model expects {tuple(own[n].shape)}")
        module.load_state_dict(sub)
    return sidecar
