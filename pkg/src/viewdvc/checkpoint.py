"""Checkpoint directories: named float32 tensors plus JSON metadata.

Layout::

    params.bin    little-endian float32, tensors back to back in index order
    params.json   {"tensors": [{"name", "shape", "offset"}...]} (offsets in elements)
    config.json   training configuration snapshot
    model.json    architecture facts needed to rebuild the model, and the stage tag
    vocab.json    vocabulary tokens (reserved entries excluded)
    rng.json      numpy generator state and the torch CPU generator state
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np
import torch

from .core import ValidationError, Vocabulary

STAGE_TAGS = ("pt", "ft")


def save_checkpoint(out_dir, model, cfg, vocab: Vocabulary, rng: np.random.Generator | None = None,
                    stage: str | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage = stage or model.stage
    if stage not in STAGE_TAGS:
        raise ValueError(f"stage tag must be one of {STAGE_TAGS}, got {stage!r}")
    index, offset = [], 0
    with open(out / "params.bin", "wb") as fh:
        for name, tensor in sorted(model.state_dict().items()):
            arr = tensor.detach().cpu().numpy().astype("<f4")
            fh.write(arr.tobytes(order="C"))
            index.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    (out / "params.json").write_text(json.dumps({"dtype": "<f4", "tensors": index}, indent=1))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    (out / "model.json").write_text(json.dumps(model.spec() | {"stage": stage}, indent=1, sort_keys=True))
    vocab.save(out / "vocab.json")
    rng_state = {
        "numpy": rng.bit_generator.state if rng is not None else None,
        "torch": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode("ascii"),
    }
    (out / "rng.json").write_text(json.dumps(rng_state, indent=1, sort_keys=True))
    return out


def read_params(ckpt_dir) -> dict[str, np.ndarray]:
    ckpt = Path(ckpt_dir)
    index = json.loads((ckpt / "params.json").read_text())
    flat = np.fromfile(ckpt / "params.bin", dtype="<f4")
    params = {}
    for rec in index["tensors"]:
        size = int(np.prod(rec["shape"])) if rec["shape"] else 1
        params[rec["name"]] = flat[rec["offset"]: rec["offset"] + size].reshape(rec["shape"])
    return params


def load_checkpoint(ckpt_dir):
    """(model, config, vocabulary, rng state, stage tag)."""
    from .trainer import CaptionModel, TrainConfig  # circular at import time

    ckpt = Path(ckpt_dir)
    for name in ("params.bin", "params.json", "config.json", "model.json", "vocab.json"):
        if not (ckpt / name).exists():
            raise ValidationError(f"{ckpt}: missing {name}; not a checkpoint directory")
    cfg = TrainConfig.from_dict(json.loads((ckpt / "config.json").read_text()))
    meta = json.loads((ckpt / "model.json").read_text())
    vocab = Vocabulary.load(ckpt / "vocab.json")
    model = CaptionModel(meta["input_widths"], meta["vocab_size"], cfg, meta["num_classes"])
    params = read_params(ckpt)
    state = {k: torch.from_numpy(v.copy()) for k, v in params.items()}
    model.load_state_dict(state, strict=True)
    model.stage = meta["stage"]
    rng_state = json.loads((ckpt / "rng.json").read_text()) if (ckpt / "rng.json").exists() else None
    return model, cfg, vocab, rng_state, meta["stage"]
