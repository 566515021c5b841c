"""Desk-scale training loop: sample, forward, L1 + FFT loss, backward, Adan, cosine LR."""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import PairedDataset, sample_batch
from .errors import ConfigError, TrainingDiverged
from .losses import sr_loss
from .model import Model, model_from_weights
from .optim import AdanState, adan_step, cosine_lr
from .tensor import backward
from .weights import atomic_write_bytes, encode_weights, load_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    batch: int = 16
    lr_patch: int = 48
    lr_init: float = 5e-3
    lr_min: float = 1e-6
    fft_weight: float = 0.05
    l1_weight: float = 1.0
    seed: int = 0
    scale: int = 4
    checkpoint_every: int = 0
    augment: bool = True

    def __post_init__(self):
        problems = []
        if self.iterations < 0:
            problems.append(f"iterations must be >= 0 (got {self.iterations})")
        if self.batch < 1:
            problems.append(f"batch must be >= 1 (got {self.batch})")
        if self.lr_patch < 8:
            problems.append(f"lr_patch must be >= 8 (got {self.lr_patch})")
        if not 0 <= self.lr_min <= self.lr_init:
            problems.append(f"need 0 <= lr_min <= lr_init (got {self.lr_min}, {self.lr_init})")
        if self.fft_weight < 0 or self.l1_weight < 0:
            problems.append("loss weights must be non-negative")
        if self.scale not in (2, 3, 4):
            problems.append(f"scale must be 2, 3 or 4 (got {self.scale})")
        if self.checkpoint_every < 0:
            problems.append(f"checkpoint_every must be >= 0 (got {self.checkpoint_every})")
        if problems:
            raise ConfigError("invalid train config: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown train config fields: {unknown}")
        return cls(**data)


@dataclass
class TrainResult:
    records: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    final_weights: Path | None = None

    @property
    def losses(self) -> list[float]:
        return [r["total"] for r in self.records]


def _batch_rng(seed: int, iteration: int) -> np.random.Generator:
    # one stream per iteration, so a resumed run draws the same batches
    return np.random.default_rng([seed, iteration])


def checkpoint_paths(out_dir: Path, iteration: int) -> tuple[Path, Path]:
    stem = out_dir / f"ckpt_{iteration:07d}"
    return stem.with_suffix(".lkmn"), stem.with_suffix(".state.npz")


def save_checkpoint(model: Model, state: AdanState, iteration: int, out_dir: Path) -> Path:
    wpath, spath = checkpoint_paths(out_dir, iteration)
    buf = io.BytesIO()
    meta = {"iteration": iteration, "step": state.step, "betas": list(state.betas), "eps": state.eps,
            "weight_decay": state.weight_decay, "rejected_steps": state.rejected_steps}
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **state.arrays())
    atomic_write_bytes(spath, buf.getvalue())
    atomic_write_bytes(wpath, encode_weights(model.weights))
    return wpath


def load_checkpoint(weights_path: str | Path) -> tuple[Model, AdanState, int]:
    """Restore (model, optimiser state, completed iterations) from a checkpoint weight file."""
    wpath = Path(weights_path)
    model = model_from_weights(load_weights(wpath))
    spath = wpath.with_name(wpath.name.removesuffix(".lkmn") + ".state.npz")
    if not spath.exists():
        return model, AdanState(), 0
    with np.load(spath) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    state = AdanState.from_arrays(
        arrays, betas=tuple(meta["betas"]), eps=meta["eps"], weight_decay=meta["weight_decay"], step=meta["step"],
        rejected_steps=meta.get("rejected_steps", 0),
    )
    return model, state, meta["iteration"]


def train_loop(
    model: Model,
    dataset: PairedDataset,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    state: AdanState | None = None,
    start_iteration: int = 0,
    on_record: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train ``model`` in place for iterations ``start_iteration+1 .. cfg.iterations``.

    Writes ``train_log.jsonl`` and checkpoints to ``out_dir`` when given.
    A non-finite loss raises :class:`TrainingDiverged`; weights from the
    last checkpoint on disk are left untouched.
    """
    if dataset.scale != model.config.scale:
        raise ConfigError(f"dataset scale {dataset.scale} does not match model scale {model.config.scale}")
    state = state or AdanState()
    params = model.weights
    result = TrainResult()
    out = Path(out_dir) if out_dir is not None else None
    logf = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        logf = open(out / "train_log.jsonl", "a" if start_iteration else "w")
    last_ckpt = None
    try:
        for it in range(start_iteration + 1, cfg.iterations + 1):
            lr_t, hr_t = sample_batch(dataset, cfg.batch, cfg.lr_patch, _batch_rng(cfg.seed, it), cfg.augment)
            lr = cosine_lr(it - 1, cfg.iterations, cfg.lr_init, cfg.lr_min)
            params.zero_grad()
            total, l1, fft = sr_loss(model(lr_t), hr_t, cfg.l1_weight, cfg.fft_weight)
            record = {"iter": it, "l1": l1.item(), "fft": fft.item(), "total": total.item(), "lr": lr}
            if not math.isfinite(record["total"]):
                raise TrainingDiverged(f"loss became {record['total']} at iteration {it}", it, last_ckpt)
            backward(total)
            if not adan_step(params, state, lr):
                log.warning("iteration %d: non-finite gradient, update skipped", it)
            result.records.append(record)
            if logf is not None:
                logf.write(json.dumps(record) + "\n")
                logf.flush()
            if on_record is not None:
                on_record(record)
            if out is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                last_ckpt = save_checkpoint(model, state, it, out)
                result.checkpoints.append(last_ckpt)
    finally:
        if logf is not None:
            logf.close()
    if out is not None:
        final = out / "final.lkmn"
        atomic_write_bytes(final, encode_weights(model.weights))
        result.final_weights = final
    return result
