"""Two-stage training.

Stage 1 fits the shared encoders and their statistics networks by
maximizing the cross-MI objective. Stage 2 freezes the shared encoders and
fits the exclusive encoders, alternating one discriminator step and one
encoder step per batch.

Every random choice (batch order, negative pairings) is derived from
``(seed, stage, step)``, so a run resumed from a checkpoint replays the
same sequence as an uninterrupted one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import NaNGradientError, NonFiniteError, adam_step, backward
from .checkpoint import save_checkpoint
from .data import PairDataset
from .model import ModelBundle
from .objectives import (LossCoefficients, discriminator_accuracy, discriminator_loss,
                         exclusive_representations, exclusive_stage_loss, make_negative_pairing,
                         shared_stage_loss)

LOG_COLUMNS = ("step", "L_global_x", "L_global_y", "L_local_x", "L_local_y", "L1", "L_adv_x", "L_adv_y", "objective")


@dataclass(frozen=True)
class TrainConfig:
    dataset: str = "glyph"
    n_pairs: int = 6000
    batch_size: int = 64
    lr: float = 1e-4
    steps_shared: int = 3000
    steps_exclusive: int = 3000
    shared_dim: int = 64
    exclusive_dim: int = 8
    coeffs: LossCoefficients = field(default_factory=LossCoefficients)
    seed: int = 0
    weight_sharing: bool = False
    non_ssr: bool = False
    non_saturating: bool = False
    checkpoint_interval: int = 1000

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if min(self.steps_shared, self.steps_exclusive) < 0:
            raise ValueError("step counts must be >= 0")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")


class TrainingDiverged(FloatingPointError):
    """A non-finite loss or gradient; ``last_checkpoint`` is the newest good state on disk (or None)."""

    def __init__(self, message: str, step: int, last_checkpoint: Path | None):
        hint = f"; last good checkpoint: {last_checkpoint}" if last_checkpoint else "; no checkpoint written yet"
        super().__init__(message + hint)
        self.step = step
        self.last_checkpoint = last_checkpoint


def batch_indices(n_items: int, batch_size: int, seed: int, stage: int, step: int) -> np.ndarray:
    """Rows of batch ``step``: epochs are reshuffled from the seed, the ragged tail is dropped."""
    per_epoch = n_items // batch_size
    if per_epoch == 0:
        raise ValueError(f"dataset of {n_items} pairs is smaller than one batch of {batch_size}")
    epoch, k = divmod(step, per_epoch)
    order = np.random.default_rng([seed, stage, epoch]).permutation(n_items)
    return order[k * batch_size:(k + 1) * batch_size]


def step_pairings(batch_size: int, seed: int, stage: int, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Independent negative pairings for the x and y domains."""
    return tuple(make_negative_pairing(batch_size, [seed, stage, step, d]) for d in (0, 1))


class CSVLog:
    """Append-only per-step component log."""

    def __init__(self, path):
        self.path = Path(path) if path is not None else None
        if self.path is not None and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(LOG_COLUMNS)

    def write(self, row: dict) -> None:
        if self.path is None:
            return
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row.get(c)) for c in LOG_COLUMNS])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class _Checkpointer:
    def __init__(self, directory, stage: int, interval: int):
        self.dir = Path(directory) if directory is not None else None
        self.stage = stage
        self.interval = interval
        self.last: Path | None = None
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)
            existing = self.dir / f"stage{stage}_last.midz"
            if existing.exists():
                self.last = existing

    def maybe_save(self, bundle: ModelBundle, step: int, final: bool = False) -> None:
        if self.dir is None or not (final or step % self.interval == 0):
            return
        path = self.dir / f"stage{self.stage}_last.midz"
        save_checkpoint(bundle, path)
        self.last = path


def _configure_optimizers(bundle: ModelBundle, config: TrainConfig) -> None:
    for st in bundle.optim.values():
        st.lr = config.lr


def _check_bundle(bundle: ModelBundle, data: PairDataset, config: TrainConfig) -> None:
    if tuple(bundle.image_shape) != tuple(data.image_shape):
        raise ValueError(f"model expects images {bundle.image_shape}, data has {data.image_shape}")
    if (bundle.shared_dim, bundle.exclusive_dim) != (config.shared_dim, config.exclusive_dim):
        raise ValueError("model representation sizes differ from the config")


def new_bundle(data: PairDataset, config: TrainConfig) -> ModelBundle:
    return ModelBundle.create(data.image_shape, config.shared_dim, config.exclusive_dim,
                              config.weight_sharing, config.seed, config.lr)


def train_shared(data: PairDataset, config: TrainConfig, bundle: ModelBundle | None = None,
                 log_path=None, checkpoint_dir=None,
                 progress: Callable[[int, dict], None] | None = None) -> ModelBundle:
    """Run stage 1 until ``config.steps_shared`` optimizer steps have been taken."""
    bundle = bundle if bundle is not None else new_bundle(data, config)
    _check_bundle(bundle, data, config)
    if bundle.stage > 1:
        raise ValueError("bundle has already entered stage 2")
    bundle.stage = 1
    _configure_optimizers(bundle, config)
    params = bundle.flat_params(("shared_encoder", "shared_global", "shared_local"))
    state = bundle.optim["shared"]
    log = CSVLog(log_path)
    ckpt = _Checkpointer(checkpoint_dir, 1, config.checkpoint_interval)
    B = config.batch_size

    while state.step < config.steps_shared:
        step = state.step
        batch = data.batch(batch_indices(len(data), B, config.seed, 1, step))
        try:
            objective, comps = shared_stage_loss(batch, bundle, config.coeffs,
                                                 step_pairings(B, config.seed, 1, step), config.non_ssr)
            if not np.isfinite(objective.item()):
                raise NonFiniteError("stage-1 objective is not finite")
            grads = backward(-objective, params)
            adam_step(params, grads, state)
        except (NonFiniteError, NaNGradientError) as exc:
            raise TrainingDiverged(f"stage 1 step {step}: {exc}", step, ckpt.last) from exc
        row = {"step": state.step, **comps}
        log.write(row)
        ckpt.maybe_save(bundle, state.step)
        if progress is not None:
            progress(state.step, row)
    ckpt.maybe_save(bundle, state.step, final=True)
    return bundle


def train_exclusive(data: PairDataset, config: TrainConfig, bundle: ModelBundle,
                    log_path=None, checkpoint_dir=None,
                    progress: Callable[[int, dict], None] | None = None) -> ModelBundle:
    """Run stage 2 on top of a stage-1 bundle; the shared encoders stay frozen."""
    if bundle is None or bundle.stage < 1:
        raise ValueError("train_exclusive needs a stage-1 bundle")
    _check_bundle(bundle, data, config)
    bundle.stage = 2
    bundle.freeze_shared()
    _configure_optimizers(bundle, config)
    enc_params = bundle.flat_params(("exclusive_encoder", "exclusive_global", "exclusive_local"))
    disc_params = bundle.flat_params(("discriminator",))
    enc_state, disc_state = bundle.optim["exclusive"], bundle.optim["discriminator"]
    if enc_state.step != disc_state.step:
        raise ValueError(f"stage-2 step counters disagree: encoder {enc_state.step}, discriminator {disc_state.step}")
    log = CSVLog(log_path)
    ckpt = _Checkpointer(checkpoint_dir, 2, config.checkpoint_interval)
    B = config.batch_size

    while enc_state.step < config.steps_exclusive:
        step = enc_state.step
        batch = data.batch(batch_indices(len(data), B, config.seed, 2, step))
        pairings = step_pairings(B, config.seed, 2, step)
        try:
            reps = exclusive_representations(batch, bundle)
            acc = []
            d_loss = None
            for d, pairing in zip(("x", "y"), pairings):
                s, _, e = reps[d]
                net = bundle.net("discriminator", d)
                acc.append(discriminator_accuracy(s, e, net, pairing))
                term = discriminator_loss(s, e, net, pairing)
                d_loss = term if d_loss is None else d_loss + term
            if not np.isfinite(d_loss.item()):
                raise NonFiniteError("discriminator loss is not finite")
            adam_step(disc_params, backward(d_loss, disc_params), disc_state)

            objective, comps = exclusive_stage_loss(batch, bundle, config.coeffs, pairings, reps=reps,
                                                    non_saturating=config.non_saturating)
            if not np.isfinite(objective.item()):
                raise NonFiniteError("stage-2 objective is not finite")
            adam_step(enc_params, backward(-objective, enc_params), enc_state)
        except (NonFiniteError, NaNGradientError) as exc:
            raise TrainingDiverged(f"stage 2 step {step}: {exc}", step, ckpt.last) from exc
        row = {"step": enc_state.step, **comps, "disc_loss": d_loss.item(),
               "disc_accuracy": float(np.mean(acc))}
        log.write(row)
        ckpt.maybe_save(bundle, enc_state.step)
        if progress is not None:
            progress(enc_state.step, row)
    ckpt.maybe_save(bundle, enc_state.step, final=True)
    return bundle


def train(data: PairDataset, config: TrainConfig, out_dir=None,
          progress: Callable[[int, dict], None] | None = None) -> ModelBundle:
    """Both stages back to back; logs and checkpoints go under ``out_dir`` when given."""
    out = Path(out_dir) if out_dir is not None else None
    log = out / "train_log.csv" if out else None
    bundle = train_shared(data, config, log_path=log, checkpoint_dir=out, progress=progress)
    return train_exclusive(data, config, bundle, log_path=log, checkpoint_dir=out, progress=progress)
