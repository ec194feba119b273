"""Mutual-information objectives for both training stages.

All ``*_loss`` helpers return quantities to be *maximized* except the
adversarial pair, which follows the min/max roles spelled out in
``adversarial_losses``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import networks as nn
from .autodiff import ShapeError, Tensor, ops
from .model import ModelBundle

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class LossCoefficients:
    alpha_sh: float = 0.5
    beta_sh: float = 1.0
    gamma: float = 0.1
    alpha_ex: float = 0.5
    beta_ex: float = 1.0
    lambda_adv: float = 0.025

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")


def jsd_mi_lower_bound(pos_scores: Tensor, neg_scores: Tensor) -> Tensor:
    """E_joint[-softplus(-T)] - E_marginal[softplus(T)]; supremum 0, value -2 ln 2 at T == 0."""
    if pos_scores.size == 0 or neg_scores.size == 0:
        raise ShapeError("jsd_mi_lower_bound: empty score array")
    pos_term = ops.mean(ops.softplus(-pos_scores))
    neg_term = ops.mean(ops.softplus(neg_scores))
    return -(pos_term + neg_term)


def make_negative_pairing(batch_size: int, seed) -> np.ndarray:
    """Fixed-point-free permutation: row i is paired with row ``perm[i]``.

    A seeded shuffle fixes a visiting order; each element then points to
    its successor in that order, which is a single cycle through the batch.
    """
    if batch_size < 2:
        raise ValueError(f"make_negative_pairing: batch_size must be >= 2, got {batch_size}")
    order = np.random.default_rng(seed).permutation(batch_size)
    perm = np.empty(batch_size, dtype=np.int64)
    perm[order] = np.roll(order, -1)
    return perm


def global_mi_loss(fmap: Tensor, z: Tensor, params, pairing: np.ndarray) -> Tensor:
    summary = nn.global_summary(fmap, params)
    pos = nn.global_head(summary, z, params)
    neg = nn.global_head(summary, ops.take_rows(z, pairing), params)
    return jsd_mi_lower_bound(pos, neg)


def local_mi_loss(fmap: Tensor, z: Tensor, params, pairing: np.ndarray) -> Tensor:
    embedded = nn.local_embed(fmap, params)
    pos = nn.local_head(embedded, z, params)
    neg = nn.local_head(embedded, ops.take_rows(z, pairing), params)
    return jsd_mi_lower_bound(pos, neg)


def _as_images(a) -> Tensor:
    return a if isinstance(a, Tensor) else Tensor(a)


def shared_stage_loss(batch, model: ModelBundle, coeffs: LossCoefficients,
                      pairings: tuple[np.ndarray, np.ndarray], non_ssr: bool = False):
    """Cross-MI objective of the first stage.

    Image X is scored against S_Y and image Y against S_X (switched shared
    representations); ``non_ssr`` pairs each image with its own code.
    Returns (objective, components) where components are python floats.
    """
    fx, sx = nn.encode_shared(_as_images(batch.images_x), model.net("shared_encoder", "x"))
    fy, sy = nn.encode_shared(_as_images(batch.images_y), model.net("shared_encoder", "y"))
    zx, zy = (sx, sy) if non_ssr else (sy, sx)
    px, py = pairings

    terms = {}
    parts = []
    if coeffs.alpha_sh > 0:
        terms["L_global_x"] = global_mi_loss(fx, zx, model.net("shared_global", "x"), px)
        terms["L_global_y"] = global_mi_loss(fy, zy, model.net("shared_global", "y"), py)
        parts.append(coeffs.alpha_sh * (terms["L_global_x"] + terms["L_global_y"]))
    if coeffs.beta_sh > 0:
        terms["L_local_x"] = local_mi_loss(fx, zx, model.net("shared_local", "x"), px)
        terms["L_local_y"] = local_mi_loss(fy, zy, model.net("shared_local", "y"), py)
        parts.append(coeffs.beta_sh * (terms["L_local_x"] + terms["L_local_y"]))
    terms["L1"] = ops.mean(ops.absolute(sx - sy))
    if coeffs.gamma > 0:
        parts.append(-coeffs.gamma * terms["L1"])

    if not parts:
        raise ValueError("shared_stage_loss: every coefficient is zero")
    objective = parts[0]
    for p in parts[1:]:
        objective = objective + p
    components = {k: v.item() for k, v in terms.items()}
    components["objective"] = objective.item()
    return objective, components


def adversarial_losses(s: Tensor, e: Tensor, disc_params, pairing: np.ndarray,
                       non_saturating: bool = False):
    """Joint-vs-marginal game between a discriminator and the exclusive encoder.

    Marginal samples pair s with pairing-shuffled e. The discriminator
    minimizes ``disc_loss`` = -(E_marg[log D] + E_joint[log(1 - D)]) on
    detached inputs. ``enc_loss`` is the adversarial value L_adv seen by the
    encoder (discriminator detached); the encoder minimizes it. With
    ``non_saturating`` it is replaced by -E_joint[log D].
    """
    if s.shape[0] != e.shape[0]:
        raise ShapeError(f"adversarial_losses: row mismatch {s.shape} vs {e.shape}")

    disc_loss = discriminator_loss(s, e, disc_params, pairing)
    sd = s.detach()
    frozen = nn.detached(disc_params)
    joint_e = nn.discriminator_logits(sd, e, frozen)
    if non_saturating:
        enc_loss = -ops.mean(_log_d(joint_e))
    else:
        marg_e = nn.discriminator_logits(sd, ops.take_rows(e, pairing), frozen)
        enc_loss = ops.mean(_log_d(marg_e)) + ops.mean(_log_one_minus_d(joint_e))
    return disc_loss, enc_loss


def _log_d(logits: Tensor) -> Tensor:
    # log sigmoid, computed stably
    return -ops.softplus(-logits)


def _log_one_minus_d(logits: Tensor) -> Tensor:
    return -ops.softplus(logits)


def discriminator_loss(s: Tensor, e: Tensor, disc_params, pairing: np.ndarray) -> Tensor:
    """-(E_marg[log D] + E_joint[log(1 - D)]) on detached inputs; the discriminator minimizes it."""
    if s.shape[0] != e.shape[0]:
        raise ShapeError(f"discriminator_loss: row mismatch {s.shape} vs {e.shape}")
    sd, ed = s.detach(), e.detach()
    marg = nn.discriminator_logits(sd, ops.take_rows(ed, pairing), disc_params)
    joint = nn.discriminator_logits(sd, ed, disc_params)
    return -(ops.mean(_log_d(marg)) + ops.mean(_log_one_minus_d(joint)))


def discriminator_accuracy(s: Tensor, e: Tensor, disc_params, pairing: np.ndarray) -> float:
    """Balanced accuracy of labelling marginal pairs real and joint pairs fake."""
    sd, ed = s.detach(), e.detach()
    marg = nn.discriminator_logits(sd, ops.take_rows(ed, pairing), disc_params).data
    joint = nn.discriminator_logits(sd, ed, disc_params).data
    return 0.5 * (float((marg > 0).mean()) + float((joint <= 0).mean()))


def exclusive_representations(batch, model: ModelBundle):
    """Frozen S, plus exclusive feature maps and codes, for both domains."""
    out = {}
    for d, images in (("x", batch.images_x), ("y", batch.images_y)):
        _, s = nn.encode_shared(_as_images(images), nn.detached(model.net("shared_encoder", d)))
        fmap, e = nn.encode_exclusive(_as_images(images), model.net("exclusive_encoder", d))
        out[d] = (s.detach(), fmap, e)
    return out


def exclusive_stage_loss(batch, model: ModelBundle, coeffs: LossCoefficients,
                         pairings: tuple[np.ndarray, np.ndarray], reps=None,
                         non_saturating: bool = False):
    """Second-stage objective: MI(image; (S, E)) - lambda_adv * (L_adv^X + L_adv^Y).

    Gradients reach the exclusive encoders and exclusive statistics networks
    only; the discriminators are read as constants. ``reps`` lets a caller
    reuse one encoder forward pass across the discriminator and encoder
    steps of a batch.
    """
    reps = reps if reps is not None else exclusive_representations(batch, model)
    terms, parts = {}, []
    for d, pairing in zip(("x", "y"), pairings):
        s, fmap, e = reps[d]
        r = ops.concat([s, e], axis=1)
        if coeffs.alpha_ex > 0:
            terms[f"L_global_{d}"] = global_mi_loss(fmap, r, model.net("exclusive_global", d), pairing)
            parts.append(coeffs.alpha_ex * terms[f"L_global_{d}"])
        if coeffs.beta_ex > 0:
            terms[f"L_local_{d}"] = local_mi_loss(fmap, r, model.net("exclusive_local", d), pairing)
            parts.append(coeffs.beta_ex * terms[f"L_local_{d}"])
        _, enc_adv = adversarial_losses(s, e, model.net("discriminator", d), pairing, non_saturating)
        terms[f"L_adv_{d}"] = enc_adv
        if coeffs.lambda_adv > 0:
            parts.append(-coeffs.lambda_adv * enc_adv)

    if not parts:
        raise ValueError("exclusive_stage_loss: every coefficient is zero")
    objective = parts[0]
    for p in parts[1:]:
        objective = objective + p
    components = {k: v.item() for k, v in terms.items()}
    components["objective"] = objective.item()
    return objective, components
