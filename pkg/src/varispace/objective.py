"""Masked multi-positive contrastive losses with analytic gradients.

For one projection space with positive mask P:

    L_i = -(1/|P(i)|) sum_{p in P(i)} log softmax_j(sim(z_i, z_j)/tau)[p]

averaged over samples with |P(i)| > 0; the denominator runs over all j != i.
The composite objective evaluates the all-invariant space with P(i) and each
variant space with its restricted mask P_k(i), then averages the K+1 space
losses uniformly.

The printed per-sample form without the log (literal=True) is provided for
comparison; the log form is the training objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import ParameterError
from .views import PositiveMasks

log = logging.getLogger(__name__)


class DegenerateBatchError(ValueError):
    """Every sample has an empty positive set in the all-invariant space."""


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.1
    literal_form: bool = False   # drop the log, as a diagnostic variant

    def __post_init__(self):
        if self.temperature <= 0:
            raise ParameterError("temperature must be positive")


@dataclass
class LossBreakdown:
    all_invariant: float
    per_subspace: dict            # variant name -> loss value
    total: float
    contributing_counts: dict     # space name ("all" or variant) -> rows used
    grads: dict                   # head name -> dL_total/dZ  (NM, d)


def contrastive_loss(Z: np.ndarray, positives: np.ndarray, temperature: float,
                     literal: bool = False):
    """Returns (loss, dloss/dZ, n_contributing).

    Z rows must be unit-norm; `positives` must be 0/1 with zero diagonal.
    Raises DegenerateBatchError if no sample has a positive.
    """
    if temperature <= 0:
        raise ParameterError("temperature must be positive")
    nm = Z.shape[0]
    mask = np.asarray(positives)
    if mask.shape != (nm, nm):
        raise ParameterError("positive mask shape mismatch")
    p_count = mask.sum(axis=1)
    contributing = p_count > 0
    n_contrib = int(contributing.sum())
    if n_contrib == 0:
        raise DegenerateBatchError("no sample has a nonempty positive set")

    logits = (Z @ Z.T) / temperature
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1, keepdims=True)
    expv = np.exp(logits - row_max)
    denom = expv.sum(axis=1, keepdims=True)
    softmax = expv / denom

    safe_p = np.where(p_count > 0, p_count, 1)
    if literal:
        pos_weight = (mask * softmax).sum(axis=1)
        per_sample = -pos_weight / safe_p
    else:
        log_softmax = (logits - row_max) - np.log(denom)
        # mask is zero on the diagonal where log_softmax is -inf
        per_sample = -np.where(mask > 0, log_softmax, 0.0).sum(axis=1) / safe_p

    loss = float(per_sample[contributing].mean())

    # gradient w.r.t. the similarity logits, then chain to Z
    coeff = contributing.astype(Z.dtype) / (n_contrib * temperature)
    if literal:
        s_p = (mask * softmax).sum(axis=1, keepdims=True)
        G = -(softmax * (mask - s_p)) / safe_p[:, None]
    else:
        G = -mask / safe_p[:, None] + softmax
    G = G * coeff[:, None]
    G[~np.isfinite(G)] = 0.0
    dZ = (G + G.T) @ Z
    return loss, dZ, n_contrib


def composite_loss(projections: dict, masks: PositiveMasks,
                   config: LossConfig, variant_names) -> LossBreakdown:
    """Evaluate every subspace with its own mask and average uniformly.

    `projections` maps head names ("all" plus each variant) to unit-norm
    (NM, d) arrays; the k-th variant name pairs with masks.per_subspace[k].
    """
    variant_names = [v for v in variant_names if v in projections]
    if len(variant_names) != masks.per_subspace.shape[0] and variant_names:
        if len(variant_names) > masks.per_subspace.shape[0]:
            raise ParameterError("more variant heads than per-subspace masks")
    n_spaces = 1 + len(variant_names)

    loss_all, grad_all, count_all = contrastive_loss(
        projections["all"], masks.all_invariant, config.temperature,
        literal=config.literal_form)

    per = {}
    counts = {"all": count_all}
    grads = {"all": grad_all / n_spaces}
    total = loss_all
    for k, name in enumerate(variant_names):
        mask_k = masks.per_subspace[k]
        if not mask_k.any():
            log.warning("subspace %r has no positives in this batch; "
                        "contributes 0", name)
            per[name] = 0.0
            counts[name] = 0
            grads[name] = np.zeros_like(projections[name])
            continue
        lk, gk, ck = contrastive_loss(projections[name], mask_k,
                                      config.temperature,
                                      literal=config.literal_form)
        per[name] = lk
        counts[name] = ck
        grads[name] = gk / n_spaces
        total += lk
    total /= n_spaces
    return LossBreakdown(loss_all, per, total, counts, grads)
