"""Finite-difference gradient checking helpers shared across test files."""

import numpy as np

from varispace.model import Model, ModelConfig
from varispace.objective import LossConfig, composite_loss
from varispace.views import PositiveMasks, ViewBatch, build_positive_masks


def tiny_model_config(topology="split_trunk") -> ModelConfig:
    return ModelConfig(topology=topology, input_shape=(6, 4),
                       conv_channels=(2, 3), embed_dim=4, head_hidden=0,
                       proj_dim=3, split_blocks=1)


def random_masks(rng, n, m, k) -> PositiveMasks:
    anchor_id = np.repeat(np.arange(n), m)
    t = rng.integers(0, 2, size=(n * m, k))
    batch = ViewBatch(np.zeros((n * m, 1, 1), dtype=np.float32),
                      anchor_id, [], t, m)
    return build_positive_masks(batch)


def total_loss(model: Model, x: np.ndarray, masks: PositiveMasks,
               loss_config: LossConfig, variant_names):
    bundle = model.forward(x, train=False)
    return composite_loss(bundle.projections, masks, loss_config,
                          variant_names)


def max_relative_gradient_error(seed: int, topology="split_trunk",
                                eps: float = 1e-6) -> float:
    """Analytic vs central finite-difference gradients through a tiny
    float64 model under the composite loss; returns the worst relative
    error over all parameters."""
    rng = np.random.default_rng(seed)
    config = tiny_model_config(topology)
    model = Model(config, seed=seed, dtype=np.float64)
    # randomize biases so no pre-normalization projection sits near zero,
    # where the normalization gradient would swamp finite differences
    for name, p in model.parameters().items():
        if name.endswith(".b"):
            model.set_parameter(name, rng.normal(scale=0.5, size=p.shape))
    n, m, k = 2, 2, 2
    x = rng.normal(size=(n * m,) + config.input_shape)
    masks = random_masks(rng, n, m, k)
    loss_config = LossConfig(temperature=0.5)
    variant_names = list(config.variant_names)

    breakdown = total_loss(model, x, masks, loss_config, variant_names)
    model.backward(breakdown.grads)
    analytic = {name: g.copy() for name, g in model.gradients().items()}

    worst = 0.0
    params = model.parameters()
    for name, p in params.items():
        flat = p.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = total_loss(model, x, masks, loss_config, variant_names).total
            flat[idx] = orig - eps
            dn = total_loss(model, x, masks, loss_config, variant_names).total
            flat[idx] = orig
            fd = (up - dn) / (2 * eps)
            an = analytic[name].reshape(-1)[idx]
            # the 1e-6 floor keeps central-difference cancellation noise
            # (loss eps ~1e-16 over a 2e-6 step) out of the relative error
            scale = max(abs(fd), abs(an), 1e-6)
            worst = max(worst, abs(fd - an) / scale)
    return worst
