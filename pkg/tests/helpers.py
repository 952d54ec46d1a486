"""Shared fixtures-by-hand: miniature models, random window batches, kink-aware gradient checks."""

from contextlib import contextmanager

import numpy as np

from music2dance.autodiff import tensor as tensor_ops
from music2dance.autodiff.gradcheck import analytic_grad, numeric_grad, relative_error
from music2dance.models import (
    MambaConfig,
    MambaTranslator,
    TransformerConfig,
    TransformerTranslator,
    WindowBatch,
)
from music2dance.training import l2_loss


def tiny_transformer(layers=2, window=8, seed=0, **kw):
    cfg = dict(layers=layers, heads=2, embed_dim=16, ff_dim=32, window=window, dropout=0.0,
               position_vocab=64)
    cfg.update(kw)
    return TransformerTranslator(TransformerConfig(**cfg), seed=seed)


def tiny_mamba(layers=2, window=8, seed=0, **kw):
    cfg = dict(layers=layers, embed_dim=16, ff_dim=32, window=window, dropout=0.0)
    cfg.update(kw)
    return MambaTranslator(MambaConfig(**cfg), seed=seed)


def random_batch(rng, size, window, valid=None, start=0):
    valid = np.full(size, window) if valid is None else np.asarray(valid)
    slots = np.arange(window)
    live = slots[None, :] < valid[:, None]
    return WindowBatch(
        audio=rng.uniform(0.1, 0.9, size=(size, window, 438)) * live[..., None],
        shifted_poses=rng.uniform(-np.pi, np.pi, size=(size, window, 4)) * live[..., None],
        valid_len=valid,
        audio_positions=(start + slots + 1) * live,
        pose_positions=np.where(slots > 0, start + slots, 0) * live,
        target_poses=rng.uniform(-np.pi, np.pi, size=(size, window, 4)),
    )


@contextmanager
def relu_patterns(log):
    """Record the sign pattern of every relu input evaluated inside the block."""
    original = tensor_ops.relu

    def recording(x):
        log.append(np.asarray(tensor_ops.as_tensor(x).data > 0).tobytes())
        return original(x)

    tensor_ops.relu = recording
    try:
        yield
    finally:
        tensor_ops.relu = original


def model_gradient_error(model, batch, rng, coords=2, eps=1e-4, floor=1e-6, tries=20):
    """Worst relative error of the L2-loss gradient over random parameter coordinates.

    Uses the five-point central stencil in float64. A coordinate whose stencil
    flips any relu sign (the finite difference would straddle a kink) is
    replaced by a fresh random coordinate.
    """
    model.astype(np.float64)
    model.eval()

    def loss():
        return l2_loss(model(batch), batch.target_poses, batch.valid_len)

    params = model.parameters()
    analytic = analytic_grad(loss, params)
    base = []
    with relu_patterns(base):
        loss()
    worst = 0.0
    for p, a in zip(params, analytic):
        chosen = []
        for j in rng.permutation(p.size)[:coords + tries]:
            seen = []
            with relu_patterns(seen):
                n = numeric_grad(loss, [p], eps, [[j]], order=4)[0]
            if any(s != b for s, b in zip(seen, base * 4)):
                continue
            worst = max(worst, relative_error(a, n, floor))
            chosen.append(j)
            if len(chosen) == min(coords, p.size):
                break
    return worst
