"""The three disentanglement mechanisms as standalone, testable blocks.

* quantize: nearest-code lookup with a straight-through view, so decoder
  gradients reach the encoder unchanged while the codebook is trained only
  through its own loss term.
* vq_loss: reconstruction (mean L1 + mean squared) plus stop-gradient
  codebook and commitment terms; all three mean-reduced over elements.
* instance_norm: per-channel standardization over time, the style-stripping
  step.
* cpc_loss: InfoNCE over K prediction horizons with negatives sampled from
  the batch pool.

Sequence tensors here are (B, T, D).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from noisevc import autograd as ag, kernels, nn
from noisevc.autograd import Tensor
from noisevc.errors import DegenerateInputError, SamplingError, ShapeError

IN_EPS = 1e-5
DEFAULT_BETA = 0.25


class Codebook(nn.Module):
    """V learnable code vectors of dimension D, initialized uniform in [-1/V, 1/V]."""

    def __init__(self, n_codes: int, dim: int, rng: np.random.Generator):
        if n_codes < 1 or dim < 1:
            raise ShapeError("codebook needs n_codes >= 1 and dim >= 1")
        self.n_codes = n_codes
        self.dim = dim
        bound = 1.0 / n_codes
        self.codes = nn._param(rng.uniform(-bound, bound, size=(n_codes, dim)))

    def named_params(self):
        return {"codes": self.codes}


@dataclass
class ContentEmbedding:
    """Quantized sequence: code values, chosen indices, and the decoder-facing
    straight-through view that carries encoder gradients."""

    quantized: Tensor          # (..., D), gradient flows to the codebook
    indices: np.ndarray        # (...,) int64
    straight_through: Tensor   # (..., D), gradient flows to the encoder

    def __post_init__(self):
        if not np.array_equal(self.quantized.shape, self.straight_through.shape):
            raise ShapeError("quantized and straight-through views must match")


@dataclass
class LossBundle:
    reconstruction: float
    codebook_term: float
    commitment_term: float
    cpc: float
    total: float

    def __post_init__(self):
        parts = self.reconstruction + self.codebook_term + self.commitment_term + self.cpc
        if not np.all(np.isfinite([self.reconstruction, self.codebook_term,
                                   self.commitment_term, self.cpc, self.total])):
            raise ShapeError("loss bundle contains non-finite terms")
        if abs(self.total - parts) > 1e-6 * max(1.0, abs(parts)):
            raise ShapeError("total loss does not equal the sum of its parts")


def quantize(e: Tensor, book: Codebook) -> ContentEmbedding:
    """Map each D-vector to its nearest code (squared Euclidean, lowest index wins)."""
    if e.shape[-1] != book.dim:
        raise ShapeError(f"encoded dim {e.shape[-1]} != codebook dim {book.dim}")
    flat = e.data.reshape(-1, book.dim)
    idx = kernels.nearest_code(flat, book.codes.data)
    idx = idx.reshape(e.shape[:-1])
    q = ag.take_rows(book.codes, idx)
    # Straight-through: value is exactly the code vector, gradient passes to e
    # unchanged and never touches the codebook.
    st = Tensor(q.data, parents=(e,))
    st._backward = lambda g: e._accum(g)
    return ContentEmbedding(quantized=q, indices=idx, straight_through=st)


def vq_loss(x: Tensor, x_hat: Tensor, e: Tensor, q: ContentEmbedding, beta: float = DEFAULT_BETA):
    """Eq.-style VQ objective, mean-reduced.

    Returns (reconstruction, codebook_term, commitment_term) as graph
    tensors; stop-gradients make the codebook term blind to the encoder and
    the commitment term blind to the codebook.
    """
    if x.shape != x_hat.shape:
        raise ShapeError(f"target {x.shape} vs reconstruction {x_hat.shape}")
    if e.shape != q.quantized.shape:
        raise ShapeError(f"encoder output {e.shape} vs quantized {q.quantized.shape}")
    if beta < 0:
        raise ShapeError("beta must be non-negative")
    diff = x - x_hat
    reconstruction = diff.abs().mean() + (diff * diff).mean()
    code_err = e.detach() - q.quantized
    codebook_term = (code_err * code_err).mean()
    commit_err = e - q.quantized.detach()
    commitment_term = (commit_err * commit_err).mean() * beta
    return reconstruction, codebook_term, commitment_term


def instance_norm(e: Tensor, eps: float = IN_EPS) -> Tensor:
    """Standardize every channel over time: (e - mean_t) / max(std_t, eps).

    The epsilon is a clamp rather than an addend: an additive epsilon breaks
    affine invariance at ~1e-4 for small gains, while the clamp keeps
    IN(a*e + b) == IN(e) exact (to rounding) whenever a*std >= eps and still
    protects zero-variance channels.
    """
    if e.ndim < 2 or e.shape[-2] < 2:
        raise DegenerateInputError("instance norm needs at least 2 frames")
    time_axis = e.ndim - 2
    mu = e.mean(axis=time_axis, keepdims=True)
    centered = e - mu
    var = (centered * centered).mean(axis=time_axis, keepdims=True)
    # clamp before sqrt so zero-variance channels get a zero (not NaN) gradient
    return centered / ag.clamp_min(var, eps * eps).sqrt()


class CPCModule(nn.Module):
    """Recurrent context network plus K affine predictors scoring future codes."""

    def __init__(
        self,
        dim: int,
        context_dim: int,
        horizon: int,
        n_negatives: int,
        rng: np.random.Generator,
    ):
        if horizon < 1 or n_negatives < 1:
            raise ShapeError("horizon and n_negatives must be >= 1")
        self.dim = dim
        self.context_dim = context_dim
        self.horizon = horizon
        self.n_negatives = n_negatives
        self.context_net = nn.LSTM(dim, context_dim, rng)
        self.predictors = [nn.Linear(context_dim, dim, rng) for _ in range(horizon)]

    def context(self, q: Tensor) -> Tensor:
        return self.context_net(q)

    def named_params(self):
        out = dict(nn.merge_params(("context", self.context_net)))
        for k, pred in enumerate(self.predictors):
            for name, p in pred.named_params().items():
                out[f"pred{k + 1}.{name}"] = p
        return out


def sample_negative_indices(
    rng: np.random.Generator,
    pool_size: int,
    positives: np.ndarray,
    n_negatives: int,
    max_redraws: int = 200,
) -> np.ndarray:
    """Uniform distinct indices in [0, pool_size) excluding each row's positive."""
    if pool_size - 1 < n_negatives:
        raise SamplingError(
            f"pool of {pool_size} cannot supply {n_negatives} distinct negatives"
        )
    pos = positives.reshape(-1)
    draws = rng.integers(0, pool_size - 1, size=(pos.size, n_negatives))
    draws = draws + (draws >= pos[:, None])
    for _ in range(max_redraws):
        srt = np.sort(draws, axis=1)
        bad = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
        if not bad.any():
            break
        redraw = rng.integers(0, pool_size - 1, size=(int(bad.sum()), n_negatives))
        draws[bad] = redraw + (redraw >= pos[bad, None])
    else:
        raise SamplingError("could not draw distinct negatives")
    return draws.reshape(positives.shape + (n_negatives,))


def infonce_from_logits(logits: Tensor) -> Tensor:
    """Mean -log softmax of the positive (index 0 on the last axis)."""
    logp = logits - ag.logsumexp(logits, axis=-1, keepdims=True)
    return -(logp[..., 0].mean())


def cpc_loss(
    q_seq: Tensor,
    module: CPCModule,
    rng: np.random.Generator,
    same_utterance_only: bool = False,
) -> Tensor:
    """InfoNCE averaged over valid (t, k): each predictor must score the true
    future code above sampled negatives.

    q_seq is (B, T, D) — typically the straight-through view, so the loss
    shapes the encoder as well as the context network. Negatives come from
    other time steps of the whole batch (or only the same utterance), never
    the positive frame itself.
    """
    if q_seq.ndim != 3:
        raise ShapeError("cpc_loss expects (B, T, D)")
    b, t, d = q_seq.shape
    if t <= module.horizon:
        raise DegenerateInputError(
            f"sequence length {t} must exceed the prediction horizon {module.horizon}"
        )
    ctx = module.context(q_seq)
    pool = q_seq.reshape(b * t, d)
    loss_sum = None
    n_terms = 0
    for k in range(1, module.horizon + 1):
        pred = module.predictors[k - 1](ctx[:, : t - k, :])        # (B, T-k, D)
        rows = np.arange(b)[:, None] * t
        pos = rows + np.arange(k, t)[None, :]                      # (B, T-k) flat ids
        if same_utterance_only:
            local_pos = pos - rows
            neg_local = sample_negative_indices(rng, t, local_pos, module.n_negatives)
            neg = neg_local + rows[:, :, None]
        else:
            neg = sample_negative_indices(rng, b * t, pos, module.n_negatives)
        cand_idx = np.concatenate([pos[:, :, None], neg], axis=2)  # (B, T-k, 1+n)
        cands = ag.take_rows(pool, cand_idx)                       # (B, T-k, 1+n, D)
        logits = (cands * pred.reshape(b, t - k, 1, d)).sum(axis=-1)
        logp = logits - ag.logsumexp(logits, axis=-1, keepdims=True)
        term = -(logp[..., 0].sum())
        loss_sum = term if loss_sum is None else loss_sum + term
        n_terms += b * (t - k)
    return loss_sum / float(n_terms)
