"""Loss terms for the two-pathway conditional GAN.

All distance terms are mean absolute error (sums over samples absorbed into
the mean) so the weighting coefficients transfer across resolutions. The
adversarial terms use the numerically stable log-sigmoid form; the generator
side defaults to the non-saturating variant (maximize log D on fakes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class LossWeights:
    """Coefficients balancing the full generator objective.

    Defaults follow the reference recipe: content 100, feature matching 1,
    autoencoder reconstruction 100, latent alignment 25, decorrelation 1.
    """

    lambda_c: float = 100.0
    lambda_pi: float = 1.0
    lambda_ae: float = 100.0
    lambda_l: float = 25.0
    lambda_decov: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")


def adv_loss_d(d_real_logits: Tensor, d_fake_logits: Tensor) -> Tensor:
    """Discriminator loss: -mean log sigma(real) - mean log(1 - sigma(fake))."""
    real_term = T.logsigmoid(d_real_logits).mean()
    fake_term = T.logsigmoid(T.neg(d_fake_logits)).mean()  # log(1-sigma(x)) = logsigmoid(-x)
    return T.neg(T.add(real_term, fake_term))


def adv_loss_g(d_fake_logits: Tensor, saturating: bool = False) -> Tensor:
    """Generator adversarial loss.

    Non-saturating by default: -mean log sigma(fake). The saturating flag
    switches to the literal minimax term +mean log(1 - sigma(fake)).
    """
    if saturating:
        return T.logsigmoid(T.neg(d_fake_logits)).mean()
    return T.neg(T.logsigmoid(d_fake_logits).mean())


def content_loss(g_out: Tensor, y: Tensor) -> Tensor:
    """Mean absolute error between generated and target samples."""
    return T.sub(g_out, y).abs().mean()


def feature_matching_loss(pi_g: Tensor, pi_y: Tensor) -> Tensor:
    """Mean L1 between discriminator penultimate features; target side detached."""
    return T.sub(pi_g, pi_y.detach()).abs().mean()


def ae_loss(y: Tensor, g_ae_out: Tensor) -> Tensor:
    """Autoencoder-pathway reconstruction distance (L1 mean)."""
    return T.sub(g_ae_out, y).abs().mean()


def latent_loss(e_g: Tensor, e_ae: Tensor) -> Tensor:
    """Mean L1 between the two encoders' bottleneck outputs; grads reach both."""
    return T.sub(e_g, e_ae).abs().mean()


def decov_loss(h: Tensor) -> Tensor:
    """Off-diagonal penalty on the batch covariance of a representation.

    ``h`` is (N, d); covariance uses 1/N normalization after mean-centering.
    Value is half the squared Frobenius norm of the off-diagonal part.
    """
    if h.ndim != 2:
        raise T.ShapeError(f"decov_loss expects (N, d) input, got {h.shape}")
    n = h.shape[0]
    if n < 2:
        raise T.ShapeError("decov_loss needs a batch of at least 2 rows")
    hc = h.data - h.data.mean(axis=0, keepdims=True)
    cov = (hc.T @ hc) / n
    off = cov.copy()
    np.fill_diagonal(off, 0.0)
    value = 0.5 * float((off * off).sum())

    def backward(g):
        # d/dh of 0.5*||offdiag(C)||^2 = (2/N) * hc @ offdiag(C);
        # the centering correction vanishes because hc has zero column sums
        return [(h, float(g) * (2.0 / n) * (hc @ off))]

    return T._wrap(np.asarray(value), (h,), backward)


def total_loss_rocgan(adv_g: Tensor, content: Tensor, feat: Tensor, w: LossWeights,
                      ae: Tensor | None = None, latent: Tensor | None = None,
                      decov: Tensor | None = None) -> Tensor:
    """Weighted generator objective; omitted parts contribute nothing.

    With ae/latent/decov absent (or their weights zero) this is exactly the
    baseline conditional GAN objective.
    """
    total = T.add(adv_g, T.add(T.mul(content, w.lambda_c), T.mul(feat, w.lambda_pi)))
    if ae is not None:
        total = T.add(total, T.mul(ae, w.lambda_ae))
    if latent is not None:
        total = T.add(total, T.mul(latent, w.lambda_l))
    if decov is not None:
        total = T.add(total, T.mul(decov, w.lambda_decov))
    return total
