"""Training objectives: conditional-GAN value, L2 content term, aleatoric NLL.

Conventions: discriminator scores are probabilities in (0, 1) on a 4x4 patch
grid; all means run over every element (batch x patches, or batch x pixels).
Logs are clamped away from 0 with ``eps`` so a saturated discriminator cannot
produce infinities.
"""

from __future__ import annotations

import torch

EPS_LOG = 1e-7


def _same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise ValueError(f"{names[0]} {tuple(a.shape)} and {names[1]} {tuple(b.shape)} must match")
    if a.numel() == 0:
        raise ValueError("empty batch")


def loss_cgan(real_scores, fake_scores, eps=EPS_LOG):
    """Conditional GAN value the discriminator maximizes:

        mean[ log D(x, y) ] + mean[ log(1 - D(x, G(x, m))) ]

    averaged over batch and the 4x4 patch grid.  The discriminator ascends
    this; the generator descends it through the fake term.
    """
    _same_shape(real_scores, fake_scores, ("real_scores", "fake_scores"))
    real = real_scores.clamp(eps, 1.0 - eps)
    fake = fake_scores.clamp(eps, 1.0 - eps)
    return torch.log(real).mean() + torch.log(1.0 - fake).mean()


def loss_l2(y, y_hat):
    """Mean squared error over batch, frames and pixels."""
    _same_shape(y, y_hat, ("y", "y_hat"))
    return ((y - y_hat) ** 2).mean()


def loss_mse(y, y_hat):
    """Supervised objective; identical formula to the GAN content term."""
    return loss_l2(y, y_hat)


def loss_generator_total(fake_scores, y, y_hat, lambda_l2, eps=EPS_LOG,
                         non_saturating=False):
    """Generator objective: adversarial term plus lambda-weighted L2.

    The default adversarial term is the generator's slice of the cGAN value,
    mean log(1 - D(x, G)), which the generator minimizes.  The non-saturating
    alternative minimizes -mean log D(x, G) instead; both share the L2 term.
    """
    if fake_scores.numel() == 0:
        raise ValueError("empty batch")
    if lambda_l2 < 0:
        raise ValueError("lambda_l2 must be >= 0")
    fake = fake_scores.clamp(eps, 1.0 - eps)
    if non_saturating:
        adv = -torch.log(fake).mean()
    else:
        adv = torch.log(1.0 - fake).mean()
    return adv + lambda_l2 * loss_l2(y, y_hat)


def loss_aleatoric(y, y_hat, s):
    """Heteroscedastic Gaussian NLL with per-pixel log-variance s:

        mean[ 0.5 * exp(-s) * (y - y_hat)^2 + 0.5 * s ]

    For a fixed residual r the minimizer is s* = log r^2, so exp(s) estimates
    the per-pixel error variance.
    """
    if s is None:
        raise ValueError("aleatoric loss needs a model with the log-variance head")
    _same_shape(y, y_hat, ("y", "y_hat"))
    _same_shape(y, s, ("y", "s"))
    return (0.5 * torch.exp(-s) * (y - y_hat) ** 2 + 0.5 * s).mean()
