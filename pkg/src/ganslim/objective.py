"""The three-term compression objective and its per-variable split views.

The full objective is
    gan term + distill_weight * distillation term + sparsity_weight * L1(scales)
where the gan term is the usual two-sided log loss. Optimization never touches
the full sum directly: the generator weights minimize the fake-side log loss
plus distillation, the normalization scales minimize the same smooth part (the
L1 piece is handled by the proximal step), and the discriminator ascends the
two-sided log loss with the fake batch held constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .distill import FeatureExtractor, distill_loss
from .models import QuantRuntime, SpecNet
from .sparsity import l1_norm

__all__ = [
    "LossBreakdown",
    "PROB_FLOOR",
    "gan_loss_discriminator",
    "loss_gamma_fidelity",
    "loss_w",
    "safe_log",
    "total_loss_report",
]

# probabilities are floored before logs; every clamp is counted, never silent
PROB_FLOOR = 1e-7


def safe_log(p: torch.Tensor) -> tuple[torch.Tensor, int]:
    """log of probabilities clamped into [PROB_FLOOR, 1 - PROB_FLOOR].

    Returns the log tensor and how many elements had to be clamped.
    """
    clamped = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    n_clamped = int((p != clamped).sum())
    return torch.log(clamped), n_clamped


@dataclass(frozen=True)
class LossBreakdown:
    """Reporting view of the combined objective: total = gan + distill_weight *
    distill + sparsity_weight * channel_l1."""

    gan: float
    distill: float
    channel_l1: float
    total: float
    distill_weight: float
    sparsity_weight: float


class ClampCounter:
    """Accumulates how often discriminator outputs left (0, 1)."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += n


def gan_loss_discriminator(
    real_batch: torch.Tensor,
    fake_batch: torch.Tensor,
    discriminator: SpecNet,
    clamps: ClampCounter | None = None,
) -> torch.Tensor:
    """mean log D(real) + mean log(1 - D(fake)); the fake batch is a constant.

    This is the quantity the discriminator ascends.
    """
    log_real, c1 = safe_log(discriminator(real_batch))
    log_fake, c2 = safe_log(1.0 - discriminator(fake_batch.detach()))
    if clamps is not None:
        clamps.add(c1 + c2)
    return log_real.mean() + log_fake.mean()


def _generator_terms(
    x_batch: torch.Tensor,
    generator: SpecNet,
    teacher_out: torch.Tensor,
    discriminator: SpecNet,
    distill_weight: float,
    metric: str,
    extractor: FeatureExtractor | None,
    quant: QuantRuntime | None,
    nonsaturating: bool,
    clamps: ClampCounter | None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(adversarial term, distillation term) as differentiable scalars.

    A zero distillation weight recovers the pure adversarial generator loss:
    the distillation term is then identically zero and never evaluated.
    """
    fake = generator(x_batch, quant)
    if nonsaturating:
        log_d, c = safe_log(discriminator(fake))
        adv = -log_d.mean()
    else:
        log_one_minus, c = safe_log(1.0 - discriminator(fake))
        adv = log_one_minus.mean()
    if clamps is not None:
        clamps.add(c)
    if distill_weight == 0.0:
        dist = fake.sum() * 0.0
    else:
        dist = distill_loss(fake, teacher_out, metric, extractor)
    return adv, dist


def loss_w(
    x_batch: torch.Tensor,
    generator: SpecNet,
    teacher_out: torch.Tensor,
    discriminator: SpecNet,
    distill_weight: float,
    metric: str = "perceptual",
    extractor: FeatureExtractor | None = None,
    quant: QuantRuntime | None = None,
    nonsaturating: bool = False,
    clamps: ClampCounter | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Objective minimized by the generator weights.

    Returns (loss, adversarial term, distillation term); gradients flow into
    the weights through the straight-through quantizers, while the teacher
    output and discriminator are treated as constants by the caller (the
    discriminator's parameters simply receive no optimizer step from this).
    """
    adv, dist = _generator_terms(
        x_batch, generator, teacher_out, discriminator, distill_weight,
        metric, extractor, quant, nonsaturating, clamps,
    )
    return adv + distill_weight * dist, adv, dist


def loss_gamma_fidelity(
    x_batch: torch.Tensor,
    generator: SpecNet,
    teacher_out: torch.Tensor,
    discriminator: SpecNet,
    distill_weight: float,
    metric: str = "perceptual",
    extractor: FeatureExtractor | None = None,
    quant: QuantRuntime | None = None,
    nonsaturating: bool = False,
    clamps: ClampCounter | None = None,
) -> torch.Tensor:
    """Smooth part of the scale objective; identical functional form to loss_w
    (the L1 penalty is excluded, the proximal step applies it)."""
    loss, _, _ = loss_w(
        x_batch, generator, teacher_out, discriminator, distill_weight,
        metric, extractor, quant, nonsaturating, clamps,
    )
    return loss


def total_loss_report(
    x_batch: torch.Tensor,
    real_batch: torch.Tensor,
    generator: SpecNet,
    teacher_out: torch.Tensor,
    discriminator: SpecNet,
    distill_weight: float,
    sparsity_weight: float,
    gammas: list[torch.Tensor],
    metric: str = "perceptual",
    extractor: FeatureExtractor | None = None,
    quant: QuantRuntime | None = None,
) -> LossBreakdown:
    """Evaluate the combined objective for reporting (no gradients)."""
    with torch.no_grad():
        fake = generator(x_batch, quant)
        log_real, _ = safe_log(discriminator(real_batch))
        log_fake, _ = safe_log(1.0 - discriminator(fake))
        gan = float(log_real.mean() + log_fake.mean())
        dist = float(distill_loss(fake, teacher_out, metric, extractor))
    l1 = sum(l1_norm(g) for g in gammas)
    return LossBreakdown(
        gan=gan,
        distill=dist,
        channel_l1=l1,
        total=gan + distill_weight * dist + sparsity_weight * l1,
        distill_weight=distill_weight,
        sparsity_weight=sparsity_weight,
    )
