import math

import pytest
import torch
from torch import nn

from ganslim.distill import FeatureExtractor, _EmbeddingNet
from ganslim.models import (
    ActSpec,
    ArchSpec,
    ConvSpec,
    NormSpec,
    QuantRuntime,
    SpecNet,
    build_generator,
)
from ganslim.objective import (
    ClampCounter,
    LossBreakdown,
    PROB_FLOOR,
    gan_loss_discriminator,
    loss_gamma_fidelity,
    loss_w,
    safe_log,
    total_loss_report,
)
from ganslim.quantization import QuantConfig


def randn(seed, *shape, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=dtype)


class ConstD(nn.Module):
    """Discriminator stub: constant probability, broadcast over the batch."""

    def __init__(self, p):
        super().__init__()
        self.p = p

    def forward(self, x):
        return torch.full((x.shape[0], 1, 1, 1), self.p, dtype=x.dtype) + x.sum() * 0.0


class MeanD(nn.Module):
    """Probability = sigmoid of the per-sample mean; easy to hand-evaluate."""

    def forward(self, x):
        return torch.sigmoid(x.mean(dim=tuple(range(1, x.dim()))).view(-1, 1, 1, 1))


def toy_generator(dtype=torch.float64, seed=0, hidden_act="tanh"):
    # tanh hidden activation by default: smooth everywhere, so central
    # finite differences are trustworthy at 1e-4 relative
    spec = ArchSpec(
        "toy", "image", 3, 4,
        (
            ConvSpec("c1", 3, 2, 1),
            NormSpec("n1", 2, prunable=True),
            ActSpec("a1", fn=hidden_act),
            ConvSpec("c2", 2, 3, 1),
            ActSpec("out", fn="tanh"),
        ),
    )
    net = build_generator(spec, seed=seed).to(dtype)
    return net


def toy_discriminator(dtype=torch.float64, seed=1):
    spec = ArchSpec(
        "toyd", "image", 3, 4,
        (ConvSpec("d1", 3, 2, 3, padding=1), ActSpec("da", fn="tanh"),
         ConvSpec("d2", 2, 1, 3, padding=1), ActSpec("ds", fn="sigmoid")),
    )
    net = SpecNet(spec, seed=seed).to(dtype)
    return net


class TestSafeLog:
    def test_floor_and_counter(self):
        p = torch.tensor([0.0, 0.5, 1.0])
        logs, n = safe_log(p)
        assert n == 2
        assert float(logs[0]) == pytest.approx(math.log(PROB_FLOOR))
        assert float(logs[1]) == pytest.approx(math.log(0.5))


class TestDiscriminatorLoss:
    def test_constant_half(self):
        y = randn(216, 4, 3, 4, 4, dtype=torch.float32)
        fake = randn(217, 4, 3, 4, 4, dtype=torch.float32)
        val = gan_loss_discriminator(y, fake, ConstD(0.5))
        assert float(val) == pytest.approx(2 * math.log(0.5), rel=1e-6)

    def test_confident_discriminator_approaches_zero(self):
        y = randn(218, 4, 3, 4, 4, dtype=torch.float32)
        fake = randn(219, 4, 3, 4, 4, dtype=torch.float32)

        class SplitD(nn.Module):
            def __init__(self):
                super().__init__()
                self.calls = 0

            def forward(self, x):
                self.calls += 1
                p = 1.0 - 1e-7 if self.calls == 1 else 1e-7
                return torch.full((x.shape[0], 1, 1, 1), p) + x.sum() * 0.0

        val = gan_loss_discriminator(y, fake, SplitD())
        assert float(val) == pytest.approx(0.0, abs=1e-5)

    def test_hand_summed_batch_of_two(self):
        d = MeanD()
        y = torch.tensor([[[[0.2]]], [[[-0.4]]]]).expand(2, 1, 1, 1).clone()
        fake = torch.tensor([[[[1.0]]], [[[0.0]]]]).clone()
        got = float(gan_loss_discriminator(y, fake, d))
        sig = lambda v: 1 / (1 + math.exp(-v))
        expect = (math.log(sig(0.2)) + math.log(sig(-0.4))) / 2
        expect += (math.log(1 - sig(1.0)) + math.log(1 - sig(0.0))) / 2
        assert got == pytest.approx(expect, rel=1e-6)

    def test_out_of_range_outputs_clamped_and_counted(self):
        y = randn(220, 2, 3, 4, 4, dtype=torch.float32)
        fake = randn(221, 2, 3, 4, 4, dtype=torch.float32)
        counter = ClampCounter()
        val = gan_loss_discriminator(y, fake, ConstD(1.0), clamps=counter)
        assert math.isfinite(float(val))
        assert counter.count == 4  # both sides of both calls hit the rails

    def test_no_gradient_reaches_generator(self):
        g = toy_generator()
        d = toy_discriminator()
        x = randn(101, 2, 3, 4, 4)
        y = randn(102, 2, 3, 4, 4)
        fake = g(x)
        val = gan_loss_discriminator(y, fake, d)
        val.backward()
        assert all(p.grad is None or float(p.grad.abs().sum()) == 0.0 for p in g.parameters())
        assert any(p.grad is not None and float(p.grad.abs().sum()) > 0 for p in d.parameters())


class TestGeneratorObjectives:
    def test_zero_distill_weight_is_pure_adversarial(self):
        g = toy_generator()
        d = toy_discriminator()
        x = randn(103, 3, 3, 4, 4)
        loss, adv, dist = loss_w(x, g, x, d, distill_weight=0.0, metric="mse")
        fake = g(x)
        expect = torch.log(1.0 - d(fake).clamp(PROB_FLOOR, 1 - PROB_FLOOR)).mean()
        assert float(loss) == pytest.approx(float(expect), rel=1e-9)
        assert float(dist) == 0.0

    def test_student_equals_teacher_gives_log_half(self):
        g = toy_generator()
        x = randn(104, 2, 3, 4, 4)
        with torch.no_grad():
            teacher_out = g(x)
        loss, adv, dist = loss_w(
            x, g, teacher_out, ConstD(0.5).double(), distill_weight=7.0, metric="mse"
        )
        assert float(dist) == pytest.approx(0.0, abs=1e-12)
        assert float(loss) == pytest.approx(math.log(0.5), rel=1e-6)

    def _fd_check(self, params, loss_fn, rel=1e-4, h=1e-6, max_checked=40):
        loss = loss_fn()
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        checked = 0
        for p, grd in zip(params, grads):
            grd = torch.zeros_like(p) if grd is None else grd
            flat = p.detach().view(-1)
            for i in range(min(flat.numel(), 5)):
                if checked >= max_checked:
                    return
                with torch.no_grad():
                    orig = float(flat[i])
                    flat[i] = orig + h
                    up = float(loss_fn())
                    flat[i] = orig - h
                    dn = float(loss_fn())
                    flat[i] = orig
                fd = (up - dn) / (2 * h)
                got = float(grd.view(-1)[i])
                assert got == pytest.approx(fd, rel=rel, abs=1e-7)
                checked += 1

    def test_discriminator_gradient_matches_finite_differences(self):
        g = toy_generator()
        d = toy_discriminator()
        x = randn(105, 4, 3, 4, 4)
        y = randn(106, 4, 3, 4, 4)
        with torch.no_grad():
            fake = g(x)
        self._fd_check(
            list(d.parameters()),
            lambda: gan_loss_discriminator(y, fake, d),
        )

    def test_gamma_gradient_matches_finite_differences(self):
        g = toy_generator()
        d = toy_discriminator()
        x = randn(107, 4, 3, 4, 4)
        with torch.no_grad():
            teacher_out = g(x) * 0.9
        gammas = [p for _, p in g.gamma_parameters()]
        self._fd_check(
            gammas,
            lambda: loss_gamma_fidelity(x, g, teacher_out, d, distill_weight=3.0, metric="mse"),
        )

    def test_gamma_gradient_with_perceptual_metric(self):
        g = toy_generator()
        d = toy_discriminator()
        fxnet = _EmbeddingNet(widths=(4, 4, 4, 4)).double()
        fx = FeatureExtractor(fxnet)
        x = randn(108, 2, 3, 8, 8)
        spec = ArchSpec(
            "toy8", "image", 3, 8,
            (
                ConvSpec("c1", 3, 2, 1),
                NormSpec("n1", 2, prunable=True),
                ActSpec("a1"),
                ConvSpec("c2", 2, 3, 1),
                ActSpec("out", fn="tanh"),
            ),
        )
        g = build_generator(spec, seed=3).double()
        with torch.no_grad():
            teacher_out = g(x) * 0.8
        gammas = [p for _, p in g.gamma_parameters()]
        self._fd_check(
            gammas,
            lambda: loss_gamma_fidelity(
                x, g, teacher_out, d, distill_weight=2.0, metric="perceptual", extractor=fx
            ),
        )

    def test_weight_gradient_matches_surrogate_finite_differences(self):
        # gradients of the straight-through graph equal finite differences of
        # the clamp surrogate, checked away from rounding boundaries
        g = toy_generator(seed=5)
        d = toy_discriminator()
        cfg = QuantConfig()
        surrogate = QuantRuntime(cfg, weights="off", activations="clamp")
        x = randn(109, 3, 3, 4, 4)
        with torch.no_grad():
            teacher_out = g(x, surrogate) * 0.9
        weights = [g.ops["c1"].weight, g.ops["c2"].weight, g.ops["c1"].bias]
        self._fd_check(
            weights,
            lambda: loss_w(
                x, g, teacher_out, d, distill_weight=2.0, metric="mse", quant=surrogate
            )[0],
        )


class TestTotalLossReport:
    def test_zero_weights_reduce_to_gan_term(self):
        g = toy_generator()
        d = toy_discriminator()
        x = randn(110, 2, 3, 4, 4)
        y = randn(111, 2, 3, 4, 4)
        with torch.no_grad():
            teacher_out = g(x)
        rep = total_loss_report(x, y, g, teacher_out, d, 0.0, 0.0, [], metric="mse")
        assert rep.total == rep.gan
        assert rep.channel_l1 == 0.0

    def test_zero_gammas_zero_l1(self):
        g = toy_generator()
        d = toy_discriminator()
        x = randn(112, 2, 3, 4, 4)
        y = randn(113, 2, 3, 4, 4)
        with torch.no_grad():
            teacher_out = g(x)
        gammas = [torch.zeros(4), torch.zeros(2)]
        rep = total_loss_report(x, y, g, teacher_out, d, 1.0, 5.0, gammas, metric="mse")
        assert rep.channel_l1 == 0.0

    def test_decomposition_resums(self):
        g = toy_generator()
        d = toy_discriminator()
        x = randn(114, 2, 3, 4, 4)
        y = randn(115, 2, 3, 4, 4)
        with torch.no_grad():
            teacher_out = g(x) * 0.5
        gammas = [p.detach() for _, p in g.gamma_parameters()]
        rep = total_loss_report(x, y, g, teacher_out, d, 3.0, 0.7, gammas, metric="mse")
        resum = rep.gan + rep.distill_weight * rep.distill + rep.sparsity_weight * rep.channel_l1
        assert rep.total == pytest.approx(resum, rel=1e-6)
        assert rep.distill > 0 and rep.channel_l1 > 0
