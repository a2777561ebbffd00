"""Distillation distances over a small fixed feature extractor.

The perceptual distance (default) compares feature maps of a frozen 4-conv
embedding net at two tap depths; MSE over raw pixels is the ablation metric.
The extractor is trained once on the task's domain-classification surrogate,
then frozen, checksummed and shipped as a checkpoint; loading refuses a file
whose checksum does not match the expected one.
"""

from __future__ import annotations

import hashlib

import torch
import torch.nn.functional as F
from torch import nn

from .models import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "FeatureExtractor",
    "distill_loss",
    "load_extractor",
    "mse_distance",
    "perceptual_distance",
    "save_extractor",
    "train_feature_extractor",
]

METRICS = ("perceptual", "mse")


class _EmbeddingNet(nn.Module):
    """Four stacked convs; taps are the activations of conv 2 and conv 4."""

    def __init__(self, widths: tuple[int, int, int, int] = (8, 16, 16, 16)):
        super().__init__()
        self.widths = tuple(widths)
        w1, w2, w3, w4 = widths
        self.conv1 = nn.Conv2d(3, w1, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(w2, w3, 3, stride=2, padding=1)
        self.conv4 = nn.Conv2d(w3, w4, 3, stride=1, padding=1)

    def taps(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = F.relu(self.conv2(F.relu(self.conv1(x))))
        h4 = F.relu(self.conv4(F.relu(self.conv3(h))))
        return h, h4


class FeatureExtractor:
    """Frozen embedding net with an identity checksum over its parameters."""

    def __init__(self, net: _EmbeddingNet):
        net.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        self.net = net
        self.checksum = _params_checksum(net)

    def features(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Tap feature maps; differentiable w.r.t. the input."""
        return self.net.taps(x)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Pooled final-tap embedding (N, width) used by the proxy Frechet metric."""
        _, h4 = self.net.taps(x)
        return h4.mean(dim=(2, 3))


def _params_checksum(net: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(net.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def train_feature_extractor(
    domain_x,
    domain_y,
    seed: int = 0,
    steps: int = 300,
    batch_size: int = 32,
    lr: float = 1e-3,
    widths: tuple[int, int, int, int] = (8, 16, 16, 16),
) -> FeatureExtractor:
    """Fit the embedding net on a binary which-domain classification surrogate,
    then freeze it. Deterministic given (domains, seed)."""
    xs = torch.as_tensor(domain_x, dtype=torch.float32)
    ys = torch.as_tensor(domain_y, dtype=torch.float32)
    net = _EmbeddingNet(widths)
    gen = torch.Generator().manual_seed(seed)
    head = nn.Linear(widths[-1], 1)
    with torch.no_grad():
        for p in list(net.parameters()) + list(head.parameters()):
            if p.dim() >= 2:
                fan_in = p[0].numel()
                p.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
            else:
                p.zero_()
    opt = torch.optim.Adam(list(net.parameters()) + list(head.parameters()), lr=lr)
    for _ in range(steps):
        ix = torch.randint(0, xs.shape[0], (batch_size // 2,), generator=gen)
        iy = torch.randint(0, ys.shape[0], (batch_size // 2,), generator=gen)
        batch = torch.cat([xs[ix], ys[iy]])
        labels = torch.cat([torch.zeros(len(ix)), torch.ones(len(iy))])
        _, h4 = net.taps(batch)
        logits = head(h4.mean(dim=(2, 3))).squeeze(1)
        loss = F.binary_cross_entropy_with_logits(logits, labels)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return FeatureExtractor(net)


def save_extractor(path, fx: FeatureExtractor) -> str:
    params = {k: v for k, v in fx.net.state_dict().items()}
    return save_checkpoint(
        path, None, params,
        meta={"kind": "feature-extractor", "widths": list(fx.net.widths),
              "param_checksum": fx.checksum},
    )


def load_extractor(path, expected_checksum: str | None = None) -> FeatureExtractor:
    """Load a frozen extractor; refuses on checksum mismatch."""
    _, params, meta = load_checkpoint(path)
    if meta.get("kind") != "feature-extractor":
        raise CheckpointError(f"{path}: not a feature extractor checkpoint")
    net = _EmbeddingNet(tuple(meta["widths"]))
    net.load_state_dict(params)
    fx = FeatureExtractor(net)
    if fx.checksum != meta.get("param_checksum"):
        raise CheckpointError(f"{path}: stored parameter checksum does not match contents")
    if expected_checksum is not None and fx.checksum != expected_checksum:
        raise CheckpointError(
            f"{path}: extractor checksum {fx.checksum[:12]} != expected {expected_checksum[:12]}"
        )
    return fx


def perceptual_distance(x: torch.Tensor, y: torch.Tensor, fx: FeatureExtractor) -> torch.Tensor:
    """Mean over tap layers of mean squared feature differences (equal weights)."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    fa = fx.features(x)
    fb = fx.features(y)
    terms = [F.mse_loss(a, b) for a, b in zip(fa, fb)]
    return sum(terms) / len(terms)


def mse_distance(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return F.mse_loss(x, y)


def distill_loss(
    g_out: torch.Tensor,
    teacher_out: torch.Tensor,
    metric: str = "perceptual",
    extractor: FeatureExtractor | None = None,
) -> torch.Tensor:
    """Batch estimate of the teacher-matching distance."""
    if metric == "perceptual":
        if extractor is None:
            raise ValueError("perceptual metric needs a feature extractor")
        return perceptual_distance(g_out, teacher_out, extractor)
    if metric == "mse":
        return mse_distance(g_out, teacher_out)
    raise ValueError(f"unknown distillation metric {metric!r}")
