"""L1 channel-sparsity machinery: proximal updates on normalization scales,
channel masks from their exact zeros, and extraction of the pruned dense net.

The proximal step produces exact floating-point zeros, so pruning needs no
magnitude heuristics: a channel is dead iff its scale is 0.0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .models import ArchSpec, ConvSpec, DenseSpec, NormSpec, ResBlockSpec

__all__ = [
    "ChannelMask",
    "MaskError",
    "ScaleVector",
    "channel_mask",
    "collect_scale_vectors",
    "extract_subnetwork",
    "l1_norm",
    "masks_from_json",
    "masks_to_json",
    "prox_step",
    "soft_threshold",
    "zero_fraction",
]


class MaskError(ValueError):
    """Masks inconsistent with the architecture they are applied to."""


@dataclass(frozen=True)
class ScaleVector:
    """Per-channel trainable scales of one prunable normalization layer."""

    layer_id: str
    values: torch.Tensor

    def __post_init__(self):
        if self.values.dim() != 1:
            raise ValueError("scale vector must be 1-d")
        if not torch.isfinite(self.values).all():
            raise ValueError(f"non-finite scales in layer {self.layer_id}")


@dataclass(frozen=True)
class ChannelMask:
    """Keep/drop flags per channel of one layer (True = keep)."""

    layer_id: str
    keep: tuple[bool, ...]
    threshold: float = 0.0

    @property
    def kept(self) -> int:
        return sum(self.keep)


def soft_threshold(x: torch.Tensor, threshold: float) -> torch.Tensor:
    """sgn(x) * max(|x| - threshold, 0), elementwise; shrunk entries are exact zeros."""
    if threshold < 0:
        raise ValueError(f"threshold must be nonnegative, got {threshold}")
    # sign(x) * clamp yields -0.0 on the shrunk negative side; + 0.0 normalizes
    return torch.sign(x) * torch.clamp(x.abs() - threshold, min=0.0) + 0.0


def prox_step(
    gamma: torch.Tensor, grad: torch.Tensor, lr: float, sparsity_weight: float
) -> torch.Tensor:
    """One proximal gradient step: soft_threshold(gamma - lr * grad, sparsity_weight * lr).

    `grad` is the gradient of the smooth fidelity objective only; the L1 part
    is applied by the shrinkage itself.
    """
    if gamma.shape != grad.shape:
        raise ValueError(f"shape mismatch: {tuple(gamma.shape)} vs {tuple(grad.shape)}")
    if lr < 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr}")
    return soft_threshold(gamma - lr * grad, sparsity_weight * lr)


def l1_norm(gamma: torch.Tensor | ScaleVector) -> float:
    values = gamma.values if isinstance(gamma, ScaleVector) else gamma
    return float(values.abs().sum())


def channel_mask(
    scales: ScaleVector, eps: float = 0.0, keep_one: bool = False
) -> ChannelMask:
    """Keep channel i iff |scale_i| > eps.

    With all channels below threshold: raises, unless keep_one is set, in which
    case the largest-|scale| channel survives (ties to the lowest index).
    """
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    mags = scales.values.detach().abs()
    keep = (mags > eps).tolist()
    if not any(keep):
        if not keep_one:
            raise MaskError(f"all channels pruned in layer {scales.layer_id}")
        keep[int(torch.argmax(mags))] = True
    return ChannelMask(scales.layer_id, tuple(bool(k) for k in keep), threshold=eps)


def collect_scale_vectors(spec: ArchSpec, params: dict[str, torch.Tensor]) -> list[ScaleVector]:
    """Scale vectors of all prunable norm layers, in spec order."""
    return [ScaleVector(n.id, params[f"{n.id}.scale"]) for n in spec.prunable_norms()]


def zero_fraction(vectors: list[ScaleVector]) -> float:
    total = sum(v.values.numel() for v in vectors)
    if total == 0:
        return 0.0
    zeros = sum(int((v.values == 0.0).sum()) for v in vectors)
    return zeros / total


def masks_to_json(masks: dict[str, ChannelMask]) -> str:
    """Layer id -> kept channel indices, as JSON text."""
    return json.dumps(
        {lid: [i for i, k in enumerate(m.keep) if k] for lid, m in masks.items()},
        indent=2,
        sort_keys=True,
    ) + "\n"


def masks_from_json(text: str, spec: ArchSpec) -> dict[str, ChannelMask]:
    kept = json.loads(text)
    masks = {}
    for norm in spec.prunable_norms():
        if norm.id not in kept:
            continue
        keep = [False] * norm.channels
        for i in kept[norm.id]:
            keep[i] = True
        masks[norm.id] = ChannelMask(norm.id, tuple(keep))
    extra = set(kept) - {n.id for n in spec.prunable_norms()}
    if extra:
        raise MaskError(f"masks for unknown or non-prunable layers: {sorted(extra)}")
    return masks


def _as_bool_array(mask, channels: int, lid: str) -> np.ndarray:
    keep = np.asarray(mask.keep if isinstance(mask, ChannelMask) else mask, dtype=bool)
    if keep.ndim != 1 or keep.size != channels:
        raise MaskError(f"mask length {keep.size} != {channels} channels of layer {lid}")
    if not keep.any():
        raise MaskError(f"mask removes every channel of layer {lid}")
    return keep


def extract_subnetwork(
    spec: ArchSpec,
    params: dict[str, torch.Tensor],
    masks: dict[str, "ChannelMask | np.ndarray | list[bool]"],
) -> tuple[ArchSpec, dict[str, torch.Tensor]]:
    """Materialize the dense subnetwork with pruned channels physically removed.

    Each convolution loses output rows for its own pruned channels (the mask of
    the norm that gates it) and input columns for upstream pruned ones; norm
    layers lose the matching scale/shift entries. Masks are only accepted for
    prunable norm layers, which validation keeps away from residual trunks, so
    skip additions stay shape-consistent by construction.
    """
    spec.validate()
    prunable = {n.id for n in spec.prunable_norms()}
    for lid in masks:
        if lid not in prunable:
            raise MaskError(
                f"mask given for {lid!r}, which is not a prunable norm layer "
                "(residual trunk layers cannot be masked independently)"
            )

    new_params: dict[str, torch.Tensor] = {}

    def conv_out_mask(layers, i) -> np.ndarray | None:
        # a conv's output channels are gated by the norm directly after it
        if i + 1 < len(layers) and isinstance(layers[i + 1], NormSpec):
            norm = layers[i + 1]
            if norm.id in masks:
                return _as_bool_array(masks[norm.id], norm.channels, norm.id)
        return None

    def walk(layers, flow: np.ndarray) -> tuple[tuple, np.ndarray]:
        out: list = []
        for i, l in enumerate(layers):
            if isinstance(l, ConvSpec):
                om = conv_out_mask(layers, i)
                fin = torch.from_numpy(flow)
                tout = torch.from_numpy(om) if om is not None else None
                w = params[f"{l.id}.weight"]
                if l.transpose:  # transpose conv weights are (in, out, k, k)
                    w = w[fin][:, tout] if tout is not None else w[fin]
                else:
                    w = w[:, fin][tout] if tout is not None else w[:, fin]
                new_params[f"{l.id}.weight"] = w.clone()
                out_ch = int(om.sum()) if om is not None else l.out_channels
                if l.bias:
                    b = params[f"{l.id}.bias"]
                    new_params[f"{l.id}.bias"] = (b[tout] if tout is not None else b).clone()
                out.append(replace_conv(l, int(flow.sum()), out_ch))
                flow = om if om is not None else np.ones(l.out_channels, dtype=bool)
            elif isinstance(l, DenseSpec):
                # noise projection boundary is never masked
                for pname in ("weight", "bias"):
                    new_params[f"{l.id}.{pname}"] = params[f"{l.id}.{pname}"].clone()
                out.append(l)
                flow = np.ones(l.reshape[0], dtype=bool)
            elif isinstance(l, NormSpec):
                fin = torch.from_numpy(flow)
                for pname in ("scale", "shift"):
                    new_params[f"{l.id}.{pname}"] = params[f"{l.id}.{pname}"][fin].clone()
                out.append(
                    NormSpec(l.id, int(flow.sum()), prunable=l.prunable, mode=l.mode)
                )
            elif isinstance(l, ResBlockSpec):
                if not flow.all():
                    raise MaskError(
                        f"inconsistent mask entering residual block {l.id}: "
                        "trunk channels cannot be pruned"
                    )
                body, flow = walk(l.body, flow)
                if not flow.all():
                    raise MaskError(f"inconsistent mask leaving residual block {l.id}")
                out.append(ResBlockSpec(l.id, body))
            else:
                out.append(l)
        return tuple(out), flow

    start = np.ones(spec.in_channels, dtype=bool)
    new_layers, _ = walk(spec.layers, start)
    new_spec = ArchSpec(
        spec.name, spec.input_kind, spec.in_channels, spec.image_size, new_layers
    ).validate()
    return new_spec, new_params


def replace_conv(l: ConvSpec, in_ch: int, out_ch: int) -> ConvSpec:
    return ConvSpec(
        l.id, in_ch, out_ch, l.kernel,
        stride=l.stride, padding=l.padding, bias=l.bias, transpose=l.transpose,
    )
