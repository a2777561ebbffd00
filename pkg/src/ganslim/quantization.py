"""Uniform fake-quantizers with straight-through gradients, plus bit-packing.

Activations are clamped to [0, clamp] and snapped to a grid of 2**activation_bits
steps; kernel weights are snapped to a symmetric grid whose scale is derived from
the tensor's own max magnitude, so the weight range is preserved. Both quantizers
round half away from zero, which keeps the weight quantizer odd-symmetric.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

__all__ = [
    "QuantConfig",
    "QuantizedBlob",
    "fake_quantize_activation",
    "fake_quantize_weight",
    "finalize_weights",
    "pack_weights",
    "quantize_activation",
    "quantize_weight",
    "round_half_away",
    "ste_activation_grad",
    "ste_weight_grad",
    "weight_scale",
]

ROUNDING_MODES = ("half-away-from-zero",)


@dataclass(frozen=True)
class QuantConfig:
    """Bit-widths and activation clamp for uniform quantization.

    Defaults: 8-bit activations and weights, activation clamp 4.0.
    """

    activation_bits: int = 8
    weight_bits: int = 8
    clamp: float = 4.0
    rounding: str = "half-away-from-zero"

    def __post_init__(self) -> None:
        if self.activation_bits < 1:
            raise ValueError(f"activation_bits must be >= 1, got {self.activation_bits}")
        if self.weight_bits < 1:
            raise ValueError(f"weight_bits must be >= 1, got {self.weight_bits}")
        if not self.clamp > 0:
            raise ValueError(f"clamp must be positive, got {self.clamp}")
        if self.rounding not in ROUNDING_MODES:
            raise ValueError(f"unknown rounding mode {self.rounding!r}")

    @property
    def activation_step(self) -> float:
        return self.clamp / 2**self.activation_bits


def round_half_away(x: torch.Tensor) -> torch.Tensor:
    """Round to nearest integer, ties away from zero (not banker's rounding)."""
    # + 0.0 folds -0.0 into +0.0 so quantized grids have a single zero bit pattern
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5) + 0.0


def _check_finite(x: torch.Tensor, what: str) -> None:
    if not torch.isfinite(x).all():
        raise ValueError(f"non-finite elements in {what}")


def quantize_activation(a: torch.Tensor, cfg: QuantConfig) -> torch.Tensor:
    """Clamp to [0, clamp] and snap to the activation grid."""
    _check_finite(a, "activation tensor")
    step = cfg.activation_step
    clamped = a.clamp(min=0.0, max=cfg.clamp)
    return round_half_away(clamped / step) * step


def weight_scale(w: torch.Tensor, cfg: QuantConfig) -> float:
    """Grid step of the symmetric weight quantizer; 0.0 for an all-zero tensor."""
    if w.numel() == 0:
        return 0.0
    return float(w.abs().max()) / 2 ** (cfg.weight_bits - 1)


def quantize_weight(w: torch.Tensor, cfg: QuantConfig) -> torch.Tensor:
    """Snap to a symmetric grid scaled by the tensor's max magnitude.

    An all-zero tensor is returned unchanged (its grid scale would be zero).
    """
    _check_finite(w, "weight tensor")
    scale = weight_scale(w, cfg)
    if scale == 0.0:
        return w.clone()
    return round_half_away(w / scale) * scale


def ste_activation_grad(a: torch.Tensor, cfg: QuantConfig) -> torch.Tensor:
    """Pass-through mask for the activation quantizer: 1 on [0, clamp], else 0."""
    return ((a >= 0) & (a <= cfg.clamp)).to(a.dtype if a.is_floating_point() else torch.float32)


def ste_weight_grad(w: torch.Tensor) -> torch.Tensor:
    """Pass-through gradient for the weight quantizer: all ones."""
    return torch.ones_like(w)


class _FakeQuantActivation(torch.autograd.Function):
    @staticmethod
    def forward(ctx, a, step, clamp):
        mask = (a >= 0) & (a <= clamp)
        ctx.save_for_backward(mask)
        return round_half_away(a.clamp(min=0.0, max=clamp) / step) * step

    @staticmethod
    def backward(ctx, grad_out):
        (mask,) = ctx.saved_tensors
        return grad_out * mask, None, None


class _FakeQuantWeight(torch.autograd.Function):
    @staticmethod
    def forward(ctx, w, bits):
        if w.numel() == 0:
            return w.clone()
        scale = float(w.detach().abs().max()) / 2 ** (bits - 1)
        if scale == 0.0:
            return w.clone()
        return round_half_away(w / scale) * scale

    @staticmethod
    def backward(ctx, grad_out):
        return grad_out, None


def fake_quantize_activation(a: torch.Tensor, cfg: QuantConfig) -> torch.Tensor:
    """quantize_activation with a straight-through backward (gated on [0, clamp])."""
    return _FakeQuantActivation.apply(a, cfg.activation_step, cfg.clamp)


def fake_quantize_weight(w: torch.Tensor, cfg: QuantConfig) -> torch.Tensor:
    """quantize_weight with an identity backward."""
    return _FakeQuantWeight.apply(w, cfg.weight_bits)


def finalize_weights(
    params: dict[str, torch.Tensor], cfg: QuantConfig
) -> tuple[dict[str, torch.Tensor], dict[str, float]]:
    """Quantize every kernel tensor in place of its full-precision master copy.

    Kernels are the tensors with ndim >= 2 (conv and dense weights); biases,
    normalization scales/shifts and other 1-d tensors pass through untouched.
    Returns the new parameter dict and the grid scale used per kernel, which
    packing needs when a kernel is later sliced (slicing can change its max).
    """
    out: dict[str, torch.Tensor] = {}
    scales: dict[str, float] = {}
    for name, tensor in params.items():
        if tensor.dim() >= 2:
            out[name] = quantize_weight(tensor, cfg)
            scales[name] = weight_scale(tensor, cfg)
        else:
            out[name] = tensor.clone()
    return out, scales


# --- storage packing ----------------------------------------------------------
#
# Blob layout (little-endian):
#   count: u64 | bits: u8 | scale: f32 | rank: u64 | dims: u64 each
#   payload: count codes of `bits` bits each, MSB-first within each byte
#   trailer: n_overflow: u64 | overflow element indices: u64 each
#
# Codes are stored offset-binary: stored = code + 2**(bits-1), covering codes in
# [-2**(bits-1), 2**(bits-1) - 1]. The quantizer can also emit +2**(bits-1) (the
# positive end of the symmetric range), which does not fit in `bits` bits; those
# element indices go to the trailer and their payload slot holds 0. The trailer
# is empty unless the tensor's max-magnitude value is attained with positive sign.

_HEADER_FMT = "<QBfQ"


@dataclass(frozen=True)
class QuantizedBlob:
    """Bit-packed integer codes plus the per-tensor grid scale."""

    count: int
    bits: int
    scale: float
    shape: tuple[int, ...]
    payload: bytes
    overflow_indices: tuple[int, ...] = field(default=())

    @property
    def payload_bytes(self) -> int:
        return len(self.payload)

    def to_bytes(self) -> bytes:
        head = struct.pack(_HEADER_FMT, self.count, self.bits, self.scale, len(self.shape))
        head += struct.pack(f"<{len(self.shape)}Q", *self.shape) if self.shape else b""
        trail = struct.pack("<Q", len(self.overflow_indices))
        if self.overflow_indices:
            trail += struct.pack(f"<{len(self.overflow_indices)}Q", *self.overflow_indices)
        return head + self.payload + trail

    @classmethod
    def from_bytes(cls, raw: bytes) -> "QuantizedBlob":
        blob, _ = cls.from_buffer(raw, 0)
        return blob

    @classmethod
    def from_buffer(cls, raw: bytes, offset: int) -> tuple["QuantizedBlob", int]:
        """Parse one blob starting at `offset`; returns (blob, end offset).

        Blobs are self-describing, so a bundle can store them back to back.
        """
        base = struct.calcsize(_HEADER_FMT)
        if len(raw) < offset + base:
            raise ValueError("truncated blob header")
        count, bits, scale, rank = struct.unpack_from(_HEADER_FMT, raw, offset)
        off = offset + base
        shape = struct.unpack_from(f"<{rank}Q", raw, off) if rank else ()
        off += 8 * rank
        n_payload = math.ceil(count * bits / 8)
        payload = raw[off : off + n_payload]
        off += n_payload
        if len(raw) < off + 8:
            raise ValueError("truncated blob trailer")
        (n_over,) = struct.unpack_from("<Q", raw, off)
        off += 8
        over = struct.unpack_from(f"<{n_over}Q", raw, off) if n_over else ()
        off += 8 * n_over
        return cls(count, bits, scale, tuple(shape), payload, tuple(over)), off

    def dequantize(self) -> np.ndarray:
        """Reconstruct the quantized float32 tensor bit-exactly."""
        codes = _unpack_bits(self.payload, self.count, self.bits).astype(np.int64)
        codes -= 2 ** (self.bits - 1)
        if self.overflow_indices:
            codes[np.asarray(self.overflow_indices, dtype=np.int64)] = 2 ** (self.bits - 1)
        values = codes.astype(np.float32) * np.float32(self.scale)
        return values.reshape(self.shape)


def _pack_bits(codes: np.ndarray, bits: int) -> bytes:
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint64)
    bitmat = (codes[:, None].astype(np.uint64) >> shifts) & 1
    return np.packbits(bitmat.astype(np.uint8).ravel()).tobytes()


def _unpack_bits(payload: bytes, count: int, bits: int) -> np.ndarray:
    flat = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[: count * bits]
    weights = (2 ** np.arange(bits - 1, -1, -1, dtype=np.uint64))[None, :]
    return (flat.reshape(count, bits).astype(np.uint64) * weights).sum(axis=1)


def pack_weights(
    w: torch.Tensor | np.ndarray, cfg: QuantConfig, scale: float | None = None
) -> QuantizedBlob:
    """Pack an on-grid weight tensor into integer codes.

    `scale` defaults to the tensor's own grid step; pass the recorded step when
    packing a tensor that was sliced after quantization. Off-grid elements raise.
    """
    arr = np.asarray(w.detach().cpu().numpy() if isinstance(w, torch.Tensor) else w, dtype=np.float32)
    flat = arr.ravel()
    bits = cfg.weight_bits
    if scale is None:
        scale = float(np.abs(flat).max()) / 2 ** (bits - 1) if flat.size else 0.0
    scale32 = np.float32(scale)
    if scale32 == 0.0:
        if np.any(flat != 0.0):
            raise ValueError("zero scale with nonzero elements: tensor is off-grid")
        codes = np.zeros(flat.size, dtype=np.int64)
    else:
        codes = np.round(flat / scale32).astype(np.int64)
        half = 2 ** (bits - 1)
        if np.any(np.abs(codes) > half):
            raise ValueError("element magnitude exceeds the quantizer range for this scale")
        if np.any(codes.astype(np.float32) * scale32 != flat):
            bad = int(np.nonzero(codes.astype(np.float32) * scale32 != flat)[0][0])
            raise ValueError(f"off-grid element at flat index {bad}")
    half = 2 ** (bits - 1)
    over = np.nonzero(codes == half)[0]
    stored = codes + half
    stored[over] = 0
    return QuantizedBlob(
        count=flat.size,
        bits=bits,
        scale=float(scale32),
        shape=arr.shape,
        payload=_pack_bits(stored.astype(np.uint64), bits),
        overflow_indices=tuple(int(i) for i in over),
    )
