"""FLOPs and storage accounting, compression ratios, and a proxy Fréchet metric.

"FLOPs" has no universal definition for conv nets, so the counting convention
is an explicit, frozen object. The calibrated default (one op per
multiply-accumulate, convolutions charged at output resolution, transposed
convolutions at the mean of their input- and output-resolution counts, no
pointwise ops) reproduces the published statistics of the standard 9-block
translation generator at 256x256 to well under the accepted tolerance.
Reported megabytes are mebibytes (2**20 bytes) for the same reason.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .models import (
    ActSpec,
    ArchSpec,
    ConvSpec,
    DenseSpec,
    NormSpec,
    ResBlockSpec,
    UpsampleSpec,
)

__all__ = [
    "CALIBRATED_CONVENTION",
    "CompressionReport",
    "FlopsConvention",
    "ModelStats",
    "bytes_to_mb",
    "compression_ratios",
    "count_flops",
    "frechet_distance",
    "model_size",
    "proxy_fid",
]

MB = 2**20


def bytes_to_mb(n: float) -> float:
    return n / MB


@dataclass(frozen=True)
class FlopsConvention:
    """Frozen counting rules.

    ops_per_mac: 1 counts a multiply-accumulate as one op, 2 as multiply+add.
    transpose_conv: charge transposed convs at "input" resolution (the average
    kernel taps actually applied per output), at "output" resolution (every tap
    charged per output, as common profilers do), or their "average".
    include_pointwise: add per-element costs for norm/activation/upsample/skip.
    """

    ops_per_mac: int = 1
    transpose_conv: str = "average"  # "input" | "output" | "average"
    include_pointwise: bool = False
    norm_ops: int = 7
    act_ops: int = 1

    def __post_init__(self):
        if self.ops_per_mac not in (1, 2):
            raise ValueError("ops_per_mac must be 1 or 2")
        if self.transpose_conv not in ("input", "output", "average"):
            raise ValueError(f"unknown transpose_conv mode {self.transpose_conv!r}")


CALIBRATED_CONVENTION = FlopsConvention()


def _conv_out(hw: int, l: ConvSpec) -> int:
    if l.transpose:
        return (hw - 1) * l.stride - 2 * l.padding + l.kernel + (l.stride - 1)
    return (hw + 2 * l.padding - l.kernel) // l.stride + 1


def count_flops(
    spec: ArchSpec,
    input_size: int | None = None,
    convention: FlopsConvention = CALIBRATED_CONVENTION,
) -> float:
    """Total forward ops of one sample at the given input resolution."""
    spec.validate()
    size = spec.image_size if input_size is None else input_size
    hw = size if spec.input_kind == "image" else 1

    def walk(layers, hw: int) -> tuple[float, int, int]:
        flops = 0.0
        ch = None  # tracked only for pointwise costs
        for l in layers:
            if isinstance(l, ConvSpec):
                out_hw = _conv_out(hw, l)
                kk = l.kernel * l.kernel * l.in_channels * l.out_channels
                if not l.transpose:
                    macs = kk * out_hw * out_hw
                elif convention.transpose_conv == "input":
                    macs = kk * hw * hw
                elif convention.transpose_conv == "output":
                    macs = kk * out_hw * out_hw
                else:
                    macs = kk * (hw * hw + out_hw * out_hw) / 2
                flops += convention.ops_per_mac * macs
                hw, ch = out_hw, l.out_channels
            elif isinstance(l, DenseSpec):
                flops += convention.ops_per_mac * l.in_features * l.out_features
                ch, hw = l.reshape[0], l.reshape[1]
            elif isinstance(l, NormSpec):
                if convention.include_pointwise:
                    flops += convention.norm_ops * l.channels * hw * hw
            elif isinstance(l, ActSpec):
                if convention.include_pointwise and ch is not None:
                    flops += convention.act_ops * ch * hw * hw
            elif isinstance(l, UpsampleSpec):
                hw = hw * l.scale
                if convention.include_pointwise and ch is not None:
                    flops += ch * hw * hw
            elif isinstance(l, ResBlockSpec):
                inner, hw, ch = walk(l.body, hw)
                flops += inner
                if convention.include_pointwise and ch is not None:
                    flops += ch * hw * hw  # the skip addition
        return flops, hw, ch

    total, _, _ = walk(spec.layers, hw)
    return total


def model_size(
    spec: ArchSpec, params: dict[str, torch.Tensor], kernel_bits: int = 32
) -> int:
    """Storage bytes under the policy: kernels (tensors with ndim >= 2) at
    kernel_bits; scales, shifts, biases and any norm statistics at 32 bits."""
    spec.validate()
    total = 0
    for name, t in params.items():
        bits = kernel_bits if t.dim() >= 2 else 32
        total += math.ceil(t.numel() * bits / 8)
    return total


@dataclass(frozen=True)
class ModelStats:
    """Accounting summary of one generator at a stated input shape."""

    flops: float
    size_bytes: float
    proxy_fid: float


@dataclass(frozen=True)
class CompressionReport:
    """Teacher vs student accounting plus the three compression ratios."""

    flops_teacher: float
    flops_student: float
    size_teacher: float
    size_student: float
    fid_teacher: float
    fid_student: float
    flops_ratio: float  # r_s
    size_ratio: float  # r_c
    fid_ratio: float  # r_f

    def to_text(self) -> str:
        rows = [
            ("flops_teacher", self.flops_teacher),
            ("flops_student", self.flops_student),
            ("size_teacher_bytes", self.size_teacher),
            ("size_student_bytes", self.size_student),
            ("size_teacher_mb", bytes_to_mb(self.size_teacher)),
            ("size_student_mb", bytes_to_mb(self.size_student)),
            ("proxy_fid_teacher", self.fid_teacher),
            ("proxy_fid_student", self.fid_student),
            ("r_s", self.flops_ratio),
            ("r_c", self.size_ratio),
            ("r_f", self.fid_ratio),
        ]
        return "".join(f"{k} = {v!r}\n" for k, v in rows)

    @classmethod
    def from_text(cls, text: str) -> "CompressionReport":
        kv = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            k, _, v = line.partition(" = ")
            kv[k.strip()] = float(v)
        return cls(
            flops_teacher=kv["flops_teacher"],
            flops_student=kv["flops_student"],
            size_teacher=kv["size_teacher_bytes"],
            size_student=kv["size_student_bytes"],
            fid_teacher=kv["proxy_fid_teacher"],
            fid_student=kv["proxy_fid_student"],
            flops_ratio=kv["r_s"],
            size_ratio=kv["r_c"],
            fid_ratio=kv["r_f"],
        )


def compression_ratios(teacher: ModelStats, student: ModelStats) -> CompressionReport:
    """Teacher-over-student ratios; all inputs must be positive."""
    for label, stats in (("teacher", teacher), ("student", student)):
        for f in ("flops", "size_bytes", "proxy_fid"):
            if not getattr(stats, f) > 0:
                raise ValueError(f"{label}.{f} must be positive")
    return CompressionReport(
        flops_teacher=teacher.flops,
        flops_student=student.flops,
        size_teacher=teacher.size_bytes,
        size_student=student.size_bytes,
        fid_teacher=teacher.proxy_fid,
        fid_student=student.proxy_fid,
        flops_ratio=teacher.flops / student.flops,
        size_ratio=teacher.size_bytes / student.size_bytes,
        fid_ratio=teacher.proxy_fid / student.proxy_fid,
    )


def _sqrtm_psd(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(a)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(
    mu1: np.ndarray, sigma1: np.ndarray, mu2: np.ndarray, sigma2: np.ndarray
) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    The cross term is evaluated through the symmetric product
    S1^(1/2) S2 S1^(1/2), whose eigenvalues match those of S1 S2 but stay real
    and nonnegative under floating point.
    """
    diff = float(np.sum((mu1 - mu2) ** 2))
    root1 = _sqrtm_psd(sigma1)
    inner = root1 @ sigma2 @ root1
    vals = np.clip(np.linalg.eigvalsh((inner + inner.T) / 2), 0.0, None)
    tr_cross = float(np.sum(np.sqrt(vals)))
    return diff + float(np.trace(sigma1) + np.trace(sigma2)) - 2.0 * tr_cross


def proxy_fid(
    set_a: np.ndarray | torch.Tensor,
    set_b: np.ndarray | torch.Tensor,
    extractor,
    shrinkage: float = 1e-6,
) -> float:
    """Frechet distance between extractor embeddings of two image sets.

    This is a desk-scale stand-in computed over a small fixed embedding net;
    values are not comparable with any published Frechet inception distance
    and reports must label them "proxy". Covariances get `shrinkage * I` added,
    which also covers sets smaller than the embedding dimension.
    """
    feats = []
    for name, batch in (("set_a", set_a), ("set_b", set_b)):
        t = torch.as_tensor(batch, dtype=torch.float32)
        if t.numel() == 0:
            raise ValueError(f"{name} is empty")
        with torch.no_grad():
            feats.append(extractor.embed(t).numpy().astype(np.float64))
    stats = []
    for f in feats:
        mu = f.mean(axis=0)
        sigma = np.cov(f, rowvar=False) if f.shape[0] > 1 else np.zeros((f.shape[1],) * 2)
        sigma = np.atleast_2d(sigma) + shrinkage * np.eye(f.shape[1])
        stats.append((mu, sigma))
    return frechet_distance(stats[0][0], stats[0][1], stats[1][0], stats[1][1])
