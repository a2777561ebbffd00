"""Declarative architecture specs and builders for generators and discriminators.

An ArchSpec is an ordered list of layer descriptors that can be validated,
serialized to versioned JSON text, counted (parameters), built into a torch
module, and sliced by channel masks. Normalization layers carry a per-channel
scale that gates the whole channel (scale zero kills the channel exactly),
which is what makes channel pruning by exact zeros well defined.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace
from typing import Iterator, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .quantization import QuantConfig, fake_quantize_activation, fake_quantize_weight

__all__ = [
    "ActSpec",
    "ArchSpec",
    "ArchSpecError",
    "CheckpointError",
    "ConvSpec",
    "DenseSpec",
    "GatedNorm",
    "NormSpec",
    "QuantRuntime",
    "ResBlockSpec",
    "SpecNet",
    "UpsampleSpec",
    "build_discriminator",
    "build_generator",
    "builtin_specs",
    "export_params",
    "forward_quantized",
    "load_checkpoint",
    "load_params",
    "load_teacher",
    "save_checkpoint",
    "scale_channels",
    "spec_param_count",
]

ACTIVATIONS = ("relu", "lrelu", "tanh", "sigmoid")


class ArchSpecError(ValueError):
    """Inconsistent architecture description."""


@dataclass(frozen=True)
class ConvSpec:
    id: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    bias: bool = True
    transpose: bool = False


@dataclass(frozen=True)
class NormSpec:
    id: str
    channels: int
    prunable: bool = False
    mode: str = "instance"  # or "batch"


@dataclass(frozen=True)
class ActSpec:
    id: str
    fn: str = "relu"


@dataclass(frozen=True)
class UpsampleSpec:
    id: str
    scale: int = 2


@dataclass(frozen=True)
class DenseSpec:
    id: str
    in_features: int
    out_features: int
    reshape: tuple[int, int, int] = (0, 0, 0)  # (C, H, W) after the projection


@dataclass(frozen=True)
class ResBlockSpec:
    id: str
    body: tuple["LayerSpec", ...] = ()


LayerSpec = Union[ConvSpec, NormSpec, ActSpec, UpsampleSpec, DenseSpec, ResBlockSpec]

_LAYER_KINDS = {
    "conv": ConvSpec,
    "norm": NormSpec,
    "act": ActSpec,
    "upsample": UpsampleSpec,
    "dense": DenseSpec,
    "resblock": ResBlockSpec,
}


@dataclass(frozen=True)
class ArchSpec:
    name: str
    input_kind: str  # "image" | "noise"
    in_channels: int  # image channels, or noise vector length
    image_size: int  # input resolution for images, output resolution for noise
    layers: tuple[LayerSpec, ...]
    format_version: int = 1

    def validate(self) -> "ArchSpec":
        if self.input_kind not in ("image", "noise"):
            raise ArchSpecError(f"unknown input kind {self.input_kind!r}")
        _validate_layers(self.layers, self.in_channels, self.input_kind, top=True)
        ids = [l.id for l in self.iter_layers()]
        if len(ids) != len(set(ids)):
            raise ArchSpecError("duplicate layer ids")
        return self

    def iter_layers(self) -> Iterator[LayerSpec]:
        """All layers, depth first, residual bodies included."""
        yield from _iter_layers(self.layers)

    def prunable_norms(self) -> list[NormSpec]:
        return [l for l in self.iter_layers() if isinstance(l, NormSpec) and l.prunable]

    def to_text(self, compact: bool = False) -> str:
        d = _spec_to_dict(self)
        if compact:
            return json.dumps(d, separators=(",", ":"), sort_keys=True)
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ArchSpec":
        return _spec_from_dict(json.loads(text)).validate()


def _iter_layers(layers) -> Iterator[LayerSpec]:
    for l in layers:
        yield l
        if isinstance(l, ResBlockSpec):
            yield from _iter_layers(l.body)


def _validate_layers(layers, in_channels: int, input_kind: str, top: bool) -> int:
    """Walk the channel chain; returns the exit channel count.

    Channel spaces that feed a residual trunk may not be gated by a prunable
    norm, otherwise extraction could not preserve the skip addition.
    """
    cur = in_channels
    spatial = input_kind == "image" or not top
    gated = False  # current channel space is downstream of a prunable norm
    for i, l in enumerate(layers):
        where = f"layer {i} ({l.id})"
        if isinstance(l, ConvSpec):
            if not spatial:
                raise ArchSpecError(f"{where}: conv before the noise projection")
            if l.in_channels != cur:
                raise ArchSpecError(f"{where}: expects {l.in_channels} in-channels, chain has {cur}")
            cur = l.out_channels
            gated = False
        elif isinstance(l, DenseSpec):
            if spatial:
                raise ArchSpecError(f"{where}: dense after spatial layers")
            if l.in_features != cur:
                raise ArchSpecError(f"{where}: expects {l.in_features} features, chain has {cur}")
            c, h, w = l.reshape
            if c * h * w != l.out_features:
                raise ArchSpecError(f"{where}: reshape {l.reshape} does not match {l.out_features}")
            cur = c
            spatial = True
            gated = False
        elif isinstance(l, NormSpec):
            if l.channels != cur:
                raise ArchSpecError(f"{where}: norm width {l.channels} != chain width {cur}")
            if l.mode not in ("instance", "batch"):
                raise ArchSpecError(f"{where}: unknown norm mode {l.mode!r}")
            if l.prunable:
                gated = True
        elif isinstance(l, ActSpec):
            if l.fn not in ACTIVATIONS:
                raise ArchSpecError(f"{where}: unknown activation {l.fn!r}")
        elif isinstance(l, UpsampleSpec):
            if l.scale < 1:
                raise ArchSpecError(f"{where}: bad upsample scale")
        elif isinstance(l, ResBlockSpec):
            if gated:
                raise ArchSpecError(f"{where}: a prunable norm feeds this residual block input")
            exit_ch = _validate_layers(l.body, cur, input_kind, top=False)
            if exit_ch != cur:
                raise ArchSpecError(f"{where}: residual body exits with {exit_ch} channels, trunk has {cur}")
            tail_gated = _body_exit_gated(l.body)
            if tail_gated:
                raise ArchSpecError(f"{where}: a prunable norm gates this residual block output")
        else:
            raise ArchSpecError(f"{where}: unsupported layer kind {type(l).__name__}")
    return cur


def _body_exit_gated(body) -> bool:
    gated = False
    for l in body:
        if isinstance(l, (ConvSpec, DenseSpec)):
            gated = False
        elif isinstance(l, NormSpec) and l.prunable:
            gated = True
        elif isinstance(l, ResBlockSpec):
            gated = False
    return gated


def _spec_to_dict(spec: ArchSpec) -> dict:
    from dataclasses import MISSING

    def layer(l):
        kind = next(k for k, t in _LAYER_KINDS.items() if isinstance(l, t))
        d = {"kind": kind}
        for f_, fdef in l.__dataclass_fields__.items():
            v = getattr(l, f_)
            if fdef.default is not MISSING and v == fdef.default:
                continue  # defaults are implied; keeps the text form small
            if kind == "resblock" and f_ == "body":
                v = [layer(b) for b in v]
            elif isinstance(v, tuple):
                v = list(v)
            d[f_] = v
        return d

    return {
        "format_version": spec.format_version,
        "name": spec.name,
        "input_kind": spec.input_kind,
        "in_channels": spec.in_channels,
        "image_size": spec.image_size,
        "layers": [layer(l) for l in spec.layers],
    }


def _spec_from_dict(d: dict) -> ArchSpec:
    known = {"format_version", "name", "input_kind", "in_channels", "image_size", "layers"}
    extra = set(d) - known
    if extra:
        raise ArchSpecError(f"unknown spec keys: {sorted(extra)}")
    if d.get("format_version") != 1:
        raise ArchSpecError(f"unsupported spec format version {d.get('format_version')!r}")

    def layer(ld: dict) -> LayerSpec:
        ld = dict(ld)
        kind = ld.pop("kind", None)
        if kind not in _LAYER_KINDS:
            raise ArchSpecError(f"unknown layer kind {kind!r}")
        cls = _LAYER_KINDS[kind]
        extra = set(ld) - set(cls.__dataclass_fields__)
        if extra:
            raise ArchSpecError(f"unknown keys for {kind}: {sorted(extra)}")
        if kind == "resblock":
            ld["body"] = tuple(layer(b) for b in ld.get("body", []))
        if kind == "dense" and "reshape" in ld:
            ld["reshape"] = tuple(ld["reshape"])
        return cls(**ld)

    return ArchSpec(
        name=d["name"],
        input_kind=d["input_kind"],
        in_channels=d["in_channels"],
        image_size=d["image_size"],
        layers=tuple(layer(l) for l in d["layers"]),
    )


def spec_param_count(spec: ArchSpec) -> int:
    """Parameter census straight from the descriptors."""
    n = 0
    for l in spec.iter_layers():
        if isinstance(l, ConvSpec):
            n += l.kernel * l.kernel * l.in_channels * l.out_channels
            n += l.out_channels if l.bias else 0
        elif isinstance(l, DenseSpec):
            n += l.in_features * l.out_features + l.out_features
        elif isinstance(l, NormSpec):
            n += 2 * l.channels
    return n


# --- modules -------------------------------------------------------------------


class GatedNorm(nn.Module):
    """Normalization with a channel-gating affine: y = scale * (normalized + shift).

    A zero scale entry zeroes its channel's output exactly, shift included, so a
    pruned channel contributes nothing downstream. Instance mode normalizes per
    sample over (H, W); batch mode over (N, H, W).
    """

    def __init__(self, channels: int, mode: str = "instance", eps: float = 1e-5):
        super().__init__()
        self.mode = mode
        self.eps = eps
        self.scale = nn.Parameter(torch.ones(channels))
        self.shift = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.mode == "instance":
            dims = (2, 3)
        else:
            dims = (0, 2, 3)
        mu = x.mean(dim=dims, keepdim=True)
        var = x.var(dim=dims, keepdim=True, unbiased=False)
        xn = (x - mu) / torch.sqrt(var + self.eps)
        s = self.scale.view(1, -1, 1, 1)
        b = self.shift.view(1, -1, 1, 1)
        return s * (xn + b)


@dataclass(frozen=True)
class QuantRuntime:
    """How a forward pass applies the quantizers.

    weights: "off" or "fake" (quantize-dequantize with identity backward).
    activations: "off", "fake" (grid snap with gated backward) or "clamp"
    (the straight-through surrogate: clamp to [0, clamp] with no rounding).
    Only relu outputs are quantized; tanh/sigmoid heads and the discriminator
    stay full precision.
    """

    cfg: QuantConfig
    weights: str = "fake"
    activations: str = "fake"


class SpecNet(nn.Module):
    """Torch module walking an ArchSpec, with optional fake quantization."""

    def __init__(self, spec: ArchSpec, seed: int = 0):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.ops = nn.ModuleDict()
        for l in spec.iter_layers():
            if isinstance(l, ConvSpec):
                cls = nn.ConvTranspose2d if l.transpose else nn.Conv2d
                kw = {"output_padding": l.stride - 1} if l.transpose else {}
                self.ops[l.id] = cls(
                    l.in_channels, l.out_channels, l.kernel,
                    stride=l.stride, padding=l.padding, bias=l.bias, **kw,
                )
            elif isinstance(l, DenseSpec):
                self.ops[l.id] = nn.Linear(l.in_features, l.out_features)
            elif isinstance(l, NormSpec):
                self.ops[l.id] = GatedNorm(l.channels, mode=l.mode)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """Deterministic init from a private generator: conv/dense weights from
        N(0, 0.02), biases and shifts zero, norm scales uniform on [0.5, 1]."""
        g = torch.Generator().manual_seed(seed)
        for l in self.spec.iter_layers():
            m = self.ops[l.id] if l.id in self.ops else None
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                with torch.no_grad():
                    m.weight.normal_(0.0, 0.02, generator=g)
                    if m.bias is not None:
                        m.bias.zero_()
            elif isinstance(m, GatedNorm):
                with torch.no_grad():
                    m.scale.uniform_(0.5, 1.0, generator=g)
                    m.shift.zero_()

    def forward(self, x: torch.Tensor, quant: QuantRuntime | None = None) -> torch.Tensor:
        return self._run(self.spec.layers, x, quant)

    def _run(self, layers, x, quant):
        for l in layers:
            if isinstance(l, ConvSpec):
                m = self.ops[l.id]
                w = m.weight
                if quant is not None and quant.weights == "fake":
                    w = fake_quantize_weight(w, quant.cfg)
                if l.transpose:
                    x = F.conv_transpose2d(
                        x, w, m.bias, stride=l.stride, padding=l.padding,
                        output_padding=l.stride - 1,
                    )
                else:
                    x = F.conv2d(x, w, m.bias, stride=l.stride, padding=l.padding)
            elif isinstance(l, DenseSpec):
                m = self.ops[l.id]
                w = m.weight
                if quant is not None and quant.weights == "fake":
                    w = fake_quantize_weight(w, quant.cfg)
                x = F.linear(x, w, m.bias)
                c, h, wd = l.reshape
                x = x.view(x.shape[0], c, h, wd)
            elif isinstance(l, NormSpec):
                x = self.ops[l.id](x)
            elif isinstance(l, ActSpec):
                if l.fn == "relu":
                    x = F.relu(x)
                    if quant is not None and quant.activations == "fake":
                        x = fake_quantize_activation(x, quant.cfg)
                    elif quant is not None and quant.activations == "clamp":
                        x = x.clamp(max=quant.cfg.clamp)
                elif l.fn == "lrelu":
                    x = F.leaky_relu(x, 0.2)
                elif l.fn == "tanh":
                    x = torch.tanh(x)
                else:
                    x = torch.sigmoid(x)
            elif isinstance(l, UpsampleSpec):
                x = F.interpolate(x, scale_factor=float(l.scale), mode="nearest")
            elif isinstance(l, ResBlockSpec):
                x = x + self._run(l.body, x, quant)
        return x

    def gamma_parameters(self) -> list[tuple[str, nn.Parameter]]:
        """(layer id, scale parameter) for every prunable norm, in spec order."""
        return [(l.id, self.ops[l.id].scale) for l in self.spec.prunable_norms()]


def build_generator(spec: ArchSpec, seed: int = 0) -> SpecNet:
    """Build a generator. The final activation must bound outputs to [-1, 1]."""
    spec.validate()
    last_act = [l for l in spec.layers if isinstance(l, ActSpec)]
    if not last_act or last_act[-1].fn != "tanh" or not isinstance(spec.layers[-1], ActSpec):
        raise ArchSpecError("generator spec must end with a tanh activation")
    return SpecNet(spec, seed=seed)


def build_discriminator(spec: ArchSpec, seed: int = 0) -> SpecNet:
    """Build a discriminator. The final activation must be a sigmoid head."""
    spec.validate()
    if not isinstance(spec.layers[-1], ActSpec) or spec.layers[-1].fn != "sigmoid":
        raise ArchSpecError("discriminator spec must end with a sigmoid activation")
    return SpecNet(spec, seed=seed)


def forward_quantized(
    net: SpecNet, x: torch.Tensor, cfg: QuantConfig, enabled: bool = True
) -> torch.Tensor:
    """Run the net with both quantizers active, or at full precision if disabled."""
    return net(x, QuantRuntime(cfg) if enabled else None)


def export_params(net: SpecNet) -> dict[str, torch.Tensor]:
    """Detached copies of all parameters keyed '<layer id>.<weight|bias|scale|shift>'."""
    out: dict[str, torch.Tensor] = {}
    for lid, module in net.ops.items():
        for pname, p in module.named_parameters():
            out[f"{lid}.{pname}"] = p.detach().clone()
    return out


def load_params(net: SpecNet, params: dict[str, torch.Tensor]) -> SpecNet:
    expected = set(export_params(net))
    got = set(params)
    if expected != got:
        missing, extra = sorted(expected - got), sorted(got - expected)
        raise KeyError(f"parameter set mismatch: missing {missing[:4]}, extra {extra[:4]}")
    with torch.no_grad():
        for lid, module in net.ops.items():
            for pname, p in module.named_parameters():
                src = params[f"{lid}.{pname}"]
                if tuple(src.shape) != tuple(p.shape):
                    raise ValueError(f"shape mismatch for {lid}.{pname}")
                p.copy_(src)
    return net


# --- checkpoint container --------------------------------------------------------

_MAGIC = b"GSLIMCK1"


class CheckpointError(RuntimeError):
    """Unreadable, truncated or corrupt checkpoint file."""


def save_checkpoint(
    path, spec: ArchSpec | None, params: dict[str, torch.Tensor], meta: dict | None = None
) -> str:
    """Write named tensors with a JSON header and a payload checksum.

    Returns the payload sha256 (the file's integrity checksum).
    """
    names = list(params)
    arrays = [params[n].detach().cpu().contiguous() for n in names]
    payload = b"".join(a.numpy().tobytes() for a in arrays)
    digest = hashlib.sha256(payload).hexdigest()
    header = {
        "format": 1,
        "spec": _spec_to_dict(spec) if spec is not None else None,
        "tensors": [
            {"name": n, "shape": list(a.shape), "dtype": str(a.numpy().dtype)}
            for n, a in zip(names, arrays)
        ],
        "meta": meta or {},
        "payload_sha256": digest,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)
    return digest


def load_checkpoint(
    path, expected_checksum: str | None = None
) -> tuple[ArchSpec | None, dict[str, torch.Tensor], dict]:
    """Read a checkpoint; verifies the stored payload checksum and, if given,
    the caller's expected checksum. Returns (spec, params, meta)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise
    if len(raw) < len(_MAGIC) + 8 or raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[len(_MAGIC) : len(_MAGIC) + 8])
    start = len(_MAGIC) + 8
    try:
        header = json.loads(raw[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    payload = raw[start + hlen :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch (truncated or corrupt)")
    if expected_checksum is not None and digest != expected_checksum:
        raise CheckpointError(f"{path}: checksum {digest[:12]} != expected {expected_checksum[:12]}")
    params: dict[str, torch.Tensor] = {}
    off = 0
    for t in header["tensors"]:
        dt = np.dtype(t["dtype"])
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        nbytes = n * dt.itemsize
        if off + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload")
        arr = np.frombuffer(payload, dtype=dt, count=n, offset=off).reshape(t["shape"])
        params[t["name"]] = torch.from_numpy(arr.copy())
        off += nbytes
    spec = _spec_from_dict(header["spec"]).validate() if header["spec"] is not None else None
    meta = dict(header.get("meta", {}))
    meta["checksum"] = digest
    return spec, params, meta


def load_teacher(path, expected_checksum: str | None = None) -> tuple[ArchSpec, dict[str, torch.Tensor]]:
    """Load a frozen teacher generator checkpoint (checksum verified)."""
    spec, params, _ = load_checkpoint(path, expected_checksum)
    if spec is None:
        raise CheckpointError(f"{path}: checkpoint carries no architecture spec")
    return spec, params


def teacher_module(path, expected_checksum: str | None = None) -> SpecNet:
    spec, params = load_teacher(path, expected_checksum)
    net = build_generator(spec)
    load_params(net, params)
    for p in net.parameters():
        p.requires_grad_(False)
    net.eval()
    return net


# --- builtin catalog --------------------------------------------------------------


def _translation_generator(
    name: str,
    image_size: int,
    base: int,
    blocks: int,
    stem_kernel: int = 7,
    decoder: str = "transpose",  # or "upsample"
) -> ArchSpec:
    """Encoder / residual trunk / decoder image-translation generator."""
    trunk = base * 2
    layers: list[LayerSpec] = [
        ConvSpec("stem_conv", 3, base, stem_kernel, padding=stem_kernel // 2),
        NormSpec("stem_norm", base, prunable=True),
        ActSpec("stem_act"),
        ConvSpec("down_conv", base, trunk, 3, stride=2, padding=1),
        NormSpec("down_norm", trunk),  # feeds the residual trunk: not prunable
        ActSpec("down_act"),
    ]
    for b in range(blocks):
        body: tuple[LayerSpec, ...] = (
            ConvSpec(f"res{b}_conv1", trunk, trunk, 3, padding=1),
            NormSpec(f"res{b}_norm1", trunk, prunable=True),
            ActSpec(f"res{b}_act"),
            ConvSpec(f"res{b}_conv2", trunk, trunk, 3, padding=1),
            NormSpec(f"res{b}_norm2", trunk),  # gates the skip addition: not prunable
        )
        layers.append(ResBlockSpec(f"res{b}", body))
    if decoder == "transpose":
        layers += [
            ConvSpec("up_conv", trunk, base, 3, stride=2, padding=1, transpose=True),
            NormSpec("up_norm", base, prunable=True),
            ActSpec("up_act"),
        ]
    else:
        layers += [
            UpsampleSpec("up_sample", 2),
            ConvSpec("up_conv", trunk, base, 3, padding=1),
            NormSpec("up_norm", base, prunable=True),
            ActSpec("up_act"),
        ]
    layers += [
        ConvSpec("out_conv", base, 3, stem_kernel, padding=stem_kernel // 2),
        ActSpec("out_act", fn="tanh"),
    ]
    return ArchSpec(name, "image", 3, image_size, tuple(layers)).validate()


def _calibration_generator() -> ArchSpec:
    """The standard 9-residual-block translation generator at 256x256.

    Width 64, two stride-2 encoder convs, nine 256-wide residual blocks, two
    stride-2 transposed-conv decoder stages, 7x7 stem and head. Used for
    accounting calibration only, never trained here.
    """
    layers: list[LayerSpec] = [
        ConvSpec("stem_conv", 3, 64, 7, padding=3),
        NormSpec("stem_norm", 64, prunable=True),
        ActSpec("stem_act"),
        ConvSpec("down1_conv", 64, 128, 3, stride=2, padding=1),
        NormSpec("down1_norm", 128, prunable=True),
        ActSpec("down1_act"),
        ConvSpec("down2_conv", 128, 256, 3, stride=2, padding=1),
        NormSpec("down2_norm", 256),
        ActSpec("down2_act"),
    ]
    for b in range(9):
        layers.append(
            ResBlockSpec(
                f"res{b}",
                (
                    ConvSpec(f"res{b}_conv1", 256, 256, 3, padding=1),
                    NormSpec(f"res{b}_norm1", 256, prunable=True),
                    ActSpec(f"res{b}_act"),
                    ConvSpec(f"res{b}_conv2", 256, 256, 3, padding=1),
                    NormSpec(f"res{b}_norm2", 256),
                ),
            )
        )
    layers += [
        ConvSpec("up1_conv", 256, 128, 3, stride=2, padding=1, transpose=True),
        NormSpec("up1_norm", 128, prunable=True),
        ActSpec("up1_act"),
        ConvSpec("up2_conv", 128, 64, 3, stride=2, padding=1, transpose=True),
        NormSpec("up2_norm", 64, prunable=True),
        ActSpec("up2_act"),
        ConvSpec("out_conv", 64, 3, 7, padding=3),
        ActSpec("out_act", fn="tanh"),
    ]
    return ArchSpec("calibration-9block-256", "image", 3, 256, tuple(layers)).validate()


def _desk_discriminator(image_size: int = 32, base: int = 8) -> ArchSpec:
    layers = (
        ConvSpec("d_conv1", 3, base, 4, stride=2, padding=1),
        ActSpec("d_act1", fn="lrelu"),
        ConvSpec("d_conv2", base, base * 2, 4, stride=2, padding=1),
        NormSpec("d_norm2", base * 2),
        ActSpec("d_act2", fn="lrelu"),
        ConvSpec("d_conv3", base * 2, 1, 4, stride=1, padding=1),
        ActSpec("d_out", fn="sigmoid"),
    )
    return ArchSpec("desk-discriminator-32", "image", 3, image_size, layers).validate()


def _noise_generator(size: int = 32, zdim: int = 64, base: int = 32) -> ArchSpec:
    start = size // 4
    layers: list[LayerSpec] = [
        DenseSpec("z_proj", zdim, base * start * start, reshape=(base, start, start)),
        NormSpec("z_norm", base),  # reshape boundary: not prunable
        ActSpec("z_act"),
        UpsampleSpec("up1_sample", 2),
        ConvSpec("up1_conv", base, base // 2, 3, padding=1),
        NormSpec("up1_norm", base // 2, prunable=True),
        ActSpec("up1_act"),
        UpsampleSpec("up2_sample", 2),
        ConvSpec("up2_conv", base // 2, base // 2, 3, padding=1),
        NormSpec("up2_norm", base // 2, prunable=True),
        ActSpec("up2_act"),
        ConvSpec("out_conv", base // 2, 3, 3, padding=1),
        ActSpec("out_act", fn="tanh"),
    ]
    return ArchSpec("noise-generator-32", "noise", zdim, size, tuple(layers)).validate()


def builtin_specs() -> dict[str, ArchSpec]:
    """Named architecture catalog.

    calibration-9block-256 exists for FLOPs/size accounting calibration; the
    desk-* entries are the minute-scale generators and discriminator; the
    noise generator covers noise-to-image mode.
    """
    specs = [
        _calibration_generator(),
        _translation_generator("desk-teacher-32", 32, base=10, blocks=3, stem_kernel=5, decoder="upsample"),
        _translation_generator("desk-student-half-32", 32, base=5, blocks=3, stem_kernel=5, decoder="upsample"),
        _desk_discriminator(),
        _noise_generator(),
    ]
    return {s.name: s for s in specs}


def scale_channels(spec: ArchSpec, frac: float, name: str | None = None) -> ArchSpec:
    """Uniformly scale interior channel counts; image channels and the noise
    dimension are left alone."""

    def width(c: int) -> int:
        return max(1, round(c * frac))

    def conv(l: ConvSpec) -> ConvSpec:
        return replace(
            l,
            in_channels=l.in_channels if l.in_channels == 3 else width(l.in_channels),
            out_channels=l.out_channels if l.out_channels == 3 else width(l.out_channels),
        )

    def walk(layers) -> tuple[LayerSpec, ...]:
        out = []
        for l in layers:
            if isinstance(l, ConvSpec):
                out.append(conv(l))
            elif isinstance(l, NormSpec):
                out.append(replace(l, channels=width(l.channels)))
            elif isinstance(l, DenseSpec):
                c, h, w = l.reshape
                out.append(replace(l, out_features=width(c) * h * w, reshape=(width(c), h, w)))
            elif isinstance(l, ResBlockSpec):
                out.append(replace(l, body=walk(l.body)))
            else:
                out.append(l)
        return tuple(out)

    new = ArchSpec(
        name or f"{spec.name}-x{frac:g}",
        spec.input_kind,
        spec.in_channels,
        spec.image_size,
        walk(spec.layers),
    )
    return new.validate()
