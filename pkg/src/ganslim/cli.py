"""Experiment front-end: teach, slim, eval, ablate, export.

Config files are nested JSON mapped strictly onto the config dataclasses
(unknown keys are a hard error, silent typo absorption is worse than a crash).
`--override key.path=value` patches any config entry from the command line.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .data import TaskSpec, eval_split, make_task
from .distill import load_extractor, train_feature_extractor
from .engine import (
    NumericError,
    RunConfig,
    VARIANT_TAGS,
    _dataclass_from_dict,
    config_from_dict,
    run_variant,
    train_teacher,
)
from .metrics import ModelStats, bytes_to_mb, compression_ratios, count_flops, model_size, proxy_fid
from .models import (
    ArchSpec,
    CheckpointError,
    QuantRuntime,
    build_generator,
    load_checkpoint,
    load_params,
)
from .quantization import QuantConfig, QuantizedBlob, pack_weights

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TeachConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    arch: str = "desk-teacher-32"
    budget: int = 2000
    batch_size: int = 8
    weight_lr: float = 1e-3
    seed: int = 0
    out: str = "teacher.ckpt"


def _parse_override(expr: str) -> tuple[list[str], object]:
    if "=" not in expr:
        raise ConfigError(f"override {expr!r} is not key=value")
    key, _, raw = expr.partition("=")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings need no quotes
    return key.split("."), value


def _apply_overrides(d: dict, overrides: list[str]) -> dict:
    for expr in overrides or []:
        path, value = _parse_override(expr)
        node = d
        for part in path[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[path[-1]] = value
    return d


def _load_config_dict(path: str | None, overrides: list[str]) -> dict:
    if path is None:
        d: dict = {}
    else:
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    return _apply_overrides(d, overrides)


# --- deployment bundle -------------------------------------------------------------


def _bundle_layout(spec: ArchSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical tensor order of a bundle: the architecture fully determines
    every parameter name and shape, so the payload needs no per-tensor index."""
    from ganslim.models import SpecNet, export_params

    template = export_params(SpecNet(spec))
    return [(name, tuple(template[name].shape)) for name in sorted(template)]


def export_bundle(student_path: str, out_dir: str) -> dict:
    """Write a deployment bundle: architecture text, packed tensors, manifest.

    Quantized kernels are bit-packed (self-describing blobs) at their recorded
    grid scales; everything else is raw little-endian float32. Tensors are laid
    out back to back in the order the architecture implies, so the manifest
    stays a few lines.
    """
    spec, params, meta = load_checkpoint(student_path)
    if spec is None:
        raise CheckpointError(f"{student_path}: no architecture spec in checkpoint")
    quantized = bool(meta.get("quantized", False))
    qcfg = QuantConfig(**meta["quant_config"]) if meta.get("quant_config") else QuantConfig()
    scales = meta.get("quant_scales", {})
    os.makedirs(out_dir, exist_ok=True)

    layout = _bundle_layout(spec)
    if set(params) != {n for n, _ in layout}:
        raise CheckpointError(f"{student_path}: parameters do not match the spec")
    payload = bytearray()
    for name, _ in layout:
        t = params[name]
        if quantized and t.dim() >= 2:
            payload.extend(pack_weights(t, qcfg, scale=scales.get(name)).to_bytes())
        else:
            payload.extend(t.detach().cpu().contiguous().numpy().astype(np.float32).tobytes())

    with open(os.path.join(out_dir, "tensors.bin"), "wb") as fh:
        fh.write(bytes(payload))
    with open(os.path.join(out_dir, "spec.json"), "w") as fh:
        fh.write(spec.to_text(compact=True))
    manifest = {
        "format": 1,
        "quantized": quantized,
        "quant_config": asdict(qcfg),
        "tensor_count": len(layout),
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, separators=(",", ":"), sort_keys=True)
    return manifest


def load_bundle(bundle_dir: str):
    """Re-import a bundle; returns (spec, params, quant runtime or None)."""
    with open(os.path.join(bundle_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    with open(os.path.join(bundle_dir, "spec.json")) as fh:
        spec = ArchSpec.from_text(fh.read())
    with open(os.path.join(bundle_dir, "tensors.bin"), "rb") as fh:
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointError(f"{bundle_dir}: bundle payload checksum mismatch")
    quantized = manifest["quantized"]
    params = {}
    offset = 0
    for name, shape in _bundle_layout(spec):
        if quantized and len(shape) >= 2:
            blob, offset = QuantizedBlob.from_buffer(payload, offset)
            arr = blob.dequantize()
        else:
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(shape)
            offset += 4 * n
        params[name] = torch.from_numpy(np.ascontiguousarray(arr))
    if offset != len(payload):
        raise CheckpointError(f"{bundle_dir}: payload length mismatch")
    qcfg = QuantConfig(**manifest["quant_config"])
    quant = QuantRuntime(qcfg, weights="off", activations="fake") if quantized else None
    return spec, params, quant


def bundle_size_bytes(bundle_dir: str) -> int:
    total = 0
    for name in os.listdir(bundle_dir):
        total += os.path.getsize(os.path.join(bundle_dir, name))
    return total


# --- evaluation --------------------------------------------------------------------


def evaluate_student(student_path: str, teacher_path: str, eval_images: int = 128):
    """Compression report of a saved student against its teacher."""
    t_spec, t_params, t_meta = load_checkpoint(teacher_path)
    s_spec, s_params, s_meta = load_checkpoint(student_path)
    if t_spec is None or s_spec is None:
        raise CheckpointError("both checkpoints must carry architecture specs")
    task = TaskSpec(**t_meta["task"]) if "task" in t_meta else TaskSpec()
    teacher = build_generator(t_spec)
    load_params(teacher, t_params)
    student = build_generator(s_spec)
    load_params(student, s_params)
    for net in (teacher, student):
        for p in net.parameters():
            p.requires_grad_(False)

    ex_file = t_meta.get("extractor_path")
    ex_full = os.path.join(os.path.dirname(os.path.abspath(teacher_path)), ex_file or "")
    if ex_file and os.path.exists(ex_full):
        extractor = load_extractor(ex_full, t_meta.get("extractor_checksum"))
    else:
        dx, dy = make_task(task)
        extractor = train_feature_extractor(dx, dy, seed=t_meta.get("seed", 0))

    ev_x, ev_y = eval_split(task, eval_images)
    if t_spec.input_kind == "noise":
        g = torch.Generator().manual_seed(int(t_meta.get("seed", 0)) + 4242)
        x = torch.randn(eval_images, t_spec.in_channels, generator=g)
    else:
        x = torch.from_numpy(ev_x)
    y = torch.from_numpy(ev_y)

    quantized = bool(s_meta.get("quantized", False))
    qcfg = QuantConfig(**s_meta["quant_config"]) if s_meta.get("quant_config") else QuantConfig()
    squant = QuantRuntime(qcfg, weights="off", activations="fake") if quantized else None
    with torch.no_grad():
        fid_t = proxy_fid(teacher(x), y, extractor)
        fid_s = proxy_fid(student(x, squant), y, extractor)
    t_stats = ModelStats(count_flops(t_spec), model_size(t_spec, t_params, 32), fid_t)
    s_stats = ModelStats(
        count_flops(s_spec),
        model_size(s_spec, s_params, qcfg.weight_bits if quantized else 32),
        fid_s,
    )
    return compression_ratios(t_stats, s_stats)


# --- commands ----------------------------------------------------------------------


def cmd_teach(args) -> int:
    d = _load_config_dict(args.config, args.override)
    cfg = _dataclass_from_dict(TeachConfig, d, "teach config")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    path = train_teacher(
        cfg.task, arch=cfg.arch, budget=cfg.budget, seed=cfg.seed,
        out_path=cfg.out, batch_size=cfg.batch_size, weight_lr=cfg.weight_lr,
    )
    print(f"teacher checkpoint written to {path}")
    return EXIT_OK


def _slim_config(args) -> RunConfig:
    d = _load_config_dict(args.config, args.override)
    try:
        cfg = config_from_dict(d)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "variant", None) is not None:
        cfg = replace(cfg, variant=args.variant)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def cmd_slim(args) -> int:
    cfg = _slim_config(args)
    artifacts = run_variant(cfg.variant, cfg)
    print(f"run directory: {artifacts.out_dir}")
    print(artifacts.report.to_text(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate_student(args.student, args.teacher, eval_images=args.eval_images)
    text = report.to_text()
    print(text, end="")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _slim_config(args)
    tags = args.variants.split(",") if args.variants else list(VARIANT_TAGS)
    for tag in tags:
        if tag not in VARIANT_TAGS:
            raise ConfigError(f"unknown variant {tag!r}")
    root = cfg.out_dir or os.path.join(os.environ.get("GANSLIM_OUT", "runs"), "ablation")
    rows = []
    for tag in tags:
        sub = replace(cfg, variant=tag, out_dir=os.path.join(root, tag.replace("+", "_")))
        artifacts = run_variant(tag, sub)
        r = artifacts.report
        rows.append(
            {
                "variant": tag,
                "flops_M": r.flops_student / 1e6,
                "size_MB": bytes_to_mb(r.size_student),
                "proxy_fid": r.fid_student,
                "r_s": r.flops_ratio,
                "r_c": r.size_ratio,
                "r_f": r.fid_ratio,
                "grid": os.path.join(artifacts.out_dir, "images", "grid.png"),
            }
        )
    header = f"{'variant':10s} {'flops_M':>10s} {'size_MB':>9s} {'proxy_fid':>10s} {'r_s':>7s} {'r_c':>7s} {'r_f':>7s}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['variant']:10s} {r['flops_M']:10.2f} {r['size_MB']:9.3f} "
            f"{r['proxy_fid']:10.4f} {r['r_s']:7.2f} {r['r_c']:7.2f} {r['r_f']:7.2f}"
        )
    table = "\n".join(lines) + "\n"
    print(table, end="")
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "comparison.txt"), "w") as fh:
        fh.write(table)
    with open(os.path.join(root, "comparison.json"), "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_export(args) -> int:
    manifest = export_bundle(args.student, args.out)
    n = manifest["tensor_count"]
    print(f"exported {n} tensors to {args.out} ({bundle_size_bytes(args.out)} bytes)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ganslim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=str, default=None, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", type=str, default=None, help="output directory or file")
        sp.add_argument(
            "--override", action="append", default=[], metavar="KEY=VALUE",
            help="patch a config entry (dot paths, JSON values)",
        )

    sp = sub.add_parser("teach", help="train the dense teacher")
    common(sp)
    sp.set_defaults(fn=cmd_teach)

    sp = sub.add_parser("slim", help="run one compression variant")
    common(sp)
    sp.add_argument("--variant", type=str, default=None, choices=VARIANT_TAGS)
    sp.set_defaults(fn=cmd_slim)

    sp = sub.add_parser("eval", help="compression report for a saved student")
    sp.add_argument("--student", required=True)
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--eval-images", type=int, default=128)
    sp.add_argument("--out", type=str, default=None)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ablate", help="run several variants at matched budget")
    common(sp)
    sp.add_argument("--variants", type=str, default=None, help="comma-separated tags")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("export", help="write a deployment bundle")
    sp.add_argument("--student", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
