"""Alternating minimax compression: per-iteration weight, scale and
discriminator updates with the two learning-rate schedules, plus the ablation
variant pipelines (pruning-only, cascades, distillation-only, post-hoc
quantization, frozen discriminator).

Update order inside every iteration is weights -> scales -> discriminator,
with each sub-objective re-evaluated at the values the previous update left
behind. Weights and discriminator use Adam with betas (0.9, 0.5); scales take
a plain proximal gradient step whose shrinkage produces exact zeros.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .data import TaskSpec, batch_stream, dataset_fingerprint, eval_split, make_task
from .distill import (
    FeatureExtractor,
    distill_loss,
    load_extractor,
    save_extractor,
    train_feature_extractor,
)
from .metrics import (
    CompressionReport,
    ModelStats,
    compression_ratios,
    count_flops,
    model_size,
    proxy_fid,
)
from .models import (
    ArchSpec,
    QuantRuntime,
    SpecNet,
    build_discriminator,
    build_generator,
    builtin_specs,
    export_params,
    load_params,
    load_teacher,
    save_checkpoint,
    scale_channels,
)
from .objective import ClampCounter, gan_loss_discriminator, loss_gamma_fidelity, loss_w
from .quantization import QuantConfig, finalize_weights
from .sparsity import (
    ChannelMask,
    channel_mask,
    collect_scale_vectors,
    extract_subnetwork,
    l1_norm,
    masks_to_json,
    prox_step,
)

__all__ = [
    "NumericError",
    "RunArtifacts",
    "RunConfig",
    "Schedule",
    "SlimState",
    "VARIANT_TAGS",
    "lr_gamma",
    "lr_weight",
    "run",
    "run_variant",
    "sweep_sparsity_weight",
    "train_step",
    "train_teacher",
]

VARIANT_TAGS = ("GS-32", "GS-8", "GS-8-MSE", "CP", "CP+D", "D+CP", "GD", "postQ", "fixedD")

ADAM_BETAS = (0.9, 0.5)
ADAM_EPS = 1e-8


class NumericError(RuntimeError):
    """Training hit a non-finite loss; a diagnostic snapshot was written."""


@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedules over a horizon of total_iters steps.

    The weight/discriminator rate stays at weight_lr through the first half,
    then decays linearly to zero at the horizon. The scale rate follows cosine
    annealing from gamma_lr at t=0 to zero at the horizon.
    """

    weight_lr: float = 2e-4
    gamma_lr: float = 0.05
    total_iters: int = 2000


def lr_weight(t: float, sched: Schedule) -> float:
    T = sched.total_iters
    if T <= 0:
        return 0.0
    if t <= T / 2:
        return sched.weight_lr
    return sched.weight_lr * 2.0 * (T - t) / T


def lr_gamma(t: float, sched: Schedule) -> float:
    T = sched.total_iters
    if T <= 0:
        return 0.0
    return sched.gamma_lr * (1.0 + math.cos(math.pi * t / T)) / 2.0


@dataclass(frozen=True)
class RunConfig:
    """Everything one compression run needs; fully serializable."""

    task: TaskSpec = field(default_factory=TaskSpec)
    teacher_path: str = "teacher.ckpt"
    variant: str = "GS-32"
    distill_weight: float = 10.0
    sparsity_weight: float = 0.01
    quant: QuantConfig = field(default_factory=QuantConfig)
    schedule: Schedule = field(default_factory=Schedule)
    metric: str = "perceptual"
    batch_size: int = 4
    seed: int = 0
    out_dir: str | None = None
    disc_arch: str = "desk-discriminator-32"
    nonsaturating: bool = False
    threads: int = 1
    log_every: int = 1
    checkpoint_every: int = 0
    eval_images: int = 128
    extractor_path: str | None = None
    extractor_checksum: str | None = None
    extractor_steps: int = 300
    gd_channel_frac: float = 0.5

    def validate(self) -> "RunConfig":
        if self.variant not in VARIANT_TAGS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANT_TAGS}")
        if self.metric not in ("perceptual", "mse"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.sparsity_weight < 0 or self.distill_weight < 0:
            raise ValueError("loss weights must be nonnegative")
        return self


# --- state and the single step ---------------------------------------------------


class SlimState:
    """All trainables plus optimizer moments and the iteration counter."""

    def __init__(
        self,
        generator: SpecNet,
        discriminator: SpecNet | None,
        schedule: Schedule,
        prox_gammas: bool = True,
    ):
        self.generator = generator
        self.discriminator = discriminator
        self.schedule = schedule
        self.prox_gammas = prox_gammas
        self.gammas = generator.gamma_parameters() if prox_gammas else []
        gamma_ids = {id(p) for _, p in self.gammas}
        w_params = [p for p in generator.parameters() if id(p) not in gamma_ids]
        # foreach=False keeps the single-tensor kernel: updates match the
        # textbook moment formulas to the last bit, which the oracle tests pin
        self.opt_w = torch.optim.Adam(
            w_params, lr=schedule.weight_lr, betas=ADAM_BETAS, eps=ADAM_EPS, foreach=False
        )
        self.opt_d = (
            torch.optim.Adam(
                discriminator.parameters(), lr=schedule.weight_lr,
                betas=ADAM_BETAS, eps=ADAM_EPS, foreach=False,
            )
            if discriminator is not None
            else None
        )
        self.t = 1
        self.clamps = ClampCounter()
        self.last_trace: tuple[str, ...] = ()

    def gamma_zero_fraction(self) -> float:
        # reported for every phase, proximal or not: finetunes after an
        # extraction legitimately show 0 again (the zeros were cut out)
        gammas = self.generator.gamma_parameters()
        total = sum(p.numel() for _, p in gammas)
        if total == 0:
            return 0.0
        zeros = sum(int((p.detach() == 0.0).sum()) for _, p in gammas)
        return zeros / total


@dataclass(frozen=True)
class TrainContext:
    """Fixed ingredients of one training phase."""

    teacher: SpecNet | None
    extractor: FeatureExtractor | None
    distill_weight: float
    sparsity_weight: float
    metric: str
    quant: QuantRuntime | None
    adversarial: bool = True
    freeze_discriminator: bool = False
    nonsaturating: bool = False


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def train_step(
    state: SlimState, batch_x: torch.Tensor, batch_y: torch.Tensor, cfg: TrainContext
) -> dict:
    """One alternating update; returns the per-iteration log record fields."""
    if state.t > state.schedule.total_iters:
        raise ValueError(f"step {state.t} beyond horizon {state.schedule.total_iters}")
    trace: list[str] = []
    alpha = lr_weight(state.t, state.schedule)
    eta = lr_gamma(state.t, state.schedule)
    g = state.generator

    teacher_out = None
    if cfg.distill_weight > 0 or not cfg.adversarial:
        with torch.no_grad():
            teacher_out = cfg.teacher(batch_x)

    # (1) weights
    if cfg.adversarial:
        lw, adv, dist = loss_w(
            batch_x, g, teacher_out if teacher_out is not None else batch_x,
            state.discriminator, cfg.distill_weight if teacher_out is not None else 0.0,
            cfg.metric, cfg.extractor, cfg.quant, cfg.nonsaturating, state.clamps,
        )
        dist_val = float(dist.detach()) if teacher_out is not None else 0.0
    else:
        fake = g(batch_x, cfg.quant)
        lw = distill_loss(fake, teacher_out, cfg.metric, cfg.extractor)
        dist_val = float(lw.detach())
    if not math.isfinite(float(lw.detach())):
        raise NumericError(f"non-finite weight loss at t={state.t}")
    state.opt_w.zero_grad(set_to_none=True)
    lw.backward()
    _set_lr(state.opt_w, alpha)
    state.opt_w.step()
    trace.append("W")

    # (2) scales, by proximal gradient at the fresh weights
    if state.prox_gammas and state.gammas:
        lg = loss_gamma_fidelity(
            batch_x, g, teacher_out if teacher_out is not None else batch_x,
            state.discriminator, cfg.distill_weight if teacher_out is not None else 0.0,
            cfg.metric, cfg.extractor, cfg.quant, cfg.nonsaturating, state.clamps,
        )
        if not math.isfinite(float(lg.detach())):
            raise NumericError(f"non-finite scale loss at t={state.t}")
        gamma_params = [p for _, p in state.gammas]
        grads = torch.autograd.grad(lg, gamma_params, allow_unused=True)
        with torch.no_grad():
            for p, gr in zip(gamma_params, grads):
                gr = torch.zeros_like(p) if gr is None else gr
                p.copy_(prox_step(p, gr, eta, cfg.sparsity_weight))
        trace.append("gamma")

    # (3) discriminator, by gradient ascent on the fresh generator
    gan_val = 0.0
    if cfg.adversarial:
        with torch.no_grad():
            fake = g(batch_x, cfg.quant)
        ltheta = gan_loss_discriminator(batch_y, fake, state.discriminator, state.clamps)
        if not math.isfinite(float(ltheta.detach())):
            raise NumericError(f"non-finite discriminator loss at t={state.t}")
        gan_val = float(ltheta.detach())
        if not cfg.freeze_discriminator:
            state.opt_d.zero_grad(set_to_none=True)
            (-ltheta).backward()
            _set_lr(state.opt_d, alpha)
            state.opt_d.step()
            trace.append("theta")

    expected = ["W"]
    if state.prox_gammas and state.gammas:
        expected.append("gamma")
    if cfg.adversarial and not cfg.freeze_discriminator:
        expected.append("theta")
    assert trace == expected, f"update order violated: {trace}"
    state.last_trace = tuple(trace)

    l1 = sum(l1_norm(p.detach()) for _, p in state.gammas)
    record = {
        "alpha": alpha,
        "eta": eta,
        "gan": gan_val,
        "distill": dist_val,
        "channel_l1": l1,
        "total": gan_val + cfg.distill_weight * dist_val + cfg.sparsity_weight * l1,
        "distill_weight": cfg.distill_weight,
        "sparsity_weight": cfg.sparsity_weight,
        "gamma_zero_frac": state.gamma_zero_fraction(),
        "clamps": state.clamps.count,
    }
    state.t += 1
    return record


# --- phase runner -----------------------------------------------------------------


class _MetricsLog:
    def __init__(self, path):
        self.path = path
        self.global_t = 0
        self._fh = open(path, "w")

    def write(self, phase: str, record: dict) -> None:
        self.global_t += 1
        line = {"t": self.global_t, "phase": phase}
        line.update(record)
        self._fh.write(json.dumps(line) + "\n")

    def close(self):
        self._fh.flush()
        self._fh.close()


def _noise_stream(zdim: int, batch_size: int, seed: int):
    g = torch.Generator().manual_seed(seed)
    while True:
        yield torch.randn(batch_size, zdim, generator=g)


def _x_stream(spec: ArchSpec, domain_x: np.ndarray, batch_size: int, seed: int):
    if spec.input_kind == "noise":
        return _noise_stream(spec.in_channels, batch_size, seed)
    stream = batch_stream(domain_x, batch_size, seed)
    return (torch.from_numpy(b) for b in stream)


def _run_phase(
    phase: str,
    log: _MetricsLog | None,
    state: SlimState,
    ctx: TrainContext,
    stream_x,
    stream_y,
    iters: int,
    snapshot_dir: str | None = None,
    checkpoint_every: int = 0,
) -> None:
    for _ in range(iters):
        bx = next(stream_x)
        by = torch.from_numpy(next(stream_y))
        try:
            record = train_step(state, bx, by, ctx)
        except NumericError:
            if snapshot_dir is not None:
                _write_diagnostic(snapshot_dir, phase, state)
            raise
        if log is not None:
            log.write(phase, record)
        if (
            checkpoint_every
            and snapshot_dir is not None
            and (state.t - 1) % checkpoint_every == 0
        ):
            save_checkpoint(
                os.path.join(snapshot_dir, f"checkpoint-{phase}-{state.t - 1}.ckpt"),
                state.generator.spec,
                export_params(state.generator),
                meta={"phase": phase, "t": state.t - 1},
            )


def _write_diagnostic(out_dir: str, phase: str, state: SlimState) -> None:
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(
        os.path.join(out_dir, "diagnostic.ckpt"),
        state.generator.spec,
        export_params(state.generator),
        meta={"phase": phase, "t": state.t, "reason": "non-finite loss"},
    )
    with open(os.path.join(out_dir, "diagnostic.json"), "w") as fh:
        json.dump({"phase": phase, "t": state.t, "clamps": state.clamps.count}, fh, indent=2)


# --- runs -------------------------------------------------------------------------


@dataclass
class RunArtifacts:
    out_dir: str
    student_spec: ArchSpec
    student_params: dict[str, torch.Tensor]
    quantized: bool
    quant_scales: dict[str, float]
    masks: dict[str, ChannelMask]
    report: CompressionReport
    student_path: str
    metrics_path: str


def _resolve_out_dir(config: RunConfig) -> str:
    if config.out_dir:
        return config.out_dir
    root = os.environ.get("GANSLIM_OUT", "runs")
    return os.path.join(root, f"{config.variant}-s{config.seed}")


def _prepare_extractor(config: RunConfig, domain_x, domain_y, out_dir) -> FeatureExtractor:
    if config.extractor_path:
        return load_extractor(config.extractor_path, config.extractor_checksum)
    fx = train_feature_extractor(
        domain_x, domain_y, seed=config.seed, steps=config.extractor_steps
    )
    save_extractor(os.path.join(out_dir, "extractor.ckpt"), fx)
    if config.extractor_checksum and fx.checksum != config.extractor_checksum:
        raise ValueError(
            f"freshly trained extractor checksum {fx.checksum[:12]} does not match "
            f"the pinned {config.extractor_checksum[:12]}"
        )
    return fx


def _eval_batches(spec: ArchSpec, config: RunConfig) -> tuple[torch.Tensor, torch.Tensor]:
    ev_x, ev_y = eval_split(config.task, config.eval_images)
    if spec.input_kind == "noise":
        g = torch.Generator().manual_seed(config.seed + 4242)
        x = torch.randn(config.eval_images, spec.in_channels, generator=g)
    else:
        x = torch.from_numpy(ev_x)
    return x, torch.from_numpy(ev_y)


def _generate(net: SpecNet, x: torch.Tensor, quant: QuantRuntime | None, chunk: int = 64):
    outs = []
    with torch.no_grad():
        for i in range(0, x.shape[0], chunk):
            outs.append(net(x[i : i + chunk], quant))
    return torch.cat(outs)


def _student_report(
    config: RunConfig,
    teacher: SpecNet,
    student: SpecNet,
    student_quant: QuantRuntime | None,
    extractor: FeatureExtractor,
    quantized: bool,
) -> CompressionReport:
    ev_x, ev_y = _eval_batches(teacher.spec, config)
    t_out = _generate(teacher, ev_x, None)
    s_out = _generate(student, ev_x, student_quant)
    fid_t = proxy_fid(t_out, ev_y, extractor)
    fid_s = proxy_fid(s_out, ev_y, extractor)
    t_params = export_params(teacher)
    s_params = export_params(student)
    teacher_stats = ModelStats(
        flops=count_flops(teacher.spec),
        size_bytes=model_size(teacher.spec, t_params, kernel_bits=32),
        proxy_fid=fid_t,
    )
    student_stats = ModelStats(
        flops=count_flops(student.spec),
        size_bytes=model_size(
            student.spec, s_params, kernel_bits=config.quant.weight_bits if quantized else 32
        ),
        proxy_fid=fid_s,
    )
    return compression_ratios(teacher_stats, student_stats)


def _save_image_grid(path, rows: list[torch.Tensor]) -> None:
    """Rows of [-1,1] image tensors -> one PNG grid."""
    from PIL import Image

    tiles = [torch.clamp((r + 1.0) * 127.5, 0, 255).to(torch.uint8).numpy() for r in rows]
    h, w = tiles[0].shape[2], tiles[0].shape[3]
    n = tiles[0].shape[0]
    canvas = np.zeros((len(tiles) * h, n * w, 3), dtype=np.uint8)
    for r, row in enumerate(tiles):
        for c in range(n):
            canvas[r * h : (r + 1) * h, c * w : (c + 1) * w] = row[c].transpose(1, 2, 0)
    Image.fromarray(canvas).save(path)


def _derive_masks(generator: SpecNet) -> dict[str, ChannelMask]:
    vectors = collect_scale_vectors(generator.spec, export_params(generator))
    return {v.layer_id: channel_mask(v, keep_one=True) for v in vectors}


def _finalize_generator(generator: SpecNet, cfg: QuantConfig) -> dict[str, float]:
    params, scales = finalize_weights(export_params(generator), cfg)
    load_params(generator, params)
    return scales


def _fresh_models(config: RunConfig, gen_spec: ArchSpec) -> tuple[SpecNet, SpecNet]:
    generator = build_generator(gen_spec, seed=config.seed)
    disc_spec = builtin_specs()[config.disc_arch]
    discriminator = build_discriminator(disc_spec, seed=config.seed + 1)
    return generator, discriminator


def run(config: RunConfig) -> RunArtifacts:
    """Execute the configured variant end to end and write all artifacts."""
    return run_variant(config.variant, config)


def run_variant(tag: str, config: RunConfig) -> RunArtifacts:
    if tag not in VARIANT_TAGS:
        raise ValueError(f"unknown variant {tag!r}; choose from {VARIANT_TAGS}")
    config = replace(config, variant=tag).validate()
    torch.set_num_threads(max(1, config.threads))
    torch.manual_seed(config.seed)

    out_dir = _resolve_out_dir(config)
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        fh.write(config_to_json(config))

    domain_x, domain_y = make_task(config.task)
    teacher_spec, teacher_params = load_teacher(config.teacher_path)
    teacher = build_generator(teacher_spec)
    load_params(teacher, teacher_params)
    for p in teacher.parameters():
        p.requires_grad_(False)
    extractor = _prepare_extractor(config, domain_x, domain_y, out_dir)

    with open(os.path.join(out_dir, "run_meta.json"), "w") as fh:
        json.dump(
            {
                "dataset_fingerprint": dataset_fingerprint(domain_x, domain_y),
                "extractor_checksum": extractor.checksum,
                "variant": tag,
            },
            fh,
            indent=2,
            sort_keys=True,
        )

    log = _MetricsLog(os.path.join(out_dir, "metrics.jsonl"))
    try:
        result = _VARIANT_PIPELINES[tag](config, teacher, extractor, domain_x, domain_y, log, out_dir)
    finally:
        log.close()

    student_spec, student_params, quantized, scales, masks, student_quant = result
    student = build_generator(student_spec)
    load_params(student, student_params)
    for p in student.parameters():
        p.requires_grad_(False)

    report = _student_report(config, teacher, student, student_quant, extractor, quantized)
    student_path = os.path.join(out_dir, "student.ckpt")
    save_checkpoint(
        student_path,
        student_spec,
        student_params,
        meta={
            "kind": "student",
            "variant": tag,
            "quantized": quantized,
            "quant_scales": scales,
            "quant_config": asdict(config.quant),
            "seed": config.seed,
        },
    )
    with open(os.path.join(out_dir, "masks.json"), "w") as fh:
        fh.write(masks_to_json(masks))
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(report.to_text())
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(json.loads(report_to_json(report)), fh, indent=2, sort_keys=True)

    ev_x, _ = _eval_batches(teacher.spec, config)
    show = ev_x[:8]
    rows = [
        _generate(teacher, show, None),
        _generate(student, show, student_quant),
    ]
    if teacher.spec.input_kind == "image":
        rows.insert(0, show)
    _save_image_grid(os.path.join(out_dir, "images", "grid.png"), rows)

    return RunArtifacts(
        out_dir=out_dir,
        student_spec=student_spec,
        student_params=student_params,
        quantized=quantized,
        quant_scales=scales,
        masks=masks,
        report=report,
        student_path=student_path,
        metrics_path=os.path.join(out_dir, "metrics.jsonl"),
    )


def _streams(config: RunConfig, spec: ArchSpec, domain_x, domain_y, salt: int = 0):
    sx = _x_stream(spec, domain_x, config.batch_size, config.seed + salt)
    sy = batch_stream(domain_y, config.batch_size, config.seed + 1000 + salt)
    return sx, sy


def _pipeline_unified(config, teacher, extractor, domain_x, domain_y, log, out_dir):
    """GS-32 / GS-8 / GS-8-MSE / fixedD: the one-loop unified objective."""
    tag = config.variant
    quantized = tag in ("GS-8", "GS-8-MSE")
    metric = "mse" if tag == "GS-8-MSE" else config.metric
    quant = QuantRuntime(config.quant) if quantized else None
    generator, discriminator = _fresh_models(config, teacher.spec)
    state = SlimState(generator, discriminator, config.schedule, prox_gammas=True)
    ctx = TrainContext(
        teacher=teacher,
        extractor=extractor,
        distill_weight=config.distill_weight,
        sparsity_weight=config.sparsity_weight,
        metric=metric,
        quant=quant,
        adversarial=True,
        freeze_discriminator=(tag == "fixedD"),
        nonsaturating=config.nonsaturating,
    )
    sx, sy = _streams(config, generator.spec, domain_x, domain_y)
    _run_phase(
        "slim", log, state, ctx, sx, sy, config.schedule.total_iters,
        snapshot_dir=out_dir, checkpoint_every=config.checkpoint_every,
    )
    scales: dict[str, float] = {}
    if quantized:
        scales = _finalize_generator(generator, config.quant)
    masks = _derive_masks(generator)
    student_spec, student_params = extract_subnetwork(
        generator.spec, export_params(generator), masks
    )
    student_quant = QuantRuntime(config.quant, weights="off", activations="fake") if quantized else None
    scales = {k: v for k, v in scales.items() if k in student_params}
    return student_spec, student_params, quantized, scales, masks, student_quant


def _pipeline_cp(config, teacher, extractor, domain_x, domain_y, log, out_dir):
    """CP / CP+D: sparsity inside plain minimax training, then extract and
    finetune (minimax for CP, distillation for CP+D)."""
    T = config.schedule.total_iters
    t_prune = max(1, int(round(T * 0.75))) if T > 0 else 0
    t_ft = max(0, T - t_prune)
    generator, discriminator = _fresh_models(config, teacher.spec)
    sched1 = replace(config.schedule, total_iters=t_prune)
    state = SlimState(generator, discriminator, sched1, prox_gammas=True)
    ctx = TrainContext(
        teacher=teacher, extractor=extractor, distill_weight=0.0,
        sparsity_weight=config.sparsity_weight, metric=config.metric, quant=None,
        adversarial=True, nonsaturating=config.nonsaturating,
    )
    sx, sy = _streams(config, generator.spec, domain_x, domain_y)
    _run_phase("prune", log, state, ctx, sx, sy, t_prune, snapshot_dir=out_dir)

    masks = _derive_masks(generator)
    student_spec, student_params = extract_subnetwork(
        generator.spec, export_params(generator), masks
    )
    student = build_generator(student_spec)
    load_params(student, student_params)

    distill_after = config.variant == "CP+D"
    sched2 = replace(config.schedule, total_iters=t_ft)
    state2 = SlimState(student, discriminator, sched2, prox_gammas=False)
    ctx2 = TrainContext(
        teacher=teacher, extractor=extractor,
        distill_weight=config.distill_weight if distill_after else 0.0,
        sparsity_weight=0.0, metric=config.metric, quant=None,
        adversarial=not distill_after, nonsaturating=config.nonsaturating,
    )
    sx2, sy2 = _streams(config, student.spec, domain_x, domain_y, salt=17)
    _run_phase("finetune", log, state2, ctx2, sx2, sy2, t_ft, snapshot_dir=out_dir)
    return student.spec, export_params(student), False, {}, masks, None


def _pipeline_gd(config, teacher, extractor, domain_x, domain_y, log, out_dir):
    """GD: a hand-shrunk student trained by distillation alone."""
    student_spec = scale_channels(teacher.spec, config.gd_channel_frac, name="gd-student")
    student = build_generator(student_spec, seed=config.seed)
    state = SlimState(student, None, config.schedule, prox_gammas=False)
    ctx = TrainContext(
        teacher=teacher, extractor=extractor, distill_weight=config.distill_weight,
        sparsity_weight=0.0, metric=config.metric, quant=None, adversarial=False,
    )
    sx, sy = _streams(config, student.spec, domain_x, domain_y)
    _run_phase("distill", log, state, ctx, sx, sy, config.schedule.total_iters, snapshot_dir=out_dir)
    return student.spec, export_params(student), False, {}, {}, None


def _pipeline_dcp(config, teacher, extractor, domain_x, domain_y, log, out_dir):
    """D+CP: distill a half-width student, prune it, then minimax finetune."""
    T = config.schedule.total_iters
    t_gd = int(round(T * 0.30))
    t_prune = int(round(T * 0.45))
    t_ft = max(0, T - t_gd - t_prune)

    student_spec = scale_channels(teacher.spec, config.gd_channel_frac, name="gd-student")
    student = build_generator(student_spec, seed=config.seed)
    state = SlimState(student, None, replace(config.schedule, total_iters=t_gd), prox_gammas=False)
    ctx = TrainContext(
        teacher=teacher, extractor=extractor, distill_weight=config.distill_weight,
        sparsity_weight=0.0, metric=config.metric, quant=None, adversarial=False,
    )
    sx, sy = _streams(config, student.spec, domain_x, domain_y)
    _run_phase("distill", log, state, ctx, sx, sy, t_gd, snapshot_dir=out_dir)

    disc = build_discriminator(builtin_specs()[config.disc_arch], seed=config.seed + 1)
    state2 = SlimState(student, disc, replace(config.schedule, total_iters=t_prune), prox_gammas=True)
    ctx2 = TrainContext(
        teacher=teacher, extractor=extractor, distill_weight=0.0,
        sparsity_weight=config.sparsity_weight, metric=config.metric, quant=None,
        adversarial=True, nonsaturating=config.nonsaturating,
    )
    sx2, sy2 = _streams(config, student.spec, domain_x, domain_y, salt=17)
    _run_phase("prune", log, state2, ctx2, sx2, sy2, t_prune, snapshot_dir=out_dir)

    masks = _derive_masks(student)
    pruned_spec, pruned_params = extract_subnetwork(student.spec, export_params(student), masks)
    pruned = build_generator(pruned_spec)
    load_params(pruned, pruned_params)
    state3 = SlimState(pruned, disc, replace(config.schedule, total_iters=t_ft), prox_gammas=False)
    ctx3 = TrainContext(
        teacher=teacher, extractor=extractor, distill_weight=0.0, sparsity_weight=0.0,
        metric=config.metric, quant=None, adversarial=True, nonsaturating=config.nonsaturating,
    )
    sx3, sy3 = _streams(config, pruned.spec, domain_x, domain_y, salt=29)
    _run_phase("finetune", log, state3, ctx3, sx3, sy3, t_ft, snapshot_dir=out_dir)
    return pruned.spec, export_params(pruned), False, {}, masks, None


def _pipeline_postq(config, teacher, extractor, domain_x, domain_y, log, out_dir):
    """postQ: full-precision unified run, then post-hoc quantization plus a
    quantization-aware minimax finetune of one tenth the horizon."""
    base = replace(config, variant="GS-32")
    spec32, params32, _, _, masks, _ = _pipeline_unified(
        base, teacher, extractor, domain_x, domain_y, log, out_dir
    )
    student = build_generator(spec32)
    load_params(student, params32)
    t_ft = max(1, config.schedule.total_iters // 10)
    disc = build_discriminator(builtin_specs()[config.disc_arch], seed=config.seed + 3)
    state = SlimState(student, disc, replace(config.schedule, total_iters=t_ft), prox_gammas=False)
    ctx = TrainContext(
        teacher=teacher, extractor=extractor, distill_weight=0.0, sparsity_weight=0.0,
        metric=config.metric, quant=QuantRuntime(config.quant), adversarial=True,
        nonsaturating=config.nonsaturating,
    )
    sx, sy = _streams(config, student.spec, domain_x, domain_y, salt=43)
    _run_phase("qat-finetune", log, state, ctx, sx, sy, t_ft, snapshot_dir=out_dir)
    scales = _finalize_generator(student, config.quant)
    student_quant = QuantRuntime(config.quant, weights="off", activations="fake")
    return student.spec, export_params(student), True, scales, masks, student_quant


_VARIANT_PIPELINES = {
    "GS-32": _pipeline_unified,
    "GS-8": _pipeline_unified,
    "GS-8-MSE": _pipeline_unified,
    "fixedD": _pipeline_unified,
    "CP": _pipeline_cp,
    "CP+D": _pipeline_cp,
    "GD": _pipeline_gd,
    "D+CP": _pipeline_dcp,
    "postQ": _pipeline_postq,
}


# --- teacher training ----------------------------------------------------------------


def train_teacher(
    task: TaskSpec,
    arch: str | ArchSpec = "desk-teacher-32",
    budget: int = 2000,
    seed: int = 0,
    out_path="teacher.ckpt",
    batch_size: int = 8,
    weight_lr: float = 2e-4,
    disc_arch: str = "desk-discriminator-32",
    threads: int = 1,
    extractor_steps: int = 300,
    eval_every: int | None = None,
) -> str:
    """Plain minimax training of the dense teacher; returns the checkpoint path.

    Uses the non-saturating generator loss for stability, and keeps the
    checkpoint with the best held-out proxy Frechet value seen during the run
    (adversarial quality oscillates, the endpoint is a poor pick). The
    checkpoint meta records the untrained and the selected proxy values, and
    the task's feature extractor is saved next to the checkpoint.
    """
    torch.set_num_threads(max(1, threads))
    spec = arch if isinstance(arch, ArchSpec) else builtin_specs()[arch]
    domain_x, domain_y = make_task(task)
    extractor = train_feature_extractor(domain_x, domain_y, seed=seed, steps=extractor_steps)

    generator = build_generator(spec, seed=seed)
    discriminator = build_discriminator(builtin_specs()[disc_arch], seed=seed + 1)
    sched = Schedule(weight_lr=weight_lr, gamma_lr=0.0, total_iters=budget)
    state = SlimState(generator, discriminator, sched, prox_gammas=False)
    ctx = TrainContext(
        teacher=None, extractor=extractor, distill_weight=0.0, sparsity_weight=0.0,
        metric="mse", quant=None, adversarial=True, nonsaturating=True,
    )
    ev_x, ev_y = eval_split(task, 128)
    if spec.input_kind == "noise":
        g = torch.Generator().manual_seed(seed + 4242)
        ev_in = torch.randn(128, spec.in_channels, generator=g)
    else:
        ev_in = torch.from_numpy(ev_x)
    ev_target = torch.from_numpy(ev_y)

    def current_fid() -> float:
        return proxy_fid(_generate(generator, ev_in, None), ev_target, extractor)

    fid_init = current_fid()
    best_fid = fid_init
    best_params = export_params(generator)
    best_iter = 0
    sx = _x_stream(spec, domain_x, batch_size, seed)
    sy = batch_stream(domain_y, batch_size, seed + 1000)
    eval_every = eval_every or max(1, budget // 10)
    done = 0
    while done < budget:
        chunk = min(eval_every, budget - done)
        _run_phase("teacher", None, state, ctx, sx, sy, chunk)
        done += chunk
        fid = current_fid()
        if fid < best_fid:
            best_fid = fid
            best_params = export_params(generator)
            best_iter = done

    ex_path = str(out_path) + ".extractor"
    save_extractor(ex_path, extractor)
    save_checkpoint(
        out_path,
        spec,
        best_params,
        meta={
            "kind": "teacher",
            "task": asdict(task),
            "dataset_fingerprint": dataset_fingerprint(domain_x, domain_y),
            "proxy_fid_init": fid_init,
            "proxy_fid": best_fid,
            "selected_iter": best_iter,
            "extractor_checksum": extractor.checksum,
            "extractor_path": os.path.basename(ex_path),
            "budget": budget,
            "seed": seed,
        },
    )
    return str(out_path)


# --- helpers -----------------------------------------------------------------------


def sweep_sparsity_weight(
    config: RunConfig,
    candidates: list[float],
    target_flops_frac: float,
    probe_iters: int | None = None,
) -> tuple[float, list[tuple[float, float]]]:
    """Short probe runs over candidate sparsity weights; picks the one whose
    extracted student lands closest to the target FLOPs fraction."""
    probe_iters = probe_iters or max(100, config.schedule.total_iters // 4)
    table: list[tuple[float, float]] = []
    teacher_spec, _ = load_teacher(config.teacher_path)
    teacher_flops = count_flops(teacher_spec)
    for rho in candidates:
        probe = replace(
            config,
            sparsity_weight=rho,
            schedule=replace(config.schedule, total_iters=probe_iters),
            out_dir=os.path.join(_resolve_out_dir(config), f"sweep-rho{rho:g}"),
        )
        artifacts = run(probe)
        table.append((rho, count_flops(artifacts.student_spec) / teacher_flops))
    best = min(table, key=lambda kv: abs(kv[1] - target_flops_frac))
    return best[0], table


def config_to_json(config: RunConfig) -> str:
    return json.dumps(asdict(config), indent=2, sort_keys=True) + "\n"


def config_from_dict(d: dict) -> RunConfig:
    """Strict construction: unknown keys anywhere are a hard error."""
    return _dataclass_from_dict(RunConfig, d, "config").validate()


def report_to_json(report: CompressionReport) -> str:
    return json.dumps(asdict(report), sort_keys=True)


def _dataclass_from_dict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ValueError(f"{where}: expected an object, got {type(d).__name__}")
    fields = {f.name: f for f in cls.__dataclass_fields__.values()}
    extra = set(d) - set(fields)
    if extra:
        raise ValueError(f"{where}: unknown keys {sorted(extra)}")
    kwargs = {}
    nested = {"task": TaskSpec, "quant": QuantConfig, "schedule": Schedule}
    for k, v in d.items():
        if k in nested and isinstance(v, dict):
            kwargs[k] = _dataclass_from_dict(nested[k], v, f"{where}.{k}")
        else:
            kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ValueError(f"{where}: {e}") from e
