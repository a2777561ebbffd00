import numpy as np
import pytest
import torch

from ganslim.metrics import count_flops
from ganslim.models import (
    ActSpec,
    ArchSpec,
    ConvSpec,
    NormSpec,
    build_generator,
    builtin_specs,
    export_params,
    load_params,
)
from ganslim.sparsity import ChannelMask, MaskError, extract_subnetwork


def desk():
    return builtin_specs()["desk-teacher-32"]


def all_true_masks(spec):
    return {n.id: ChannelMask(n.id, tuple([True] * n.channels)) for n in spec.prunable_norms()}


def random_masks(spec, rng, p_drop=0.5):
    masks = {}
    for n in spec.prunable_norms():
        keep = rng.random(n.channels) > p_drop
        if not keep.any():
            keep[int(rng.integers(0, n.channels))] = True
        masks[n.id] = ChannelMask(n.id, tuple(bool(k) for k in keep))
    return masks


def masked_forward(net, masks, x):
    """Zero the masked scales on a copy of the full net and run it."""
    clone = build_generator(net.spec)
    load_params(clone, export_params(net))
    with torch.no_grad():
        for lid, m in masks.items():
            keep = torch.tensor(m.keep)
            clone.ops[lid].scale[~keep] = 0.0
    with torch.no_grad():
        return clone(x)


class TestExtraction:
    def test_all_true_masks_identity(self):
        spec = desk()
        net = build_generator(spec, seed=0)
        params = export_params(net)
        new_spec, new_params = extract_subnetwork(spec, params, all_true_masks(spec))
        assert new_spec == spec
        assert all(torch.equal(new_params[k], params[k]) for k in params)
        student = build_generator(new_spec)
        load_params(student, new_params)
        x = torch.randn(2, 3, 32, 32)
        with torch.no_grad():
            assert torch.equal(student(x), net(x))

    def test_three_of_eight_layer_flops(self):
        spec = ArchSpec(
            "one-hidden", "image", 3, 16,
            (
                ConvSpec("c1", 3, 8, 3, padding=1),
                NormSpec("n1", 8, prunable=True),
                ActSpec("a1"),
                ConvSpec("c2", 8, 3, 3, padding=1),
                ActSpec("out", fn="tanh"),
            ),
        )
        net = build_generator(spec, seed=0)
        masks = {"n1": ChannelMask("n1", (True, False, True, False, False, True, False, False))}
        new_spec, _ = extract_subnetwork(spec, export_params(net), masks)
        conv1 = lambda s: next(l for l in s.layers if l.id == "c1")
        # the hidden conv keeps 3 of 8 output channels: exactly 3/8 the count
        def layer_flops(l, size=16):
            return l.kernel**2 * l.in_channels * l.out_channels * size * size
        assert layer_flops(conv1(new_spec)) / layer_flops(conv1(spec)) == pytest.approx(3 / 8)
        assert count_flops(new_spec) < count_flops(spec)

    def test_masked_equals_extracted_on_random_masks(self):
        spec = desk()
        rng = np.random.Generator(np.random.PCG64(0))
        net = build_generator(spec, seed=1)
        for trial in range(6):
            masks = random_masks(spec, rng)
            new_spec, new_params = extract_subnetwork(spec, export_params(net), masks)
            student = build_generator(new_spec)
            load_params(student, new_params)
            x = torch.randn(4, 3, 32, 32)
            ref = masked_forward(net, masks, x)
            with torch.no_grad():
                out = student(x)
            assert torch.allclose(out, ref, rtol=1e-5, atol=1e-6), f"trial {trial}"

    def test_single_zeroed_gamma_matches(self):
        spec = desk()
        net = build_generator(spec, seed=2)
        masks = all_true_masks(spec)
        keep = list(masks["res1_norm1"].keep)
        keep[3] = False
        masks["res1_norm1"] = ChannelMask("res1_norm1", tuple(keep))
        new_spec, new_params = extract_subnetwork(spec, export_params(net), masks)
        student = build_generator(new_spec)
        load_params(student, new_params)
        x = torch.randn(8, 3, 32, 32)
        assert torch.allclose(student(x).detach(), masked_forward(net, masks, x), rtol=1e-5, atol=1e-6)

    def test_flops_strictly_decrease_when_any_channel_dropped(self):
        spec = desk()
        net = build_generator(spec, seed=0)
        base = count_flops(spec)
        for norm in spec.prunable_norms():
            masks = all_true_masks(spec)
            keep = [True] * norm.channels
            keep[0] = False
            masks[norm.id] = ChannelMask(norm.id, tuple(keep))
            new_spec, _ = extract_subnetwork(spec, export_params(net), masks)
            assert count_flops(new_spec) < base, norm.id

    def test_mask_on_residual_trunk_layer_rejected(self):
        spec = desk()
        net = build_generator(spec, seed=0)
        masks = {"down_norm": ChannelMask("down_norm", tuple([True] * 15 + [False]))}
        with pytest.raises(MaskError, match="not a prunable norm"):
            extract_subnetwork(spec, export_params(net), masks)

    def test_empty_mask_rejected(self):
        spec = desk()
        net = build_generator(spec, seed=0)
        masks = {"stem_norm": ChannelMask("stem_norm", tuple([False] * 10))}
        with pytest.raises(MaskError, match="every channel"):
            extract_subnetwork(spec, export_params(net), masks)

    def test_wrong_length_mask_rejected(self):
        spec = desk()
        net = build_generator(spec, seed=0)
        masks = {"stem_norm": ChannelMask("stem_norm", (True, False))}
        with pytest.raises(MaskError, match="length"):
            extract_subnetwork(spec, export_params(net), masks)

    def test_transpose_conv_slicing(self):
        spec = ArchSpec(
            "tconv", "image", 3, 8,
            (
                ConvSpec("c1", 3, 6, 3, padding=1),
                NormSpec("n1", 6, prunable=True),
                ActSpec("a1"),
                ConvSpec("up", 6, 4, 3, stride=2, padding=1, transpose=True),
                NormSpec("n2", 4, prunable=True),
                ActSpec("a2"),
                ConvSpec("c2", 4, 3, 3, padding=1),
                ActSpec("out", fn="tanh"),
            ),
        )
        net = build_generator(spec, seed=4)
        masks = {
            "n1": ChannelMask("n1", (True, True, False, True, False, True)),
            "n2": ChannelMask("n2", (False, True, True, False)),
        }
        new_spec, new_params = extract_subnetwork(spec, export_params(net), masks)
        student = build_generator(new_spec)
        load_params(student, new_params)
        assert new_params["up.weight"].shape == (4, 2, 3, 3)  # (in_kept, out_kept, k, k)
        x = torch.randn(2, 3, 8, 8)
        assert torch.allclose(student(x).detach(), masked_forward(net, masks, x), rtol=1e-5, atol=1e-6)
