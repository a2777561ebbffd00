import json
import os

import numpy as np
import pytest
import torch

from ganslim.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    bundle_size_bytes,
    evaluate_student,
    export_bundle,
    load_bundle,
    main,
)
from ganslim.models import QuantRuntime, build_generator, load_checkpoint, load_params
from ganslim.quantization import QuantConfig


def write_config(path, task, teacher, out, **kw):
    cfg = {
        "task": {"tag": task.tag, "image_size": task.image_size,
                 "n_per_domain": task.n_per_domain, "seed": task.seed},
        "teacher_path": teacher,
        "schedule": {"weight_lr": 2e-4, "gamma_lr": 0.05, "total_iters": 8},
        "batch_size": 4,
        "eval_images": 24,
        "extractor_path": teacher + ".extractor",
        "out_dir": out,
    }
    cfg.update(kw)
    path.write_text(json.dumps(cfg))
    return str(path)


class TestConfigHandling:
    def test_unknown_key_exits_2(self, tmp_path, tiny_task, tiny_teacher):
        p = tmp_path / "c.json"
        cfg = write_config(p, tiny_task, tiny_teacher, str(tmp_path / "o"), bogus_key=1)
        assert main(["slim", "--config", cfg]) == EXIT_CONFIG

    def test_invalid_json_exits_2(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        assert main(["slim", "--config", str(p)]) == EXIT_CONFIG

    def test_unknown_variant_exits_2(self, tmp_path, tiny_task, tiny_teacher):
        cfg = write_config(tmp_path / "c.json", tiny_task, tiny_teacher, str(tmp_path / "o"))
        assert main(["slim", "--config", cfg, "--override", "variant=GS-64"]) == EXIT_CONFIG

    def test_missing_teacher_exits_4(self, tmp_path, tiny_task):
        cfg = write_config(tmp_path / "c.json", tiny_task, str(tmp_path / "nope.ckpt"),
                           str(tmp_path / "o"), extractor_path=None)
        assert main(["slim", "--config", cfg]) == EXIT_IO

    def test_override_nested_key(self, tmp_path, tiny_task, tiny_teacher):
        out = tmp_path / "o"
        cfg = write_config(tmp_path / "c.json", tiny_task, tiny_teacher, str(out))
        rc = main(["slim", "--config", cfg, "--override", "schedule.total_iters=4",
                   "--override", "variant=GS-32"])
        assert rc == EXIT_OK
        written = json.loads((out / "config.json").read_text())
        assert written["schedule"]["total_iters"] == 4


class TestCommands:
    @pytest.fixture(scope="class")
    def slim_run(self, tmp_path_factory, tiny_task, tiny_teacher):
        out = tmp_path_factory.mktemp("slimrun")
        cfg = write_config(out / "c.json", tiny_task, tiny_teacher, str(out / "run"),
                           variant="GS-8")
        assert main(["slim", "--config", str(out / "c.json")]) == EXIT_OK
        return out / "run"

    def test_run_dir_contains_replayable_config(self, slim_run):
        names = set(os.listdir(slim_run))
        assert {"config.json", "metrics.jsonl", "masks.json", "report.txt",
                "student.ckpt", "run_meta.json"} <= names

    def test_eval_command(self, slim_run, tiny_teacher, tmp_path, capsys):
        rc = main(["eval", "--student", str(slim_run / "student.ckpt"),
                   "--teacher", tiny_teacher, "--eval-images", "24",
                   "--out", str(tmp_path / "report.txt")])
        assert rc == EXIT_OK
        text = (tmp_path / "report.txt").read_text()
        assert "r_s = " in text and "r_c = " in text and "r_f = " in text

    def test_export_round_trip(self, slim_run, tmp_path):
        bundle = tmp_path / "bundle"
        rc = main(["export", "--student", str(slim_run / "student.ckpt"),
                   "--out", str(bundle)])
        assert rc == EXIT_OK
        assert {"manifest.json", "spec.json", "tensors.bin"} <= set(os.listdir(bundle))

        spec, params, quant = load_bundle(str(bundle))
        net = build_generator(spec)
        load_params(net, params)
        s_spec, s_params, s_meta = load_checkpoint(slim_run / "student.ckpt")
        ref = build_generator(s_spec)
        load_params(ref, s_params)
        x = torch.randn(3, 3, 32, 32).clamp(-1, 1)
        with torch.no_grad():
            a = ref(x, quant)
            b = net(x, quant)
        assert float((a - b).abs().max()) <= 1e-6

    def test_export_corrupt_bundle_rejected(self, slim_run, tmp_path):
        bundle = tmp_path / "bundle2"
        export_bundle(str(slim_run / "student.ckpt"), str(bundle))
        blob = bundle / "tensors.bin"
        raw = bytearray(blob.read_bytes())
        raw[5] ^= 0xFF
        blob.write_bytes(bytes(raw))
        from ganslim.models import CheckpointError

        with pytest.raises(CheckpointError):
            load_bundle(str(bundle))

    def test_ablate_two_variants(self, tmp_path, tiny_task, tiny_teacher, capsys):
        out = tmp_path / "abl"
        cfg = write_config(tmp_path / "c.json", tiny_task, tiny_teacher, str(out))
        rc = main(["ablate", "--config", str(tmp_path / "c.json"),
                   "--variants", "GS-32,CP"])
        assert rc == EXIT_OK
        rows = json.loads((out / "comparison.json").read_text())
        assert [r["variant"] for r in rows] == ["GS-32", "CP"]
        for r in rows:
            assert r["r_s"] > 0 and r["r_c"] > 0 and r["r_f"] > 0
            assert os.path.exists(r["grid"])
        table = (out / "comparison.txt").read_text()
        assert "GS-32" in table and "CP" in table

    def test_teach_command(self, tmp_path, tiny_task):
        cfg = {
            "task": {"tag": tiny_task.tag, "n_per_domain": 16, "seed": 1},
            "budget": 4, "batch_size": 4, "out": str(tmp_path / "t.ckpt"),
        }
        p = tmp_path / "teach.json"
        p.write_text(json.dumps(cfg))
        assert main(["teach", "--config", str(p)]) == EXIT_OK
        spec, params, meta = load_checkpoint(tmp_path / "t.ckpt")
        assert meta["kind"] == "teacher"
        assert "proxy_fid" in meta and "proxy_fid_init" in meta
        assert os.path.exists(str(tmp_path / "t.ckpt") + ".extractor")

    def test_env_var_out_root(self, tmp_path, tiny_task, tiny_teacher, monkeypatch):
        monkeypatch.setenv("GANSLIM_OUT", str(tmp_path / "root"))
        cfg = write_config(tmp_path / "c.json", tiny_task, tiny_teacher, None)
        d = json.loads((tmp_path / "c.json").read_text())
        del d["out_dir"]
        (tmp_path / "c.json").write_text(json.dumps(d))
        rc = main(["slim", "--config", str(tmp_path / "c.json"), "--seed", "3"])
        assert rc == EXIT_OK
        assert (tmp_path / "root" / "GS-32-s3" / "report.txt").exists()
