import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from omnimixer import cli
from omnimixer import gradcheck
from omnimixer.config import Config
from omnimixer.cost import count_params_macs
from omnimixer.data import synthetic_panorama, write_synthetic_dataset
from omnimixer.geometry import extract_snapshot, write_png
from omnimixer.gradcheck import tiny_model_config
from omnimixer.train import Trainer

ENV = dict(os.environ, OMNIMIXER_DETERMINISTIC="1")


def run(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "omnimixer.cli", *map(str, args)],
                          capture_output=True, text=True, env=ENV, cwd=cwd, timeout=600)


@pytest.fixture(scope="module")
def default_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "default.omx"
    Trainer(Config()).save(path)
    return path


@pytest.fixture(scope="module")
def snapshot_png(tmp_path_factory):
    path = tmp_path_factory.mktemp("snap") / "snap.png"
    pano = synthetic_panorama(np.random.default_rng(0), 2, 64)
    write_png(path, extract_snapshot(pano, cli_pose(), 64, 64))
    return path


def cli_pose():
    from omnimixer.data import snapshot_pose

    return snapshot_pose(90.0)


class TestParser:
    def test_help_lists_subcommands(self):
        out = run("--help").stdout
        for name in ("train", "generate", "embed", "extract-views", "analyze", "grad-check"):
            assert name in out

    @pytest.mark.parametrize("sub", ["train", "generate", "embed", "extract-views", "analyze", "grad-check"])
    def test_subcommand_help_documents_flags(self, sub):
        res = run(sub, "--help")
        assert res.returncode == 0
        for action in cli.build_parser()._subparsers._group_actions[0].choices[sub]._actions:
            if action.option_strings and action.dest != "help":
                assert action.help, f"{sub} {action.option_strings} undocumented"

    def test_unknown_flag_is_usage_error(self):
        assert run("analyze", "--bogus").returncode == 1

    def test_missing_subcommand(self):
        assert run().returncode == 1


class TestGenerate:
    def test_omitted_label_lists_range(self, default_ckpt, snapshot_png, tmp_path):
        res = run("generate", "--checkpoint", default_ckpt, "--input", snapshot_png, "--out", tmp_path / "o.png")
        assert res.returncode == 1
        assert "valid range 0..23" in res.stderr

    def test_label_out_of_range(self, default_ckpt, snapshot_png, tmp_path):
        res = run("generate", "--checkpoint", default_ckpt, "--input", snapshot_png, "--label", 24,
                  "--out", tmp_path / "o.png")
        assert res.returncode == 1 and "valid range 0..23" in res.stderr

    def test_same_seed_byte_identical_and_views(self, default_ckpt, snapshot_png, tmp_path):
        a = run("generate", "--checkpoint", default_ckpt, "--input", snapshot_png, "--label", 3,
                "--seed", 11, "--out", tmp_path / "a.png", "--views", tmp_path / "views")
        b = run("generate", "--checkpoint", default_ckpt, "--input", snapshot_png, "--label", 3,
                "--seed", 11, "--out", tmp_path / "b.png")
        assert a.returncode == 0 and b.returncode == 0, a.stderr + b.stderr
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
        views = sorted(p.name for p in (tmp_path / "views").iterdir())
        assert len(views) == 50 and "e+90_y000.png" in views and "e-45_y324.png" in views

    def test_corrupt_checkpoint(self, snapshot_png, tmp_path):
        bad = tmp_path / "bad.omx"
        bad.write_bytes(b"garbage")
        res = run("generate", "--checkpoint", bad, "--input", snapshot_png, "--label", 0, "--out", tmp_path / "o.png")
        assert res.returncode == 2

    def test_missing_input(self, default_ckpt, tmp_path):
        res = run("generate", "--checkpoint", default_ckpt, "--input", tmp_path / "none.png", "--label", 0,
                  "--out", tmp_path / "o.png")
        assert res.returncode == 2


class TestGeometryCommands:
    def test_embed(self, snapshot_png, tmp_path):
        res = run("embed", "--input", snapshot_png, "--out", tmp_path / "c.png", "--mask", tmp_path / "m.png")
        assert res.returncode == 0
        from omnimixer.geometry import read_png

        assert read_png(tmp_path / "c.png").shape == (3, 64, 128)
        assert set(np.unique(read_png(tmp_path / "m.png"))) == {-1.0, 1.0}

    def test_extract_views(self, tmp_path):
        write_png(tmp_path / "p.png", synthetic_panorama(np.random.default_rng(1), 0, 32))
        res = run("extract-views", "--input", tmp_path / "p.png", "--out", tmp_path / "v", "--size", 16)
        assert res.returncode == 0
        assert len(list((tmp_path / "v").glob("*.png"))) == 50

    def test_extract_views_rejects_non_equirect(self, tmp_path):
        write_png(tmp_path / "sq.png", np.zeros((3, 16, 16)))
        assert run("extract-views", "--input", tmp_path / "sq.png", "--out", tmp_path / "v").returncode == 2


class TestAnalyze:
    def test_totals_match_counter(self):
        res = run("analyze")
        assert res.returncode == 0
        from omnimixer.cost import parse_report

        kv = parse_report(res.stdout)
        assert (kv["params_total"], kv["macs_total"]) == count_params_macs(Config())

    def test_overrides_and_config_file(self, tmp_path):
        cfg = {"model": {"layers_per_block": 2}, "train": {"ablations": {"plain_bn": True}}}
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        from omnimixer.cost import parse_report

        kv = parse_report(run("analyze", "--config", tmp_path / "c.json").stdout)
        expect = Config.from_dict(cfg)
        assert kv["params_total"] == count_params_macs(expect)[0]
        kv2 = parse_report(run("analyze", "--config", tmp_path / "c.json", "--set", "model.layers_per_block=3").stdout)
        assert kv2["params_total"] > kv["params_total"]

    def test_bad_override(self):
        assert run("analyze", "--set", "model.nope=1").returncode == 1

    def test_bad_config_file(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        assert run("analyze", "--config", tmp_path / "c.json").returncode == 2


class TestGradCheck:
    def test_only_depthwise(self):
        res = run("grad-check", "--only", "depthwise")
        assert res.returncode == 0
        lines = [l for l in res.stdout.splitlines() if l.startswith(("PASS", "FAIL"))]
        assert len(lines) == 1 and lines[0].split()[1] == "depthwise"

    def test_unknown_suite(self):
        assert run("grad-check", "--only", "nope").returncode == 1

    def test_injected_failure_exit_code(self, monkeypatch, capsys):
        from test_gradcheck import WrongSignSquare
        from omnimixer.tensor import Tensor

        def broken(rng):
            x = Tensor(rng.standard_normal(4) + 2.0, requires_grad=True)
            return (lambda: WrongSignSquare.apply(x).sum()), {"x": x}

        broken.tolerance, broken.graph_in_loss = 1e-4, False
        monkeypatch.setitem(gradcheck.SUITES, "broken", broken)
        assert cli.main(["grad-check", "--only", "broken"]) == 1
        out = capsys.readouterr().out
        assert "FAIL broken" in out and "max rel error 2.000e+00" in out


class TestTrain:
    def test_train_then_generate(self, tmp_path):
        write_synthetic_dataset(tmp_path / "data", 1, 2, height=8)
        cfg = Config(model=tiny_model_config())
        cfg.train.batch_size = 2
        (tmp_path / "cfg.json").write_text(cfg.to_json())
        res = run("train", "--data", tmp_path / "data", "--out", tmp_path / "run", "--config", tmp_path / "cfg.json",
                  "--iterations", 3, "--set", "train.checkpoint_every=0", "--set", "train.sample_every=0")
        assert res.returncode == 0, res.stderr
        assert (tmp_path / "run" / "final.omx").exists()
        assert len((tmp_path / "run" / "metrics.log").read_text().splitlines()) == 30
        write_png(tmp_path / "s.png", np.zeros((3, 8, 8)))
        gen = run("generate", "--checkpoint", tmp_path / "run" / "final.omx", "--input", tmp_path / "s.png",
                  "--label", "class_1", "--out", tmp_path / "g.png")
        assert gen.returncode == 0, gen.stderr
        res = run("train", "--data", tmp_path / "data", "--out", tmp_path / "run", "--config", tmp_path / "cfg.json",
                  "--resume", tmp_path / "run" / "final.omx", "--iterations", 4)
        assert res.returncode == 0, res.stderr

    def test_missing_dataset(self, tmp_path):
        assert run("train", "--data", tmp_path / "none", "--out", tmp_path / "run").returncode == 2

    def test_resume_with_other_config_is_version_error(self, tmp_path, default_ckpt):
        write_synthetic_dataset(tmp_path / "data", 1, 2, height=64)
        res = run("train", "--data", tmp_path / "data", "--out", tmp_path / "run", "--resume", default_ckpt,
                  "--iterations", 0)
        # the checkpoint carries 24 classes, the dataset two: labels are fine, resume proceeds
        assert res.returncode == 0, res.stderr
