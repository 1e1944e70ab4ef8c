import numpy as np
import pytest

from omnimixer import train as train_mod
from omnimixer.config import Ablations, Config
from omnimixer.data import scan_dataset, write_synthetic_dataset
from omnimixer.errors import CheckpointVersionError, LabelError, NonFiniteLossError
from omnimixer.gradcheck import tiny_model_config
from omnimixer.train import (Adam, Trainer, fit, load_generator, read_metrics, roll_pairs,
                             write_metrics)

ALL_KEYS = {"d/adv_patch", "d/adv_channel", "d/dis_rec", "d/r1", "d/total",
            "g/adv_patch", "g/adv_channel", "g/rec", "g/dis_rec", "g/total"}


@pytest.fixture(scope="module")
def entries(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    write_synthetic_dataset(root, 1, 2, height=8, seed=0)
    return scan_dataset(root)[0]


def tiny_config(**train):
    cfg = Config(model=tiny_model_config())
    cfg.train.batch_size = 2
    cfg.train.checkpoint_every = 0
    cfg.train.sample_every = 0
    for k, v in train.items():
        setattr(cfg.train, k, v)
    return cfg.validate()


def snapshot(module):
    return {k: v.data.copy() for k, v in module.named_parameters()}


def same(a, b):
    return all(np.array_equal(a[k], b[k]) for k in a)


class TestStep:
    def test_zero_learning_rates_leave_parameters(self, entries):
        tr = Trainer(tiny_config(lr_g=0.0, lr_d=0.0), entries)
        g0, d0 = snapshot(tr.gen), snapshot(tr.disc)
        tr.train_step()
        assert same(g0, snapshot(tr.gen)) and same(d0, snapshot(tr.disc))

    def test_each_update_owns_its_network(self, entries):
        tr = Trainer(tiny_config(), entries)
        batch = tr.sample_batch()
        g0, d0 = snapshot(tr.gen), snapshot(tr.disc)
        tr.discriminator_step(batch)
        d1 = snapshot(tr.disc)
        assert same(g0, snapshot(tr.gen)) and not same(d0, d1)
        tr.generator_step(batch)
        assert same(d1, snapshot(tr.disc)) and not same(g0, snapshot(tr.gen))

    def test_all_components_logged(self, entries):
        metrics = Trainer(tiny_config(), entries).train_step()
        assert set(metrics) == ALL_KEYS
        assert all(np.isfinite(v) for v in metrics.values())

    def test_totals_assemble_each_term_once(self, entries):
        cfg = tiny_config()
        lw = cfg.train.loss
        m = Trainer(cfg, entries).train_step()
        d = m["d/adv_patch"] + lw.lambda_ch_d * m["d/adv_channel"] + m["d/dis_rec"] + m["d/r1"]
        g = m["g/adv_patch"] + lw.lambda_ch_g * m["g/adv_channel"] + m["g/rec"] + m["g/dis_rec"]
        assert m["d/total"] == pytest.approx(d, rel=1e-5)
        assert m["g/total"] == pytest.approx(g, rel=1e-5)

    def test_r1_sees_real_inputs_only(self, entries, monkeypatch):
        seen = []
        original = train_mod.d_grad_norm_sq

        def spy(inp, *args, **kwargs):
            seen.append(inp.data.copy())
            return original(inp, *args, **kwargs)

        monkeypatch.setattr(train_mod, "d_grad_norm_sq", spy)
        tr = Trainer(tiny_config(), entries)
        batch = tr.sample_batch()
        tr.discriminator_step(batch)
        assert len(seen) == 1
        for sample, x, y in zip(seen[0], batch.x, batch.y):
            shift = next(k for k in range(x.shape[-1])
                         if np.array_equal(sample[3:], np.roll(y, k, axis=-1).astype(sample.dtype)))
            np.testing.assert_array_equal(sample[:3], np.roll(x, shift, axis=-1).astype(sample.dtype))

    def test_roll_pairs_shift_all_channels_together(self, rng):
        d_in = rng.standard_normal((3, 6, 2, 8))
        out = roll_pairs(d_in, np.array([0, 3, 7]))
        for n, k in enumerate([0, 3, 7]):
            np.testing.assert_array_equal(out[n], np.roll(d_in[n], k, axis=-1))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_aborts_with_diagnostics(self, entries):
        tr = Trainer(tiny_config(), entries)
        tr.disc.patch_head.bias.data[...] = np.nan
        with pytest.raises(NonFiniteLossError) as info:
            tr.train_step()
        assert "d/adv_patch" in str(info.value) and "iteration 0" in str(info.value)

    def test_label_range_checked(self, entries):
        cfg = tiny_config()
        cfg.model.num_classes = 1
        with pytest.raises(LabelError):
            Trainer(cfg, entries)


@pytest.mark.parametrize("toggle,missing", [
    ("plain_bn", set()),
    ("no_dis_rec", {"d/dis_rec", "g/dis_rec"}),
    ("no_channel_loss", {"d/adv_channel", "g/adv_channel"}),
    ("single_input", set()),
    ("no_mixer_block1", set()),
])
def test_ablation_objective_composition(entries, toggle, missing):
    cfg = tiny_config()
    setattr(cfg.train.ablations, toggle, True)
    m = Trainer(cfg, entries).train_step()
    assert set(m) == ALL_KEYS - missing


def test_ablation_changes_generator_structure(entries):
    base = Trainer(tiny_config(), entries).gen.num_parameters()
    for toggle in ("plain_bn", "single_input", "no_mixer_block1"):
        cfg = tiny_config()
        setattr(cfg.train.ablations, toggle, True)
        assert Trainer(cfg, entries).gen.num_parameters() != base


class TestPersistence:
    def test_resume_matches_unbroken_run(self, entries, tmp_path):
        cfg = tiny_config()
        unbroken = Trainer(cfg, entries)
        for _ in range(3):
            unbroken.train_step()
        expect = unbroken.train_step()

        first = Trainer(tiny_config(), entries)
        for _ in range(3):
            first.train_step()
        first.save(tmp_path / "k.omx")
        resumed = Trainer.from_checkpoint(tmp_path / "k.omx", entries)
        assert resumed.iteration == 3
        assert resumed.train_step() == expect

    def test_seeded_runs_identical(self, entries):
        runs = []
        for _ in range(2):
            tr = Trainer(tiny_config(seed=5), entries)
            runs.append([tr.train_step() for _ in range(2)])
        assert runs[0] == runs[1]

    def test_config_mismatch_on_restore(self, entries, tmp_path):
        Trainer(tiny_config(), entries).save(tmp_path / "a.omx")
        other = Trainer(tiny_config(lr_g=1e-3), entries)
        from omnimixer.checkpoint import load_checkpoint

        with pytest.raises(CheckpointVersionError):
            other.restore(load_checkpoint(tmp_path / "a.omx"))

    def test_fit_writes_run_directory(self, entries, tmp_path):
        cfg = tiny_config(checkpoint_every=5, sample_every=5)
        tr = fit(cfg, entries, out_dir=tmp_path, iterations=10)
        assert tr.iteration == 10
        for name in ("final.omx", "ckpt_000005.omx", "ckpt_000010.omx", "samples/iter_000010.png"):
            assert (tmp_path / name).exists(), name
        gen, loaded_cfg = load_generator(tmp_path / "final.omx")
        assert loaded_cfg.to_dict() == cfg.to_dict() and not gen.training
        rows = read_metrics(tmp_path / "metrics.log")
        assert len(rows) == 10 * len(ALL_KEYS)
        assert rows[0][0] == 1 and rows[-1][0] == 10

    def test_fit_resume_continues(self, entries, tmp_path):
        cfg = tiny_config()
        fit(cfg, entries, out_dir=tmp_path, iterations=2)
        tr = fit(cfg, entries, out_dir=tmp_path, resume=tmp_path / "final.omx", iterations=4)
        assert tr.iteration == 4
        assert [r[0] for r in read_metrics(tmp_path / "metrics.log")][-1] == 4


def test_metrics_log_round_trip(tmp_path):
    with open(tmp_path / "m.log", "w") as fh:
        write_metrics(fh, 3, {"g/rec": 0.25, "d/r1": 1.5})
    assert read_metrics(tmp_path / "m.log") == [(3, "d/r1", 1.5), (3, "g/rec", 0.25)]


def test_adam_first_step_moves_by_lr():
    from omnimixer.tensor import Tensor

    p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    p.grad = np.array([0.5, -2.0], dtype=p.dtype)
    opt = Adam({"p": p}.items(), lr=0.1, betas=(0.0, 0.99), eps=0.0)
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -0.9], rtol=1e-6)


def test_ablations_default_off():
    assert Ablations() == Ablations(False, False, False, False, False)


@pytest.mark.slow
def test_single_image_overfit(tmp_path):
    """500 steps on one desk-scale panorama: masked L1 falls by at least half."""
    from scenarios import smoke_config

    write_synthetic_dataset(tmp_path, 1, 1, height=64, seed=0)
    data = scan_dataset(tmp_path)[0]
    cfg = smoke_config(500)
    cfg.model.num_classes = 1
    cfg.train.batch_size = 1
    rec = []
    fit(cfg, data, callback=lambda it, m: rec.append(m["g/rec"]))
    assert rec[-1] <= 0.5 * rec[0]
