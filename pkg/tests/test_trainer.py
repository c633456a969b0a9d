import numpy as np
import pytest

from taikoforge.audio import NUM_BANDS, NormStats
from taikoforge.chart import one_hot_rows
from taikoforge.dataset import ChartEntry, Dataset, DatasetManifest
from taikoforge.errors import ExplosionAtFirstEpoch
from taikoforge.neural import adam_step, backward, forward, init_adam_state, init_params
from taikoforge.trainer import TrainConfig, evaluate_loss, train


def tiny_dataset(seed=0, per_chart=10):
    rng = np.random.default_rng(seed)
    total = per_chart * 2
    windows = rng.normal(0, 1, size=(total, 16, NUM_BANDS)).astype(np.float32)
    contexts = one_hot_rows(rng.integers(0, 7, size=total * 15)).reshape(total, 15, 7)
    targets = one_hot_rows(rng.integers(0, 7, size=total * 4)).reshape(total, 4, 7)
    manifest = DatasetManifest(
        (ChartEntry("train_song", per_chart, "train"), ChartEntry("val_song", per_chart, "val"))
    )
    return Dataset(manifest, windows, contexts, targets, NormStats(np.zeros(NUM_BANDS), np.ones(NUM_BANDS)))


def quick_config(tmp_path, **overrides):
    defaults = dict(
        checkpoint_dir=tmp_path / "ckpt",
        phase1_epochs=1,
        phase1_lr=1e-4,
        phase1_batch=4,
        phase2_lr=5e-5,
        phase2_max_epochs=0,
        seed=11,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestConfig:
    def test_zero_lr_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            quick_config(tmp_path, phase1_lr=0.0)

    def test_phase2_must_be_slower(self, tmp_path):
        with pytest.raises(ValueError):
            quick_config(tmp_path, phase2_lr=1e-3)

    def test_defaults_match_published_schedule(self, tmp_path):
        config = TrainConfig(checkpoint_dir=tmp_path)
        assert config.phase1_epochs == 10
        assert config.phase1_lr == 1e-5
        assert config.phase1_batch == 16
        assert config.phase2_lr == 5e-6


class TestTrain:
    def test_smoke_writes_final_checkpoint(self, tmp_path):
        ds = tiny_dataset()
        result = train(ds, quick_config(tmp_path))
        assert result.final_path.exists()
        assert result.exploded_at is None
        assert len(result.records) == 1
        assert np.isfinite(result.records[0].train_loss)

    def test_untrained_loss_near_ln7(self, tmp_path):
        ds = tiny_dataset()
        params = init_params(seed=1, norm=ds.norm)
        value = evaluate_loss(params, ds, ds.indices("val"))
        assert abs(value - np.log(7.0)) <= 0.3

    def test_evaluate_loss_deterministic(self, tmp_path):
        ds = tiny_dataset()
        params = init_params(seed=2, norm=ds.norm)
        idx = ds.indices("val")
        assert evaluate_loss(params, ds, idx) == evaluate_loss(params, ds, idx)

    def test_same_seed_identical_runs(self, tmp_path):
        ds = tiny_dataset()
        r1 = train(ds, quick_config(tmp_path / "a", phase2_max_epochs=1))
        r2 = train(ds, quick_config(tmp_path / "b", phase2_max_epochs=1))
        assert [r.key() for r in r1.records] == [r.key() for r in r2.records]
        assert r1.final_path.read_bytes() == r2.final_path.read_bytes()

    def test_epoch_log_lines(self, tmp_path):
        ds = tiny_dataset()
        lines = []
        train(ds, quick_config(tmp_path), log=lines.append)
        assert len(lines) == 1
        assert "phase 1 epoch" in lines[0]
        assert "train" in lines[0] and "val" in lines[0]


class TestRollback:
    def test_injected_nan_rolls_back_to_previous_epoch(self, tmp_path):
        ds = tiny_dataset()
        config = quick_config(
            tmp_path,
            phase2_max_epochs=3,
            fault_hook=lambda phase, epoch: (phase, epoch) == (2, 2),
        )
        result = train(ds, config)
        assert result.exploded_at == (2, 2)
        expected = (config.checkpoint_dir / "p2_e001.tknm").read_bytes()
        assert result.final_path.read_bytes() == expected

    def test_returned_params_always_finite(self, tmp_path):
        ds = tiny_dataset()
        config = quick_config(
            tmp_path,
            phase2_max_epochs=2,
            fault_hook=lambda phase, epoch: (phase, epoch) == (2, 2),
        )
        result = train(ds, config)
        for _, arr in result.params.items():
            assert np.isfinite(arr).all()

    def test_phase2_first_epoch_explosion_warns_and_keeps_phase1(self, tmp_path):
        ds = tiny_dataset()
        config = quick_config(
            tmp_path,
            phase2_max_epochs=2,
            fault_hook=lambda phase, epoch: (phase, epoch) == (2, 1),
        )
        with pytest.warns(ExplosionAtFirstEpoch):
            result = train(ds, config)
        assert result.exploded_at == (2, 1)
        expected = (config.checkpoint_dir / "p1_e001.tknm").read_bytes()
        assert result.final_path.read_bytes() == expected

    def test_loss_spike_triggers_rollback(self, tmp_path):
        ds = tiny_dataset()
        calls = []

        def hook(phase, epoch):
            calls.append((phase, epoch))
            return False

        # absurdly low explosion factor: the next epoch always "spikes"
        config = quick_config(tmp_path, phase2_max_epochs=4, explosion_factor=1e-9, fault_hook=hook)
        with pytest.warns(ExplosionAtFirstEpoch):
            result = train(ds, config)
        assert result.exploded_at == (2, 1)
        assert result.final_path.exists()


def test_batch_gradient_is_average_of_single_gradients(tmp_path):
    ds = tiny_dataset(per_chart=4)
    idx = ds.indices("train")

    def run_manual(batch_size):
        params = init_params(seed=3, norm=ds.norm)
        state = init_adam_state(params)
        rng = np.random.default_rng(42)
        order = rng.permutation(len(idx))
        batch = idx[order[:batch_size]]
        grad_sum = None
        for i in batch:
            _, cache = forward(params, ds.windows[i], ds.contexts[i], training=True, rng=rng)
            g = backward(params, cache, ds.targets[i])
            grad_sum = g if grad_sum is None else {k: grad_sum[k] + g[k] for k in g}
        averaged = {k: v / batch_size for k, v in grad_sum.items()}
        adam_step(params, averaged, state, 1e-4)
        return params

    from taikoforge.trainer import _run_epoch

    params = init_params(seed=3, norm=ds.norm)
    state = init_adam_state(params)
    _run_epoch(params, state, ds, idx, batch_size=4, lr=1e-4, rng=np.random.default_rng(42))
    manual = run_manual(4)
    for name, arr in params.items():
        assert np.allclose(arr, manual[name], rtol=1e-5, atol=0)


def test_single_example_and_batch_losses_consistent(tmp_path):
    # batch mean of per-example losses equals the epoch mean by construction;
    # sanity-check the reported value is a plain mean
    ds = tiny_dataset(per_chart=3)
    result = train(ds, quick_config(tmp_path, phase1_batch=3))
    assert 0.0 < result.records[0].train_loss < 25.0
