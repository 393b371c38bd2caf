"""Training protocol: scheduler rules, splits, folds, snapshot semantics."""

import numpy as np
import pytest

from cornet import phantom
from cornet.data import DeviceProfile
from cornet.network import NetworkConfig, build_network
from cornet.training import (
    LossScheduler,
    Sample,
    TrainConfig,
    TrainingError,
    cross_validate,
    evaluate_loss,
    make_folds,
    one_hot_target,
    split_validation,
    tiles_from_volume,
    train,
    volume_ids,
)

TINY_NET = dict(depth=2, growth=(2, 4), bottleneck_channels=2, dilations=(1,),
                input_pyramid=False, dense_connections=False)


def synthetic_dataset(n_volumes, tiles_per_volume=2, h=16, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for v in range(n_volumes):
        for _ in range(tiles_per_volume):
            img = rng.integers(0, 256, size=(h, 256)).astype(np.uint8)
            lab = np.zeros((h, 256), dtype=np.uint8)
            lab[h // 2] = 1
            out.append(Sample(f"vol{v:03d}", img, lab))
    return out


class TestScheduler:
    def test_flat_trace_halving_and_stop(self):
        sched = LossScheduler(1e-3, plateau_patience=5, early_stop_patience=10)
        lrs = []
        stopped_at = None
        for epoch in range(1, 12):
            sched.update(1.0)
            lrs.append(sched.lr)
            if sched.should_stop and stopped_at is None:
                stopped_at = epoch
        assert lrs[4] == 1e-3  # still unchanged after epoch 5 (4 bad epochs)
        assert lrs[5] == 5e-4  # halved at epoch 6 (5 consecutive non-improving)
        assert stopped_at == 11  # 10 consecutive non-improving

    def test_never_stops_early(self):
        sched = LossScheduler(1e-3, early_stop_patience=10)
        sched.update(1.0)
        for _ in range(9):
            sched.update(1.0)
            assert not sched.should_stop or sched.streak >= 10
        assert not sched.should_stop
        sched.update(1.0)
        assert sched.should_stop

    def test_improvement_resets_streak(self):
        sched = LossScheduler(1e-3, plateau_patience=5, early_stop_patience=10)
        losses = [1.0, 0.9, 0.9, 0.9, 0.9, 0.8, 0.8, 0.8, 0.8, 0.8, 0.8]
        for loss in losses:
            sched.update(loss)
        assert sched.lr == 5e-4  # only the trailing 5 non-improvements halve
        assert not sched.should_stop

    def test_tolerance_counts_tiny_changes_as_plateau(self):
        sched = LossScheduler(1e-3, plateau_patience=5, early_stop_patience=10, tol=1e-7)
        sched.update(1.0)
        for _ in range(5):
            assert not sched.update(1.0 - 5e-8)
        assert sched.lr == 5e-4

    def test_lr_sequence_non_increasing(self, rng):
        sched = LossScheduler(1e-3)
        prev = sched.lr
        for _ in range(30):
            sched.update(float(rng.random()))
            assert sched.lr <= prev
            prev = sched.lr


class TestSplits:
    def test_twenty_volumes_ten_percent(self):
        ds = synthetic_dataset(20)
        train_set, val_set = split_validation(ds, 0.10, seed=1)
        assert len(volume_ids(train_set)) == 18
        assert len(volume_ids(val_set)) == 2

    def test_partition_exact(self):
        ds = synthetic_dataset(10)
        train_set, val_set = split_validation(ds, 0.10, seed=3)
        ids = lambda xs: {id(s) for s in xs}
        assert ids(train_set) | ids(val_set) == ids(ds)
        assert not (ids(train_set) & ids(val_set))
        assert not (set(volume_ids(train_set)) & set(volume_ids(val_set)))

    def test_deterministic(self):
        ds = synthetic_dataset(12)
        a = split_validation(ds, 0.10, seed=9)
        b = split_validation(ds, 0.10, seed=9)
        assert volume_ids(a[1]) == volume_ids(b[1])

    def test_empty_split_rejected(self):
        ds = synthetic_dataset(3)
        with pytest.raises(TrainingError, match="empty"):
            split_validation(ds, 0.01, seed=0)

    def test_volume_level_integrity(self):
        ds = synthetic_dataset(10, tiles_per_volume=3)
        train_set, val_set = split_validation(ds, 0.2, seed=0)
        for vid in volume_ids(val_set):
            assert sum(1 for s in val_set if s.volume_id == vid) == 3


class TestFolds:
    def test_18_volumes_5_folds_sizes(self):
        ds = synthetic_dataset(18)
        folds = make_folds(ds, 5, seed=0)
        assert sorted(len(f) for f in folds) == [3, 3, 4, 4, 4]

    def test_disjoint_exhaustive(self):
        ds = synthetic_dataset(11)
        folds = make_folds(ds, 4, seed=2)
        union = set().union(*folds)
        assert union == set(volume_ids(ds))
        assert sum(len(f) for f in folds) == 11

    def test_too_many_folds(self):
        with pytest.raises(TrainingError, match="folds"):
            make_folds(synthetic_dataset(3), 5, seed=0)


class TestOneHot:
    def test_encoding(self):
        lab = np.array([[[0, 1], [2, 3]]], dtype=np.uint8)
        t = one_hot_target(lab, 4, np.float64)
        assert t.shape == (1, 4, 2, 2)
        np.testing.assert_array_equal(t.sum(axis=1), 1.0)
        assert t[0, 1, 0, 1] == 1.0 and t[0, 3, 1, 1] == 1.0


class TestTrainLoop:
    def test_empty_dataset_rejected(self):
        net = build_network(NetworkConfig(**TINY_NET), seed=0)
        with pytest.raises(TrainingError, match="empty"):
            train(net, [], TrainConfig(max_epochs=1))

    def test_best_snapshot_restored_and_consistent(self):
        ds = synthetic_dataset(6, tiles_per_volume=2)
        net = build_network(NetworkConfig(**TINY_NET), seed=0)
        cfg = TrainConfig(max_epochs=4, batch_size=2, seed=3, validation_fraction=0.2)
        net, hist = train(net, ds, cfg)
        train_ds, val_ds = split_validation(ds, 0.2, 3)
        recomputed = evaluate_loss(net, val_ds, 2)
        assert recomputed == pytest.approx(hist.best_val_loss, abs=1e-6)
        assert hist.best_epoch <= hist.stopping_epoch
        assert len(hist.epochs) == hist.stopping_epoch

    def test_deterministic_histories(self):
        ds = synthetic_dataset(6)
        runs = []
        for _ in range(2):
            net = build_network(NetworkConfig(**TINY_NET), seed=0)
            _, hist = train(net, ds, TrainConfig(max_epochs=3, seed=7, validation_fraction=0.2))
            runs.append((hist.train_loss, hist.val_loss, hist.lr))
        assert runs[0] == runs[1]

    def test_history_csv(self, tmp_path):
        ds = synthetic_dataset(6)
        net = build_network(NetworkConfig(**TINY_NET), seed=0)
        _, hist = train(net, ds, TrainConfig(max_epochs=2, seed=1, validation_fraction=0.2))
        path = tmp_path / "hist.csv"
        hist.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,lr"
        assert len(lines) == len(hist.epochs) + 1

    def test_lr_non_increasing_in_history(self):
        ds = synthetic_dataset(6)
        net = build_network(NetworkConfig(**TINY_NET), seed=0)
        _, hist = train(net, ds, TrainConfig(max_epochs=5, seed=1, validation_fraction=0.2))
        assert all(a >= b for a, b in zip(hist.lr, hist.lr[1:]))


class TestAugmentedTraining:
    def test_augment_path_runs_and_is_deterministic(self):
        ds = synthetic_dataset(4, tiles_per_volume=1, h=16)
        losses = []
        for _ in range(2):
            net = build_network(NetworkConfig(**TINY_NET), seed=0)
            _, hist = train(net, ds, TrainConfig(max_epochs=2, seed=2, augment=True,
                                                 validation_fraction=0.3))
            losses.append(tuple(hist.train_loss))
        assert losses[0] == losses[1]


class TestCrossValidate:
    def test_structure_and_argmin(self):
        ds = synthetic_dataset(6, tiles_per_volume=1)
        cfg = TrainConfig(max_epochs=2, folds=3, seed=5, batch_size=2)
        best, histories, nets = cross_validate(ds, cfg, NetworkConfig(**TINY_NET))
        assert len(histories) == 3 and len(nets) == 3
        best_idx = int(np.argmin([h.best_val_loss for h in histories]))
        assert best is nets[best_idx]

    def test_too_few_volumes(self):
        ds = synthetic_dataset(2)
        with pytest.raises(TrainingError):
            cross_validate(ds, TrainConfig(folds=5, max_epochs=1), NetworkConfig(**TINY_NET))


class TestOverfitSmoke:
    def test_tiny_memorization(self):
        # small-scale stand-in for the full overfit acceptance criterion
        prof = DeviceProfile("mini", 12.0, 3.0, 256, 128, 1)
        scan, lab, _ = phantom.synth_phantom(1, prof)
        ds = [Sample("v0", scan.intensities, lab), Sample("v1", scan.intensities, lab)]
        cfg = TrainConfig(learning_rate=5e-3, batch_size=2, max_epochs=40,
                          seed=0, validation_fraction=0.5)
        net = build_network(NetworkConfig(depth=2, growth=(6, 10), bottleneck_channels=6,
                                          dilations=(1, 2)), seed=1)
        net, hist = train(net, ds, cfg)
        assert min(hist.train_loss) < 0.05
        assert hist.train_loss[-1] < hist.train_loss[0]
