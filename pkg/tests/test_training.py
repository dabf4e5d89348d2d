"""Schedule, epoch training, evaluation, and multi-seed experiments."""

import hashlib

import numpy as np
import pytest

from connectobench import (
    ConfigError,
    ContractError,
    DivergenceError,
    ResidualGCNConfig,
    SyntheticSpec,
    TrainConfig,
    aggregate_accuracy,
    evaluate,
    generate_synthetic,
    lr_at,
    run_experiment,
    split_dataset,
    train_epoch,
)
from connectobench.data import dataset_to_lines
from connectobench.models import build_model
from connectobench.optim import AdamState
from connectobench.rng import seeded_rng
from connectobench.training import run_single_seed, write_curves_csv


def small_dataset(num_graphs=40, n=10, seed=5, mode="feature_only"):
    return generate_synthetic(SyntheticSpec(num_graphs=num_graphs, n=n,
                                            num_classes=2, label_mode=mode,
                                            seed=seed))


def small_config(**kw):
    defaults = dict(total_epochs=4, warmup_epochs=1, seeds=(0,),
                    model_kind="residual_gcn",
                    gcn=ResidualGCNConfig(num_gcn_layers=2, hidden_dim=8,
                                          mlp_hidden=8))
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestLrSchedule:
    def test_paper_constants(self):
        cfg = TrainConfig()
        assert lr_at(4, cfg) == pytest.approx(0.001, abs=1e-15)
        assert lr_at(0, cfg) == pytest.approx(0.0002, abs=1e-15)
        assert lr_at(99, cfg) == pytest.approx(5.0e-5, abs=1e-12)

    def test_out_of_range(self):
        cfg = TrainConfig()
        with pytest.raises(ContractError):
            lr_at(-1, cfg)
        with pytest.raises(ContractError):
            lr_at(100, cfg)

    def test_monotone_and_bounded_random_configs(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            total = int(rng.integers(2, 200))
            cfg = TrainConfig(
                base_lr=float(10 ** rng.uniform(-5, -1)),
                decay_per_epoch=float(10 ** rng.uniform(-8, -3)),
                total_epochs=total,
                warmup_epochs=int(rng.integers(0, total)),
            )
            lrs = [lr_at(e, cfg) for e in range(cfg.total_epochs)]
            warm = lrs[:cfg.warmup_epochs]
            rest = lrs[cfg.warmup_epochs:]
            assert all(b >= a for a, b in zip(warm, warm[1:]))
            assert all(b <= a for a, b in zip(rest, rest[1:]))
            assert all(0.0 < lr <= cfg.base_lr for lr in lrs)

    def test_exponential_rule(self):
        cfg = TrainConfig(decay_rule="exponential", decay_per_epoch=0.1,
                          warmup_epochs=1, total_epochs=4)
        assert lr_at(1, cfg) == pytest.approx(0.001 * 0.9)
        assert lr_at(2, cfg) == pytest.approx(0.001 * 0.81)

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            TrainConfig(base_lr=0.0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(warmup_epochs=100, total_epochs=100).validate()
        with pytest.raises(ConfigError):
            TrainConfig(seeds=()).validate()
        with pytest.raises(ConfigError):
            TrainConfig(model_kind="mlp").validate()


class TestTrainEpoch:
    def test_zero_lr_leaves_params_bit_identical(self):
        ds = small_dataset()
        splits = split_dataset(ds.graphs, seed=0)
        cfg = small_config()
        model = build_model("residual_gcn", ds.feature_dim, ds.num_classes,
                            seed=0, gcn_cfg=cfg.gcn)
        prepared = model.prepare_dataset(ds.graphs)
        before = {k: p.data.copy() for k, p in model.params.items()}
        train_epoch(model, prepared, splits, cfg, 0, AdamState(),
                    seeded_rng(0, "epoch", 0), lr=0.0)
        for k, p in model.params.items():
            assert np.array_equal(p.data, before[k])

    def test_same_seed_identical_metrics(self):
        ds = small_dataset()
        splits = split_dataset(ds.graphs, seed=0)
        cfg = small_config()

        def run():
            model = build_model("residual_gcn", ds.feature_dim, ds.num_classes,
                                seed=3, gcn_cfg=cfg.gcn)
            prepared = model.prepare_dataset(ds.graphs)
            return train_epoch(model, prepared, splits, cfg, 0, AdamState(),
                               seeded_rng(3, "epoch", 0))

        assert run() == run()

    def test_feature_task_learnable(self):
        ds = generate_synthetic(SyntheticSpec(num_graphs=300, n=30,
                                              num_classes=2,
                                              label_mode="feature_only",
                                              seed=12))
        splits = split_dataset(ds.graphs, seed=0)
        cfg = small_config(total_epochs=20, warmup_epochs=2)
        model = build_model("residual_gcn", ds.feature_dim, ds.num_classes,
                            seed=0, gcn_cfg=cfg.gcn)
        prepared = model.prepare_dataset(ds.graphs)
        opt = AdamState()
        metrics = None
        for epoch in range(cfg.total_epochs):
            metrics = train_epoch(model, prepared, splits, cfg, epoch, opt,
                                  seeded_rng(0, "epoch", epoch))
        assert metrics.train_acc >= 90.0

    def test_divergence_reports_epoch_and_batch(self):
        ds = small_dataset()
        splits = split_dataset(ds.graphs, seed=0)
        cfg = small_config(batch_size=4)
        model = build_model("residual_gcn", ds.feature_dim, ds.num_classes,
                            seed=0, gcn_cfg=cfg.gcn)
        prepared = model.prepare_dataset(ds.graphs)
        opt = AdamState()
        with pytest.raises(DivergenceError, match="epoch"), \
                np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(cfg.total_epochs):
                train_epoch(model, prepared, splits, cfg, epoch, opt,
                            seeded_rng(0, "epoch", epoch), lr=1e120)


class _FixedLogitModel:
    """Stub emitting pre-chosen logits per graph index (via prep = index)."""

    def __init__(self, logits):
        self.logits = logits

    def forward(self, prep, mode="eval", tape=None, rng=None):
        from connectobench import Tensor
        return Tensor(self.logits[prep.index])


class _Item:
    def __init__(self, index, label):
        self.index = index
        self.label = label


class TestEvaluate:
    def test_all_correct(self):
        logits = np.array([[2.0, 0.0], [0.0, 2.0]])
        model = _FixedLogitModel(logits)
        prepared = [_Item(0, 0), _Item(1, 1)]
        assert evaluate(model, prepared, [0, 1]) == 100.0

    def test_constant_logits_hit_chance_on_balanced_split(self):
        # constant logits predict class 0 everywhere (argmax tie -> lowest)
        logits = np.zeros((10, 2))
        model = _FixedLogitModel(logits)
        prepared = [_Item(i, i % 2) for i in range(10)]
        assert evaluate(model, prepared, list(range(10))) == 50.0

    def test_two_of_three(self):
        logits = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        model = _FixedLogitModel(logits)
        prepared = [_Item(0, 0), _Item(1, 1), _Item(2, 1)]
        acc = evaluate(model, prepared, [0, 1, 2])
        assert abs(acc - 66.67) < 0.01

    def test_empty_indices(self):
        with pytest.raises(ContractError):
            evaluate(_FixedLogitModel(np.zeros((1, 2))), [], [])


class TestRunExperiment:
    def test_aggregate_mean_std(self):
        mean, std = aggregate_accuracy([50.0, 52.0, 54.0])
        assert mean == pytest.approx(52.0)
        assert std == pytest.approx(2.0)

    def test_single_value_std_zero(self):
        mean, std = aggregate_accuracy([52.11])
        assert (mean, std) == (pytest.approx(52.11), 0.0)

    def test_deterministic_repeat(self):
        ds = small_dataset()
        cfg = small_config(seeds=(0, 1))
        r1 = run_experiment(cfg, ds, 0.5)
        r2 = run_experiment(cfg, ds, 0.5)
        assert r1.to_dict() == r2.to_dict()

    def test_source_dataset_unchanged(self):
        ds = small_dataset()
        digest_before = hashlib.sha256(
            "\n".join(dataset_to_lines(ds)).encode()).hexdigest()
        run_experiment(small_config(), ds, 0.7)
        digest_after = hashlib.sha256(
            "\n".join(dataset_to_lines(ds)).encode()).hexdigest()
        assert digest_before == digest_after

    def test_curves_have_total_epochs_entries(self):
        ds = small_dataset()
        cfg = small_config(total_epochs=6, warmup_epochs=2)
        res = run_experiment(cfg, ds, 0.0)
        for run in res.runs:
            assert len(run.metrics) == 6
            assert all(0.0 <= m.train_acc <= 100.0 for m in run.metrics)
            assert all(np.isfinite(m.loss) for m in run.metrics)

    def test_best_val_selection(self):
        ds = small_dataset()
        cfg = small_config(total_epochs=5, warmup_epochs=1)
        run = run_single_seed(cfg, ds, 0.0, split_dataset(ds.graphs, seed=0), 0)
        vals = [m.val_acc for m in run.metrics]
        assert run.best_val_epoch == int(np.argmax(vals))
        assert run.test_at_best_val == run.metrics[run.best_val_epoch].test_acc

    def test_invalid_drop_p(self):
        with pytest.raises(ConfigError):
            run_experiment(small_config(), small_dataset(), 1.2)

    def test_curves_csv_row_count(self, tmp_path):
        ds = small_dataset()
        cfg = small_config(total_epochs=4, warmup_epochs=1)
        res = run_experiment(cfg, ds, 0.0)
        path = tmp_path / "curves.csv"
        write_curves_csv(res.runs[0], path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + 4 * 3  # header + epochs x splits
