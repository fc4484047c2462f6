import numpy as np
import pytest
import torch

from selftransfer.data import (
    Dataset,
    NormalizationParams,
    PROVENANCE_PSEUDO,
    PROVENANCE_REAL,
    ROLE_TARGET,
    ROLE_VALIDATION,
    TimeSeriesSample,
    fit_normalization,
)
from selftransfer.mmd import MkMmdConfig, mmd_weight
from selftransfer.networks import DanTrArch, SurrogateArch, make_surrogate
from selftransfer.training import (
    TrainConfig,
    consistency_weight,
    cosine_lr,
    ema_update,
    evaluate_mse,
    pseudo_label,
    train_dantr,
    train_supervised,
)
from conftest import make_labeled, make_unlabeled

TINY_ARCH = SurrogateArch(n_recurrent_layers=1, n_dense_layers=2, hidden_dim=8)


def normed(ds):
    return ds.with_norm(fit_normalization(ds))


def tiny_config(**overrides):
    defaults = dict(
        n_steps=60, batch_size=4, base_lr=5e-3, lr_min=1e-3,
        ema_alpha=0.95, consistency_weight_max=0.0, eval_interval=20, seed=0,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestEma:
    def _pair(self):
        a = make_surrogate(TINY_ARCH, 0)
        b = make_surrogate(TINY_ARCH, 1)
        return a, b

    def test_single_step_closed_form(self):
        teacher, student = self._pair()
        for p in teacher.parameters():
            p.data.zero_()
        for p in student.parameters():
            p.data.fill_(1.0)
        ema_update(teacher, student, 0.999)
        for p in teacher.parameters():
            assert torch.allclose(p, torch.full_like(p, 0.001))

    def test_alpha_zero_copies_student(self):
        teacher, student = self._pair()
        ema_update(teacher, student, 0.0)
        for t, s in zip(teacher.parameters(), student.parameters()):
            assert torch.equal(t, s)

    def test_three_step_geometric_form(self):
        teacher, student = self._pair()
        for p in teacher.parameters():
            p.data.zero_()
        for p in student.parameters():
            p.data.fill_(0.7)
        alpha = 0.999
        for _ in range(3):
            ema_update(teacher, student, alpha)
        expected = 0.7 * (1.0 - alpha**3)
        for p in teacher.parameters():
            assert (p - expected).abs().max() < 1e-12

    def test_general_closed_form_on_scalars(self):
        # theta_T(k) = a^k theta_T(0) + (1-a) sum_{j<k} a^j theta_S(k-j)
        rng = np.random.default_rng(0)
        alpha = 0.9
        theta0 = 0.37
        students = rng.normal(size=10)
        theta = theta0
        for s in students:
            theta = alpha * theta + (1 - alpha) * s
        closed = alpha**10 * theta0 + (1 - alpha) * sum(
            alpha**j * students[10 - 1 - j] for j in range(10)
        )
        assert abs(theta - closed) < 1e-12

    def test_shape_mismatch(self):
        a = make_surrogate(TINY_ARCH, 0)
        b = make_surrogate(SurrogateArch(1, 2, 4), 0)
        with pytest.raises(ValueError, match="shapes"):
            ema_update(a, b, 0.5)


class TestSchedules:
    def test_cosine_endpoints(self):
        cfg = tiny_config(n_steps=100, base_lr=1e-3, lr_min=1e-4)
        assert cosine_lr(0, cfg) == 1e-3
        assert abs(cosine_lr(100, cfg) - 1e-4) < 1e-18
        values = [cosine_lr(s, cfg) for s in range(101)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_consistency_ramp(self):
        cfg = tiny_config(consistency_weight_max=2.0, consistency_ramp_fraction=0.5, n_steps=100)
        assert consistency_weight(0, cfg) == 0.0
        assert consistency_weight(25, cfg) == 1.0
        assert consistency_weight(50, cfg) == 2.0
        assert consistency_weight(99, cfg) == 2.0


class TestSupervised:
    def test_memorizes_single_sample(self):
        ds = normed(make_labeled(1, length=12, seed=4))
        cfg = tiny_config(n_steps=800, batch_size=1, base_lr=2e-2, lr_min=2e-3)
        res = train_supervised(TINY_ARCH, ds, cfg, ds)
        assert res.student_val_mse < 1e-4

    def test_deterministic(self):
        ds = normed(make_labeled(4, length=10))
        val = normed(make_labeled(2, length=10, seed=9)).with_norm(ds.norm)
        cfg = tiny_config()
        a = train_supervised(TINY_ARCH, ds, cfg, val)
        b = train_supervised(TINY_ARCH, ds, cfg, val)
        assert a.student_val_mse == b.student_val_mse
        assert [r["train_loss"] for r in a.history] == [r["train_loss"] for r in b.history]

    def test_metrics_stream_written(self, tmp_path):
        ds = normed(make_labeled(3, length=8))
        cfg = tiny_config(n_steps=25, eval_interval=10)
        train_supervised(TINY_ARCH, ds, cfg, ds, log_path=tmp_path / "m.jsonl")
        lines = (tmp_path / "m.jsonl").read_text().splitlines()
        assert len(lines) == 4  # steps 0, 10, 20, 24
        import json

        record = json.loads(lines[0])
        assert {"step", "train_loss", "val_mse", "lr", "wall_time"} <= set(record)

    def test_mixed_datasets_and_upweight(self):
        real = normed(make_labeled(3, length=8))
        pseudo_samples = tuple(
            TimeSeriesSample(f"p{i}", s.input, s.output, PROVENANCE_PSEUDO)
            for i, s in enumerate(make_labeled(5, length=8, seed=2).samples)
        )
        pseudo = Dataset(samples=pseudo_samples, role="pseudo-source", dt=0.1, norm=real.norm)
        cfg = tiny_config(n_steps=10, labeled_upweight=4.0)
        res = train_supervised(TINY_ARCH, [pseudo, real], cfg, real)
        assert np.isfinite(res.student_val_mse)

    def test_norm_mismatch_rejected(self):
        a = normed(make_labeled(3, length=8))
        b = make_labeled(3, length=8, seed=5).with_norm(
            NormalizationParams(-9.0, 9.0, -9.0, 9.0)
        )
        with pytest.raises(ValueError, match="normalization"):
            train_supervised(TINY_ARCH, [a, b], tiny_config(), a)

    def test_teacher_tracks_student(self):
        # sanity band: teacher no worse than 1.5x student at the end (median of 3 seeds)
        ds = normed(make_labeled(6, length=12, seed=8))
        val = make_labeled(3, length=12, seed=13).with_norm(ds.norm)
        ratios = []
        for seed in range(3):
            cfg = tiny_config(n_steps=400, ema_alpha=0.98, seed=seed,
                              consistency_weight_max=0.5, input_noise_std=0.01)
            res = train_supervised(TINY_ARCH, ds, cfg, val)
            ratios.append(res.teacher_val_mse / res.student_val_mse)
        assert np.median(ratios) <= 1.5


class TestEvaluate:
    def test_zero_for_perfect_predictions(self):
        ds = normed(make_labeled(2, length=6))

        class Perfect:
            def __call__(self, x):
                from selftransfer.data import normalize_values

                y = np.stack([s.output for s in ds.samples])
                return torch.from_numpy(
                    normalize_values(y, ds.norm.output_min, ds.norm.output_max)
                ).unsqueeze(-1)

        assert evaluate_mse(Perfect(), ds) == 0.0

    def test_hand_value(self):
        norm = NormalizationParams(-1, 1, -1, 1)
        ds = Dataset(
            samples=(TimeSeriesSample("a", [9.0, 9.0], [0.0, 0.0], PROVENANCE_REAL),),
            role=ROLE_TARGET, dt=0.1, norm=norm,
        )

        class Fixed:
            def __call__(self, x):
                return torch.tensor([[[1.0], [2.0]]], dtype=torch.float64)

        assert evaluate_mse(Fixed(), ds) == 2.5

    def test_order_invariant(self):
        ds = normed(make_labeled(5, length=6))
        net = make_surrogate(TINY_ARCH, 0)
        shuffled = Dataset(samples=tuple(reversed(ds.samples)), role=ds.role, dt=ds.dt, norm=ds.norm)
        assert abs(evaluate_mse(net, ds) - evaluate_mse(net, shuffled)) < 1e-15

    def test_unlabeled_rejected(self):
        pool = make_unlabeled(2).with_norm(NormalizationParams(-1, 1, -1, 1))
        net = make_surrogate(TINY_ARCH, 0)
        with pytest.raises(ValueError, match="real-labeled"):
            evaluate_mse(net, pool)


class TestPseudoLabel:
    def _pool(self, n=12):
        pool = make_unlabeled(n, length=10)
        return pool.with_norm(NormalizationParams(-2.0, 2.0, -4.0, 4.0))

    def test_count_contracts(self):
        net = make_surrogate(TINY_ARCH, 0)
        pool = self._pool()
        assert len(pseudo_label(net, pool, 0, seed=1)) == 0
        exhaustive = pseudo_label(net, pool, len(pool), seed=1)
        assert sorted(exhaustive.ids()) == sorted(pool.ids())

    def test_count_exceeds_pool(self):
        with pytest.raises(ValueError, match="pool"):
            pseudo_label(make_surrogate(TINY_ARCH, 0), self._pool(3), 4, seed=0)

    def test_deterministic_selection(self):
        net = make_surrogate(TINY_ARCH, 0)
        pool = self._pool()
        a = pseudo_label(net, pool, 5, seed=7)
        b = pseudo_label(net, pool, 5, seed=7)
        assert a.ids() == b.ids()
        assert all(np.array_equal(x.output, y.output) for x, y in zip(a.samples, b.samples))
        c = pseudo_label(net, pool, 5, seed=8)
        assert a.ids() != c.ids()

    def test_labels_match_independent_forward(self):
        from selftransfer.data import denormalize_values, normalize_values

        net = make_surrogate(TINY_ARCH, 3)
        pool = self._pool(6)
        out = pseudo_label(net, pool, 4, seed=2)
        norm = pool.norm
        for s in out.samples:
            x = torch.from_numpy(
                normalize_values(s.input, norm.input_min, norm.input_max)
            ).view(1, -1, 1)
            with torch.no_grad():
                pred = net(x)[0, :, 0].numpy()
            expected = denormalize_values(pred, norm.output_min, norm.output_max)
            assert np.abs(expected - s.output).max() < 1e-12

    def test_provenance_and_role(self):
        out = pseudo_label(make_surrogate(TINY_ARCH, 0), self._pool(), 3, seed=0)
        assert out.role == "pseudo-source"
        assert all(s.provenance == PROVENANCE_PSEUDO for s in out.samples)


class TestDanTr:
    def _data(self):
        target = normed(make_labeled(4, length=10, seed=1))
        source_samples = tuple(
            TimeSeriesSample(f"p{i}", s.input, s.output, PROVENANCE_PSEUDO)
            for i, s in enumerate(make_labeled(8, length=10, seed=2).samples)
        )
        source = Dataset(samples=source_samples, role="pseudo-source", dt=0.1, norm=target.norm)
        val = make_labeled(3, length=10, seed=3).with_norm(target.norm)
        return source, target, val

    def test_runs_and_traces_lambda(self):
        source, target, val = self._data()
        cfg = tiny_config(n_steps=30)
        res = train_dantr(DanTrArch(hidden_dim=6), source, target, cfg, MkMmdConfig(), val)
        assert np.isfinite(res.val_mse)
        assert res.trace["lam"] == [mmd_weight(s, 30) for s in res.trace["step"]]

    def test_symmetric_start_zero_mmd(self):
        _, target, val = self._data()
        # source == target and identical heads: first-step mmd must be 0
        source_samples = tuple(
            TimeSeriesSample(f"p{i}", s.input, s.output, PROVENANCE_PSEUDO)
            for i, s in enumerate(target.samples)
        )
        source = Dataset(samples=source_samples, role="pseudo-source", dt=0.1, norm=target.norm)
        arch = DanTrArch(hidden_dim=6)

        cfg = tiny_config(n_steps=1, batch_size=len(target))
        res = train_dantr(arch, source, target, cfg, MkMmdConfig(), val,
                          symmetric_head_init=True)
        assert res.trace["mmd"][0] == 0.0

    def test_deterministic(self):
        source, target, val = self._data()
        cfg = tiny_config(n_steps=20)
        a = train_dantr(DanTrArch(hidden_dim=6), source, target, cfg, MkMmdConfig(), val)
        b = train_dantr(DanTrArch(hidden_dim=6), source, target, cfg, MkMmdConfig(), val)
        assert a.val_mse == b.val_mse
        assert a.trace["reg"] == b.trace["reg"]

    def test_requires_real_labeled_target(self):
        source, target, val = self._data()
        with pytest.raises(ValueError, match="real"):
            train_dantr(DanTrArch(hidden_dim=6), source, source, tiny_config(n_steps=5),
                        MkMmdConfig(), val)
