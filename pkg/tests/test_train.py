import numpy as np
import numpy.testing as npt
import pytest

import scalar_reference as ref
from mtss import autodiff as ad
from mtss.data import POL, SUBJ, EncodedBatch
from mtss.errors import ConfigError, UsageError
from mtss.model import JointModel, TaskSetup
from mtss.train import (Adam, count_parameters, evaluate, fit,
                        make_mtl_batches, train_epoch)
from mtss.verification import tiny_batches, tiny_config


def scalar_param(value):
    return ad.parameter(np.array([value], dtype=np.float64))


class TestAdam:
    def test_first_step_magnitude_is_lr(self, f64):
        # bias correction makes the first update lr*|g|/(|g|+eps) ~ lr for
        # any gradient scale
        lr, eps = 0.001, 1e-8
        for g in (1e-4, 1.0, 1e4):
            p = scalar_param(0.0)
            opt = Adam([("p", p)], lr=lr, eps=eps)
            p.grad[...] = g
            opt.step()
            step = abs(float(p.data[0]))
            assert abs(step - lr * g / (g + eps)) < 1e-12
            assert abs(step - lr) / lr < 1e-3

    def test_zero_gradient_leaves_parameters(self, f64):
        p = scalar_param(0.7)
        opt = Adam([("p", p)], lr=0.1)
        p.grad[...] = 0.0
        opt.step()
        assert float(p.data[0]) == 0.7

    def test_quadratic_minimization_matches_reference_recurrence(self, f64):
        p = scalar_param(1.0)
        opt = Adam([("p", p)], lr=0.05)
        ours = []
        for _ in range(200):
            opt.zero_grad()
            p.grad[...] = 2.0 * p.data
            opt.step()
            ours.append(float(p.data[0]))
        final, trace = ref.adam_scalar(lambda th: 2.0 * th, 1.0, 200, 0.05)
        assert abs(final) < 0.01
        npt.assert_allclose(ours, trace, atol=1e-12)

    def test_moment_shapes_mirror_parameters(self, f64, rng):
        params = [("a", ad.parameter(rng.normal(size=(3, 4)))),
                  ("b", ad.parameter(rng.normal(size=7)))]
        opt = Adam(params)
        for name, p in params:
            assert opt.m[name].shape == p.data.shape
            assert opt.v[name].shape == p.data.shape


def encoded_split(task, n, max_len=6, vocab=9, seed=0):
    rng = np.random.default_rng(seed)
    ids = rng.integers(1, vocab, size=(n, max_len)).astype(np.int32)
    mask = np.ones((n, max_len), dtype=np.uint8)
    labels = np.zeros((n, 2), dtype=np.uint8)
    labels[np.arange(n), rng.integers(0, 2, size=n)] = 1
    return EncodedBatch(task=task, mask=mask, labels=labels,
                        record_ids=np.arange(n), ids=ids)


class TestBatching:
    def test_table_one_sizes_give_112_pairs(self):
        pol = encoded_split(POL, 7200)
        subj = encoded_split(SUBJ, 7200)
        pairs = list(make_mtl_batches(pol, subj, 64, seed=1))
        assert len(pairs) == 112
        assert all(p.size == 64 and s.size == 64 for p, s in pairs)

    def test_different_seeds_change_pairing(self):
        pol = encoded_split(POL, 256)
        subj = encoded_split(SUBJ, 256)
        a = [p.record_ids.tolist() for p, _ in
             make_mtl_batches(pol, subj, 32, seed=1)]
        b = [p.record_ids.tolist() for p, _ in
             make_mtl_batches(pol, subj, 32, seed=2)]
        assert a != b

    def test_each_record_once_when_batch_divides(self):
        pol = encoded_split(POL, 128)
        subj = encoded_split(SUBJ, 256)
        seen = []
        for p, _ in make_mtl_batches(pol, subj, 32, seed=5):
            seen.extend(p.record_ids.tolist())
        assert sorted(seen) == list(range(128))

    def test_epoch_reshuffles(self):
        pol = encoded_split(POL, 128)
        subj = encoded_split(SUBJ, 128)
        e0 = [p.record_ids.tolist() for p, _ in
              make_mtl_batches(pol, subj, 32, seed=1, epoch=0)]
        e1 = [p.record_ids.tolist() for p, _ in
              make_mtl_batches(pol, subj, 32, seed=1, epoch=1)]
        assert e0 != e1

    def test_bad_batch_size(self):
        pol = encoded_split(POL, 16)
        with pytest.raises(ConfigError):
            list(make_mtl_batches(pol, pol, 0, seed=1))


def tiny_encoded(task, n=64, seed=0):
    return encoded_split(task, n, max_len=3, vocab=7, seed=seed)


def tiny_data(n=64):
    return {POL: {"train": tiny_encoded(POL, n, seed=1),
                  "dev": tiny_encoded(POL, 16, seed=2),
                  "test": tiny_encoded(POL, 16, seed=3)},
            SUBJ: {"train": tiny_encoded(SUBJ, n, seed=4),
                   "dev": tiny_encoded(SUBJ, 16, seed=5),
                   "test": tiny_encoded(SUBJ, 16, seed=6)}}


def tiny_model(cfg):
    return JointModel(cfg, [TaskSetup("pol", 3, 2, vocab_size=7),
                            TaskSetup("subj", 3, 2, vocab_size=7)])


class TestTrainEpoch:
    def test_initial_loss_near_ln2(self, f64):
        cfg = tiny_config()
        model = tiny_model(cfg)
        out = model.forward(tiny_batches())
        for task in (POL, SUBJ):
            assert abs(float(out["losses"][task].data) - np.log(2)) < 0.05

    def test_single_task_mode_owns_only_its_parameters(self, f64):
        cfg = tiny_config()
        cfg.mode = "single-pol"
        model = JointModel(cfg, [TaskSetup("pol", 3, 2, vocab_size=7)])
        names = [n for n, _ in model.parameters()]
        assert all(not n.startswith(("subj.", "ntn.", "head.subj"))
                   for n in names)

    def test_zero_weight_leaves_other_task_bit_identical(self, f64):
        cfg = tiny_config()
        cfg.use_ntn = False
        cfg.loss_weight_subj = 0.0
        model = tiny_model(cfg)
        before = {n: t.data.copy() for n, t in model.parameters()
                  if n.startswith(("subj.", "head.subj"))}
        opt = Adam(model.parameters(), lr=cfg.learning_rate)
        train_epoch(cfg, model, opt, tiny_data(), epoch=1)
        for n, t in model.parameters():
            if n in before:
                npt.assert_array_equal(t.data, before[n], err_msg=n)

    def test_one_small_step_decreases_batch_loss(self, f64):
        cfg = tiny_config()
        for seed in range(10):
            model = tiny_model(cfg)
            rng = np.random.default_rng(seed)
            for _, t in model.parameters():
                t.data[...] = rng.uniform(-0.5, 0.5, t.data.shape)
            batches = {POL: tiny_encoded(POL, 8, seed=seed),
                       SUBJ: tiny_encoded(SUBJ, 8, seed=seed + 50)}
            opt = Adam(model.parameters(), lr=1e-5)
            with ad.Tape() as tape:
                out = model.forward(batches)
            before = float(out["joint"].data)
            opt.zero_grad()
            tape.backward(out["joint"])
            opt.step()
            after = float(model.forward(batches)["joint"].data)
            assert after < before or abs(after - before) < 1e-9

    def test_abort_on_nonfinite_loss(self, f64):
        cfg = tiny_config()
        model = tiny_model(cfg)
        params = dict(model.parameters())
        params["pol.fc2.W"].data[...] = np.nan
        opt = Adam(model.parameters())
        from mtss.errors import NumericsError
        with pytest.raises(NumericsError, match="learning_rate"):
            train_epoch(cfg, model, opt, tiny_data(), epoch=1)


class TestEvaluate:
    def test_constant_predictor_scores_half_on_balanced_split(self, f64):
        cfg = tiny_config()
        model = tiny_model(cfg)
        for _, t in model.parameters():
            t.data[...] = 0.0  # probs [0.5, 0.5] -> always class 0
        n = 40
        split = tiny_encoded(POL, n, seed=0)
        split.labels[:, :] = 0
        split.labels[:n // 2, 0] = 1
        split.labels[n // 2:, 1] = 1
        cfg2 = tiny_config()
        cfg2.mode = "single-pol"
        single = JointModel(cfg2, [TaskSetup("pol", 3, 2, vocab_size=7)])
        for _, t in single.parameters():
            t.data[...] = 0.0
        stats = evaluate(single, {POL: split})
        assert stats[POL]["accuracy"] == 0.5

    def test_confusion_matrix_contract(self, f64):
        cfg = tiny_config()
        model = tiny_model(cfg)
        splits = {POL: tiny_encoded(POL, 37, seed=1),
                  SUBJ: tiny_encoded(SUBJ, 37, seed=2)}
        stats = evaluate(model, splits)
        for task in (POL, SUBJ):
            conf = stats[task]["confusion"]
            assert conf.sum() == 37
            acc = 1.0 - (conf[0, 1] + conf[1, 0]) / conf.sum()
            assert abs(acc - stats[task]["accuracy"]) < 1e-12

    def test_empty_split_rejected(self, f64):
        cfg = tiny_config()
        cfg.mode = "single-pol"
        model = JointModel(cfg, [TaskSetup("pol", 3, 2, vocab_size=7)])
        empty = tiny_encoded(POL, 1, seed=0).take(np.array([], dtype=int))
        with pytest.raises(UsageError, match="empty"):
            evaluate(model, {POL: empty})

    def test_unequal_split_sizes_score_every_record_once(self, f64):
        cfg = tiny_config()
        model = tiny_model(cfg)
        splits = {POL: tiny_encoded(POL, 50, seed=1),
                  SUBJ: tiny_encoded(SUBJ, 30, seed=2)}
        stats = evaluate(model, splits, batch_size=16)
        assert stats[POL]["confusion"].sum() == 50
        assert stats[SUBJ]["confusion"].sum() == 30


class TestCountParameters:
    def test_tiny_hand_ledger(self, f64):
        cfg = tiny_config()
        vocab = 7
        model = tiny_model(cfg)
        d_in, hidden, d_f, d_a, d_t, k, c = 2, 2, 2, 2, 2, 2, 2
        per_direction = (4 * d_in * hidden + 4 * hidden * hidden
                         + 3 * hidden + 4 * hidden)
        per_task = (vocab * d_in            # embedding table
                    + 2 * per_direction     # both LSTM directions
                    + 2 * hidden * d_f + d_f  # TDFC
                    + d_f * 1 + 3 * 3       # attention: W_att + W_alpha(LxL)
                    + d_f * d_a + d_a       # FC after attention
                    + d_a * d_t + d_t)      # final FC
        ntn = k * d_a * d_a + 2 * d_a * k + k
        heads = 2 * ((d_t + k) * c + c)
        assert count_parameters(model) == 2 * per_task + ntn + heads

    def test_mtl_decomposes_into_single_task_counts(self, f64):
        cfg = tiny_config()
        mtl = tiny_model(cfg)
        singles = 0
        for mode, task in (("single-pol", "pol"), ("single-subj", "subj")):
            c = tiny_config()
            c.mode = mode
            singles += count_parameters(
                JointModel(c, [TaskSetup(task, 3, 2, vocab_size=7)]))
        k, c_cls = cfg.ntn_size, cfg.num_classes
        ntn = (k * cfg.fc_size * cfg.fc_size + 2 * cfg.fc_size * k + k)
        head_extension = 2 * k * c_cls
        assert count_parameters(mtl) == singles + ntn + head_extension


class TestTrainingFlags:
    def test_early_stop_cuts_the_run_short(self, f64):
        cfg = tiny_config()
        cfg.epochs = 12
        cfg.early_stop = True
        cfg.early_stop_patience = 2
        cfg.learning_rate = 1e-12  # dev accuracy plateaus immediately
        model = tiny_model(cfg)
        result = fit(cfg, model, tiny_data())
        epochs_run = max(r.epoch for r in result.records)
        assert epochs_run <= 1 + cfg.early_stop_patience

    def test_grad_clip_bounds_global_norm(self, f64, rng):
        from mtss.train import clip_gradients
        params = [("a", ad.parameter(rng.normal(size=(4, 4)))),
                  ("b", ad.parameter(rng.normal(size=9)))]
        for _, p in params:
            p.grad[...] = rng.normal(size=p.data.shape) * 10
        clip_gradients(params, max_norm=1.0)
        total = sum(float((p.grad ** 2).sum()) for _, p in params)
        assert abs(np.sqrt(total) - 1.0) < 1e-6


class TestDeterminismAndConsistency:
    def test_fixed_seed_reproduces_metrics_exactly(self, f64):
        cfg = tiny_config()
        cfg.epochs = 2
        runs = []
        for _ in range(2):
            model = tiny_model(cfg)
            result = fit(cfg, model, tiny_data())
            runs.append([(r.epoch, r.split, r.task, r.loss, r.accuracy)
                         for r in result.records])
        assert runs[0] == runs[1]

    def test_single_task_trajectory_matches_ablated_mtl(self, f64):
        epochs = 2
        mtl_cfg = tiny_config()
        mtl_cfg.use_ntn = False
        mtl_cfg.loss_weight_subj = 0.0
        mtl_cfg.epochs = epochs
        mtl = tiny_model(mtl_cfg)

        single_cfg = tiny_config()
        single_cfg.mode = "single-pol"
        single_cfg.epochs = epochs
        single = JointModel(single_cfg,
                            [TaskSetup("pol", 3, 2, vocab_size=7)])

        data = tiny_data(n=64)
        mtl_opt = Adam(mtl.parameters(), lr=mtl_cfg.learning_rate)
        single_opt = Adam(single.parameters(), lr=single_cfg.learning_rate)
        for epoch in range(1, epochs + 1):
            train_epoch(mtl_cfg, mtl, mtl_opt, data, epoch)
            train_epoch(single_cfg, single, single_opt,
                        {POL: data[POL]}, epoch)
        mtl_params = dict(mtl.parameters())
        for name, t in single.parameters():
            npt.assert_allclose(mtl_params[name].data, t.data, atol=1e-9,
                                err_msg=name)
