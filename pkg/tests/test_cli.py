import json
import os

import numpy as np
import numpy.testing as npt
import pytest

from mtss import autodiff as ad
from mtss import checkpoint as ckpt
from mtss import experiment, synthetic, verification
from mtss.cli import main
from mtss.config import ExperimentConfig
from mtss.errors import ConfigError, DataFormatError
from mtss.report import CSV_COLUMNS, read_metrics_csv


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return synthetic.write_corpus(str(root), seed=77, pol_per_class=130,
                                  subj_per_class=100)


def small_config(corpus, out_dir, **overrides):
    cfg = ExperimentConfig(
        mode="mtl", embedding="glove", seed=31, out_dir=str(out_dir),
        pol_pos_path=corpus["pol_pos"], pol_neg_path=corpus["pol_neg"],
        subj_path=corpus["subj"], obj_path=corpus["obj"],
        pol_sample_per_class=100, max_len_pol=12, max_len_subj=14,
        emb_dim=12, hidden_size=8, tdfc_size=8, fc_size=6, repr_size=6,
        ntn_size=4, dropout=0.2, epochs=2, batch_size=16)
    for key, val in overrides.items():
        setattr(cfg, key, val)
    return cfg.validate()


class TestConfig:
    def test_round_trip_lossless(self):
        cfg = ExperimentConfig(seed=99, learning_rate=3e-4, dropout=0.25,
                               early_stop=True, out_dir="x/y")
        text = cfg.to_text()
        again = ExperimentConfig.from_text(text)
        assert again == cfg
        assert again.to_text() == text

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            ExperimentConfig.from_text("no_such_field = 3\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            ExperimentConfig.from_text("epochs = banana\n")

    def test_validation(self):
        cfg = ExperimentConfig(mode="nope")
        with pytest.raises(ConfigError):
            cfg.validate()
        cfg = ExperimentConfig(dropout=1.5)
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_flag_overrides_file(self, tmp_path, corpus):
        path = tmp_path / "c.cfg"
        cfg = small_config(corpus, tmp_path / "out", seed=5)
        path.write_text(cfg.to_text())
        from mtss.cli import build_parser, _build_config
        args = build_parser().parse_args(
            ["train", "--config", str(path), "--seed", "123",
             "--set", "epochs=7"])
        merged = _build_config(args)
        assert merged.seed == 123
        assert merged.epochs == 7
        assert merged.pol_pos_path == cfg.pol_pos_path


class TestPrepare:
    def test_manifest_sizes_and_idempotency(self, corpus, tmp_path):
        cfg = small_config(corpus, tmp_path / "out")
        experiment.prepare(cfg)
        pdir = experiment.prepared_dir(cfg)
        sizes = {}
        blobs = {}
        for split in ("train", "dev", "test"):
            name = f"pol.{split}.ids"
            blobs[name] = open(os.path.join(pdir, name), "rb").read()
            sizes[split] = len(blobs[name].splitlines())
        assert sizes == {"train": 144, "dev": 16, "test": 40}
        experiment.prepare(cfg)  # rerun, same seed
        for name, blob in blobs.items():
            assert open(os.path.join(pdir, name), "rb").read() == blob

    def test_splits_are_disjoint_and_exhaustive(self, corpus, tmp_path):
        cfg = small_config(corpus, tmp_path / "out")
        experiment.prepare(cfg)
        pdir = experiment.prepared_dir(cfg)
        all_ids = []
        for split in ("train", "dev", "test"):
            with open(os.path.join(pdir, f"subj.{split}.ids")) as fh:
                all_ids.extend(int(line) for line in fh)
        assert len(all_ids) == len(set(all_ids)) == 200

    def test_corrupted_cache_detected_and_regenerated(self, corpus,
                                                      tmp_path):
        cfg = small_config(corpus, tmp_path / "out")
        experiment.prepare(cfg)
        pdir = experiment.prepared_dir(cfg)
        cache = os.path.join(pdir, "pol.cache.npz")
        blob = bytearray(open(cache, "rb").read())
        blob[-1] ^= 0xFF
        open(cache, "wb").write(bytes(blob))
        warnings = []
        prepared = experiment.ensure_prepared(cfg, log=warnings.append)
        assert any("checksum" in w for w in warnings)
        assert prepared["pol"].splits["train"].size == 144

    def test_missing_corpus_is_a_data_error(self, tmp_path):
        cfg = ExperimentConfig(
            mode="single-pol", out_dir=str(tmp_path / "o"),
            pol_pos_path=str(tmp_path / "missing.pos"),
            pol_neg_path=str(tmp_path / "missing.neg"))
        with pytest.raises(DataFormatError):
            experiment.prepare(cfg)


@pytest.fixture(scope="module")
def run(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small_config(corpus, out)
    return cfg, experiment.run_training(cfg)


class TestTrainCommand:
    def test_metrics_schema_and_row_counts(self, run):
        cfg, out = run
        records = read_metrics_csv(out["metrics"])
        header = open(out["metrics"]).readline().strip()
        assert header == ",".join(CSV_COLUMNS)
        for task in ("pol", "subj"):
            for split in ("train", "dev"):
                rows = [r for r in records
                        if r.task == task and r.split == split]
                assert len(rows) == cfg.epochs
        assert all(np.isfinite(r.loss) and r.loss > 0 for r in records)

    def test_report_exists_with_test_metrics(self, run):
        _, out = run
        report = json.load(open(out["report"]))
        assert set(report["test"]) == {"pol", "subj"}
        assert "soft_targets" in report  # glove + mtl profile

    def test_eval_reproduces_training_printout_exactly(self, run):
        _, out = run
        stats, cfg, _ = experiment.evaluate_checkpoint(out["checkpoint"],
                                                       split="test")
        report = json.load(open(out["report"]))
        for task in ("pol", "subj"):
            assert stats[task]["accuracy"] == \
                report["test"][task]["accuracy"]

    def test_eval_twice_identical(self, run):
        _, out = run
        a, _, _ = experiment.evaluate_checkpoint(out["checkpoint"])
        b, _, _ = experiment.evaluate_checkpoint(out["checkpoint"])
        for task in ("pol", "subj"):
            assert a[task]["accuracy"] == b[task]["accuracy"]
            npt.assert_array_equal(a[task]["confusion"],
                                   b[task]["confusion"])

    def test_mtl_checkpoint_reports_both_tasks(self, run):
        _, out = run
        stats, _, _ = experiment.evaluate_checkpoint(out["checkpoint"])
        assert set(stats) == {"pol", "subj"}

    def test_single_task_csv_has_only_that_task(self, corpus, tmp_path):
        cfg = small_config(corpus, tmp_path / "single", mode="single-pol",
                           epochs=1)
        out = experiment.run_training(cfg)
        records = read_metrics_csv(out["metrics"])
        assert {r.task for r in records} == {"pol"}

    def test_out_dir_collision_gets_subdirectory(self, corpus, tmp_path):
        cfg = small_config(corpus, tmp_path / "dup", epochs=1)
        first = experiment.run_training(cfg)
        second = experiment.run_training(cfg)
        assert first["run_dir"] != second["run_dir"]
        assert os.path.exists(first["metrics"])
        assert os.path.exists(second["metrics"])


class TestCheckpointFormat:
    def _arrays(self, rng):
        return [("alpha", rng.normal(size=(3, 2)).astype(np.float32)),
                ("beta", rng.normal(size=4).astype(np.float32))]

    def test_round_trip_bit_exact_and_byte_stable(self, tmp_path, rng):
        tensors = self._arrays(rng)
        path = str(tmp_path / "a.mtsk")
        ckpt.save_checkpoint(path, tensors, "seed = 1\n",
                             {"meta": b"best_epoch=3"})
        loaded = ckpt.load_checkpoint(path)
        for (n0, a0), (n1, a1) in zip(tensors, loaded.tensors):
            assert n0 == n1
            npt.assert_array_equal(a0, a1)
        assert loaded.config_text == "seed = 1\n"
        path2 = str(tmp_path / "b.mtsk")
        ckpt.save_checkpoint(path2, loaded.tensors, loaded.config_text,
                             loaded.sections)
        assert open(path, "rb").read() == open(path2, "rb").read()

    def test_meta_section_round_trip(self):
        meta = {"best_epoch": "7", "epochs_run": "20"}
        assert ckpt.unpack_meta_section(ckpt.pack_meta_section(meta)) == meta

    def test_unknown_trailing_section_skipped_with_warning(self, tmp_path,
                                                           rng):
        path = str(tmp_path / "a.mtsk")
        ckpt.save_checkpoint(path, self._arrays(rng), "",
                             {"zzz_future": b"\x00" * 10})
        loaded = ckpt.load_checkpoint(path)
        assert any("zzz_future" in w for w in loaded.warnings)
        assert "zzz_future" not in loaded.sections

    def test_truncation_names_offset(self, tmp_path, rng):
        path = str(tmp_path / "a.mtsk")
        ckpt.save_checkpoint(path, self._arrays(rng), "cfg")
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:len(blob) // 2])
        with pytest.raises(DataFormatError, match="byte offset"):
            ckpt.load_checkpoint(path)

    def test_bad_magic_and_version(self, tmp_path, rng):
        path = str(tmp_path / "a.mtsk")
        ckpt.save_checkpoint(path, self._arrays(rng), "")
        blob = bytearray(open(path, "rb").read())
        blob[:4] = b"XXXX"
        open(path, "wb").write(bytes(blob))
        with pytest.raises(DataFormatError, match="magic"):
            ckpt.load_checkpoint(path)

    def test_mismatched_model_names_first_bad_tensor(self, corpus, tmp_path,
                                                     rng):
        cfg = small_config(corpus, tmp_path / "out", epochs=1)
        out = experiment.run_training(cfg)
        loaded = ckpt.load_checkpoint(out["checkpoint"])
        tensors = dict(loaded.tensors)
        tensors["pol.fc1.W"] = np.zeros((3, 3), dtype=np.float32)
        with pytest.raises(ConfigError, match="pol.fc1.W"):
            out["model"].load_state(tensors)
        tensors = dict(loaded.tensors)
        tensors["not.a.tensor"] = np.zeros(1, dtype=np.float32)
        with pytest.raises(ConfigError, match="not.a.tensor"):
            out["model"].load_state(tensors)

    def test_resume_without_optimizer_state_warns(self, corpus, tmp_path):
        cfg = small_config(corpus, tmp_path / "r1", epochs=1)
        first = experiment.run_training(cfg)
        cfg2 = small_config(corpus, tmp_path / "r2", epochs=1)
        warnings = []
        experiment.run_training(cfg2, resume=first["checkpoint"],
                                log=warnings.append)
        assert any("fresh Adam state" in w for w in warnings)

    def test_resume_with_optimizer_state(self, corpus, tmp_path):
        cfg = small_config(corpus, tmp_path / "r3", epochs=1,
                           save_optimizer=True)
        first = experiment.run_training(cfg)
        loaded = ckpt.load_checkpoint(first["checkpoint"])
        assert ckpt.SECTION_ADAM in loaded.sections
        state = ckpt.unpack_adam_section(loaded.sections[ckpt.SECTION_ADAM])
        assert int(state["t"][0]) > 0


class TestCliEntryPoints:
    def test_gradcheck_exit_zero(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "end_to_end_tiny" in out and "FAIL" not in out

    def test_gradcheck_detects_corrupted_backward(self):
        def bad_check():
            def f(x):
                out = x.data * 2.0

                def bw(g):
                    ad.acc_grad(x, g * 3.0)  # wrong rule on purpose

                doubled = ad.record("bad_double", (x,), out, bw)
                return ad.sum_all(doubled)

            t = ad.parameter(np.ones((2, 2), dtype=np.float64))
            return ad.grad_check(f, [t])

        rows = verification.run_suite(
            checks=[("corrupted", bad_check, 1e-5)])
        assert rows[0]["passed"] is False

    def test_numerical_failure_exits_three(self, monkeypatch):
        from mtss import cli as cli_mod
        monkeypatch.setattr(
            cli_mod.verification, "run_suite",
            lambda checks=None: [{"name": "broken", "max_rel_err": 1.0,
                                  "tol": 1e-5, "passed": False,
                                  "error": None}])
        assert main(["gradcheck"]) == 3

    def test_bad_config_exits_one(self, tmp_path):
        cfg_path = tmp_path / "bad.cfg"
        cfg_path.write_text("mode = warp\n")
        assert main(["train", "--config", str(cfg_path)]) == 1

    def test_missing_corpus_exits_two(self, tmp_path):
        cfg_path = tmp_path / "c.cfg"
        cfg = ExperimentConfig(mode="single-pol",
                               out_dir=str(tmp_path / "o"),
                               pol_pos_path=str(tmp_path / "nope.pos"),
                               pol_neg_path=str(tmp_path / "nope.neg"))
        cfg_path.write_text(cfg.to_text())
        assert main(["prepare", "--config", str(cfg_path)]) == 2

    def test_full_cli_train_eval_report_cycle(self, corpus, tmp_path,
                                              capsys):
        cfg = small_config(corpus, tmp_path / "cli", epochs=1)
        cfg_path = tmp_path / "cli.cfg"
        cfg_path.write_text(cfg.to_text())
        assert main(["prepare", "--config", str(cfg_path)]) == 0
        assert main(["train", "--config", str(cfg_path)]) == 0
        run_dir = str(tmp_path / "cli")
        assert main(["eval", "--checkpoint",
                     os.path.join(run_dir, "checkpoint.mtsk"),
                     "--json"]) == 0
        row = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert "pol_accuracy" in row and "subj_accuracy" in row
        assert main(["export-report", "--run", run_dir]) == 0
        curves = open(os.path.join(run_dir, "curves.csv")).read()
        assert curves.splitlines()[0] == \
            "epoch,task,train_loss,train_accuracy,dev_loss,dev_accuracy"
