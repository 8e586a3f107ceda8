"""Harness: config parsing, training loop bookkeeping, ablation study, CLI."""

import os

import numpy as np
import pytest

from fuzzyseg.cli import main
from fuzzyseg.config import RunConfig, make_run_config, parse_config_file
from fuzzyseg.dataset import build_dataset, save_dataset, split_dataset
from fuzzyseg.errors import ConfigurationError
from fuzzyseg.phantoms import PhantomConfig
from fuzzyseg.train import evaluate_checkpoint, run_ablation, train_run


@pytest.fixture(scope="module")
def phantom_cfg():
    return PhantomConfig(size=16, blur_sigma=0.5, noise_sigma=0.02)


@pytest.fixture(scope="module")
def dataset(phantom_cfg):
    return build_dataset(phantom_cfg, 8, seed=0)


@pytest.fixture(scope="module")
def bare_dataset(phantom_cfg):
    return build_dataset(phantom_cfg, 8, seed=0, with_memberships=False)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory, phantom_cfg, dataset):
    root = tmp_path_factory.mktemp("data") / "phantoms"
    save_dataset(root, dataset, phantom_cfg)
    return str(root)


def run_cfg(out_dir, **kw):
    base = dict(depth=2, base_channels=4, epochs=2, batch_size=4,
                learning_rate=1e-3, split_fraction=0.75, seed=0,
                out_dir=str(out_dir))
    base.update(kw)
    return RunConfig(**base)


class TestConfigFiles:
    def test_parse_skips_comments_and_blanks(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# a comment\n\nepochs = 7\nmodel = unetpp\n")
        assert parse_config_file(path) == {"epochs": "7", "model": "unetpp"}

    def test_unknown_key_reports_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs = 7\nlerning_rate = 0.1\n")
        with pytest.raises(ConfigurationError, match=":2"):
            parse_config_file(path)

    def test_missing_equals_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs 7\n")
        with pytest.raises(ConfigurationError):
            parse_config_file(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs = seven\n")
        with pytest.raises(ConfigurationError, match="seven"):
            make_run_config(path)

    def test_bool_spellings(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("model = unetpp\ndeep_supervision = yes\noverfit = off\n")
        cfg = make_run_config(path)
        assert cfg.deep_supervision is True
        assert cfg.overfit is False

    def test_override_precedence(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs = 5\nseed = 3\n")
        cfg = make_run_config(path, {"epochs": 9, "seed": None})
        assert cfg.epochs == 9  # flag beats file
        assert cfg.seed == 3  # None means "flag not passed"

    def test_to_text_roundtrip(self, tmp_path):
        original = RunConfig(model="unetpp", deep_supervision=True, epochs=4,
                             entropy_weight=0.25)
        path = tmp_path / "run.cfg"
        path.write_text(original.to_text())
        assert make_run_config(path) == original

    def test_validate_deep_supervision_needs_unetpp(self):
        with pytest.raises(ConfigurationError, match="unetpp"):
            RunConfig(model="unet", deep_supervision=True).validate()

    def test_validate_rejects_unknown_loss(self):
        with pytest.raises(ConfigurationError):
            RunConfig(loss="hinge").validate()

    def test_validate_rejects_full_split(self):
        with pytest.raises(ConfigurationError):
            RunConfig(split_fraction=1.0).validate()


class TestTrainRun:
    def test_missing_membership_cache_fails_before_training(self, tmp_path,
                                                            bare_dataset):
        cfg = run_cfg(tmp_path / "out", loss="fcce",
                      membership_source="fcm_fixed")
        with pytest.raises(ConfigurationError, match="membership"):
            train_run(cfg, bare_dataset, render_figures=False)
        assert not (tmp_path / "out" / "metrics.csv").exists()

    def test_epoch_bookkeeping(self, tmp_path, dataset):
        cfg = run_cfg(tmp_path / "out")
        outcome = train_run(cfg, dataset, render_figures=False)
        assert len(outcome.records) == 2
        assert outcome.best_record is outcome.records[outcome.best_epoch - 1]
        lines = open(outcome.csv_path).read().splitlines()
        assert lines[0].startswith("epoch,loss,AC,DC,IoU,AC_val,DC_val,IoU_val")
        assert len(lines) == 3
        assert len(lines[1].split(",")) == 8 + 2 * 4  # base + per-class val
        assert os.path.exists(outcome.checkpoint_path)
        assert os.path.exists(os.path.join(cfg.out_dir, "config.txt"))
        assert np.isfinite(outcome.records[0].loss)

    def test_reruns_are_byte_identical(self, tmp_path, dataset):
        paths = []
        for name in ("a", "b"):
            cfg = run_cfg(tmp_path / name)
            outcome = train_run(cfg, dataset, render_figures=False)
            paths.append(outcome)
        assert open(paths[0].csv_path, "rb").read() == \
            open(paths[1].csv_path, "rb").read()
        assert open(paths[0].checkpoint_path, "rb").read() == \
            open(paths[1].checkpoint_path, "rb").read()

    def test_eval_matches_training_val_metrics(self, tmp_path, dataset):
        cfg = run_cfg(tmp_path / "out", epochs=3)
        outcome = train_run(cfg, dataset, render_figures=False)
        _, val_set = split_dataset(dataset, cfg.split_fraction, cfg.seed)
        result = evaluate_checkpoint(outcome.checkpoint_path, val_set)
        best = outcome.best_record
        assert result.ac == best.ac_val
        assert result.dc == best.dc_val
        assert result.iou == best.iou_val

    def test_eval_writes_predictions(self, tmp_path, dataset):
        cfg = run_cfg(tmp_path / "out", epochs=1)
        outcome = train_run(cfg, dataset, render_figures=False)
        out = tmp_path / "preds"
        result = evaluate_checkpoint(outcome.checkpoint_path, dataset,
                                     out_dir=str(out), render_figures=False)
        assert result.predictions.shape == dataset.labels.shape
        assert (out / "pred_0007.pgm").exists()

    def test_zero_entropy_weight_reproduces_plain_loss(self, tmp_path, dataset):
        plain = train_run(run_cfg(tmp_path / "cce", loss="cce"),
                          dataset, render_figures=False)
        fuzzy = train_run(run_cfg(tmp_path / "fcce", loss="fcce",
                                  membership_source="prediction",
                                  entropy_weight=0.0),
                          dataset, render_figures=False)
        assert open(plain.csv_path, "rb").read() == \
            open(fuzzy.csv_path, "rb").read()

    def test_early_stopping_on_stalled_validation(self, tmp_path, dataset):
        # learning rate too small to move the metrics: first epoch sets the
        # best, the second fails to beat it, patience 1 stops the run
        cfg = run_cfg(tmp_path / "out", epochs=10, learning_rate=1e-9,
                      early_stopping_patience=1)
        outcome = train_run(cfg, dataset, render_figures=False)
        assert outcome.stopped_early
        assert len(outcome.records) == 2
        assert outcome.best_epoch == 1

    def test_overfit_mode_ignores_patience(self, tmp_path, dataset):
        cfg = run_cfg(tmp_path / "out", epochs=3, learning_rate=1e-9,
                      early_stopping_patience=1, overfit=True)
        outcome = train_run(cfg, dataset, render_figures=False)
        assert not outcome.stopped_early
        assert len(outcome.records) == 3

    @pytest.mark.parametrize("kw", [
        dict(loss="fcce", membership_source="fcm_fixed", entropy_weight=0.3),
        dict(loss="fcce", membership_source="blend", blend_beta=0.4,
             entropy_weight=0.3),
        dict(loss="dsv"),
        dict(model="unetpp", deep_supervision=True),
    ])
    def test_loss_variants_train(self, tmp_path, dataset, kw):
        cfg = run_cfg(tmp_path / "out", epochs=1, **kw)
        outcome = train_run(cfg, dataset, render_figures=False)
        assert np.isfinite(outcome.records[0].loss)

    def test_class_count_mismatch(self, tmp_path, dataset):
        cfg = run_cfg(tmp_path / "out", num_classes=3)
        with pytest.raises(ConfigurationError, match="classes"):
            train_run(cfg, dataset, render_figures=False)


class TestAblation:
    def test_minimal_study(self, tmp_path, dataset):
        cfg = run_cfg(tmp_path / "study", epochs=1)
        result = run_ablation(cfg, [0, 1, 2], dataset,
                              entropy_weights=(0.1,), render_figures=False)
        assert result.seeds_compared == 3
        assert 0 <= result.wins <= 3
        assert set(result.best_weight_by_seed.values()) == {0.1}
        lines = open(result.csv_path).read().splitlines()
        assert lines[0] == ("seed,arm,entropy_weight,best_epoch,"
                            "AC,DC,IoU,AC_val,DC_val,IoU_val")
        assert len(lines) == 1 + 6  # 3 cce + 3 fcce arms
        assert (tmp_path / "study" / "summary.txt").exists()

    def test_threaded_study_matches_serial(self, tmp_path, dataset):
        results = {}
        for threads in (1, 2):
            cfg = run_cfg(tmp_path / f"t{threads}", epochs=1)
            results[threads] = run_ablation(cfg, [0, 1, 2], dataset,
                                            entropy_weights=(0.1,),
                                            threads=threads,
                                            render_figures=False)
        assert open(results[1].csv_path, "rb").read() == \
            open(results[2].csv_path, "rb").read()

    def test_too_few_seeds(self, tmp_path, dataset):
        cfg = run_cfg(tmp_path / "study")
        with pytest.raises(ConfigurationError, match="3 seeds"):
            run_ablation(cfg, [0, 1], dataset, render_figures=False)


class TestCli:
    def test_gen_data_and_fcm(self, tmp_path, capsys):
        data = tmp_path / "data"
        rc = main(["gen-data", "--out", str(data), "--count", "3",
                   "--size", "16", "--seed", "1", "--no-figures"])
        assert rc == 0
        assert (data / "manifest.txt").exists()
        assert (data / "mem_0002.bin").exists()
        out = tmp_path / "fcm"
        rc = main(["fcm", "--image", str(data / "img_0000.pgm"),
                   "--out", str(out)])
        assert rc == 0
        captured = capsys.readouterr().out.splitlines()
        trace_start = captured.index("iter,objective")
        assert float(captured[trace_start + 1].split(",")[1]) > 0
        assert (out / "memberships.bin").exists()
        assert (out / "labels.pgm").exists()

    def test_train_then_eval(self, tmp_path, data_dir, capsys):
        out = tmp_path / "run"
        rc = main(["train", "--data", data_dir, "--out", str(out),
                   "--epochs", "1", "--depth", "2", "--base-channels", "4",
                   "--split", "0.75", "--batch-size", "4"])
        assert rc == 0
        assert (out / "metrics.csv").exists()
        assert (out / "curves.png").exists()
        eval_out = tmp_path / "scored"
        rc = main(["eval", "--ckpt", str(out / "best.ckpt"),
                   "--data", data_dir, "--out", str(eval_out)])
        assert rc == 0
        assert (eval_out / "pred_0000.pgm").exists()
        assert "DC" in capsys.readouterr().out

    def test_gradcheck_smoke(self, capsys):
        assert main(["gradcheck", "--instances", "1"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "mode,max_rel_err"
        assert all(float(line.split(",")[1]) < 1e-4 for line in out[1:])

    def test_config_error_exits_2(self, tmp_path, data_dir):
        bad = tmp_path / "bad.cfg"
        bad.write_text("not_a_setting = 1\n")
        rc = main(["train", "--data", data_dir, "--out", str(tmp_path / "o"),
                   "--config", str(bad)])
        assert rc == 2

    def test_missing_checkpoint_exits_2(self, tmp_path, data_dir):
        rc = main(["eval", "--ckpt", str(tmp_path / "none.ckpt"),
                   "--data", data_dir, "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_degenerate_clustering_exits_3(self, tmp_path):
        from fuzzyseg.pgm import save_labels_pgm
        flat = tmp_path / "flat.pgm"
        save_labels_pgm(flat, np.full((16, 16), 128, dtype=np.int64))
        rc = main(["fcm", "--image", str(flat), "--out", str(tmp_path / "o"),
                   "--clusters", "3"])
        assert rc == 3

    def test_bad_thread_env_exits_2(self, tmp_path, data_dir, monkeypatch):
        monkeypatch.setenv("FUZZYSEG_THREADS", "zero")
        rc = main(["ablate", "--data", data_dir, "--out", str(tmp_path / "o"),
                   "--seeds", "0,1,2", "--epochs", "1"])
        assert rc == 2
