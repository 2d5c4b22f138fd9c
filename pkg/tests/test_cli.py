import dataclasses

import numpy as np
import pytest

from lungseg.cli import (
    ConfigError,
    ReportParseError,
    RunConfig,
    cmd_report,
    load_config,
    main,
    parse_config_text,
    serialize_config,
)
from lungseg.datastore import read_volume
from lungseg.evaluation import f1_score, Confusion


class TestConfigRoundTrip:
    def test_defaults_round_trip_exactly(self):
        config = RunConfig()
        assert parse_config_text(serialize_config(config)) == config

    def test_non_default_values_round_trip(self):
        config = dataclasses.replace(
            RunConfig(),
            model="unet",
            deep_supervision=False,
            ds_weights=(1.0, 0.7, 0.5, 0.3, 0.1),
            learning_rate=0.001,
            epochs=3,
            channels="three",
            overlay_dir="overlays",
        )
        assert parse_config_text(serialize_config(config)) == config

    def test_serialized_form_is_canonical(self):
        config = RunConfig()
        text = serialize_config(config)
        assert serialize_config(parse_config_text(text)) == text

    def test_comments_and_blank_lines_ignored(self):
        config = parse_config_text("# comment\n\nmodel = unet\n  \nepochs = 2\n")
        assert config.model == "unet" and config.epochs == 2

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            parse_config_text("models = unet\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("epochs = 1\nepochs = 2\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("epochs = many\n")

    def test_invalid_combination_rejected(self):
        with pytest.raises(ConfigError, match="threshold"):
            parse_config_text("threshold = 1.5\n")
        with pytest.raises(ConfigError, match="model"):
            parse_config_text("model = segnet\n")

    def test_load_config_default_when_no_file(self):
        assert load_config(None) == RunConfig()


def _write_config(tmp_path, **overrides):
    values = dict(
        dataset_path=str(tmp_path / "data"),
        weights_path=str(tmp_path / "run.lseg"),
        report_path=str(tmp_path / "report.csv"),
        phantom_patients=5,
        phantom_slices=4,
        phantom_slice_size=64,
        phantom_radius_min=3.0,
        phantom_radius_max=7.0,
        phantom_tumor_probability=0.5,
        base_filters=4,
        epochs=1,
        batch_size=8,
        folds=5,
        tta_rotations=1,
        augment=False,
        seed=9,
    )
    values.update(overrides)
    config = dataclasses.replace(RunConfig(), **values)
    path = tmp_path / "run.cfg"
    path.write_text(serialize_config(config))
    return path, config


class TestPhantomCommand:
    def test_writes_readable_dataset(self, tmp_path, capsys):
        cfg_path, config = _write_config(tmp_path)
        assert main(["phantom", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "tumor_slices" in out
        volume = read_volume(tmp_path / "data" / "patient_000")
        assert volume.n_slices == 4
        assert volume.slice_size == 64

    def test_summary_counts_are_consistent(self, tmp_path, capsys):
        cfg_path, config = _write_config(tmp_path)
        main(["phantom", "--config", str(cfg_path)])
        values = capsys.readouterr().out.strip().splitlines()[-1].split()
        subjects, tumor, non_tumor, total = (int(v) for v in values)
        assert subjects == 5
        assert tumor + non_tumor == total == 20

    def test_rerun_same_seed_bit_identical(self, tmp_path):
        cfg_path, config = _write_config(tmp_path)
        main(["phantom", "--config", str(cfg_path)])
        first = (tmp_path / "data" / "patient_000" / "slices.raw").read_bytes()
        main(["phantom", "--config", str(cfg_path)])
        assert (tmp_path / "data" / "patient_000" / "slices.raw").read_bytes() == first

    def test_seed_override_changes_dataset(self, tmp_path):
        cfg_path, config = _write_config(tmp_path)
        main(["phantom", "--config", str(cfg_path)])
        first = (tmp_path / "data" / "patient_000" / "slices.raw").read_bytes()
        main(["phantom", "--config", str(cfg_path), "--seed", "10"])
        assert (tmp_path / "data" / "patient_000" / "slices.raw").read_bytes() != first

    def test_out_override(self, tmp_path):
        cfg_path, config = _write_config(tmp_path)
        main(["phantom", "--config", str(cfg_path), "--out", str(tmp_path / "other")])
        assert (tmp_path / "other" / "patient_000" / "manifest.txt").is_file()


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """One tiny phantom dataset with trained weights, shared across CLI tests."""
    tmp_path = tmp_path_factory.mktemp("clirun")
    cfg_path, config = _write_config(tmp_path)
    assert main(["phantom", "--config", str(cfg_path)]) == 0
    assert main(["train", "--config", str(cfg_path)]) == 0
    return tmp_path, cfg_path, config


class TestTrainCommand:
    def test_zero_epochs_keeps_initialization(self, tmp_path):
        cfg_path, config = _write_config(tmp_path, epochs=0)
        main(["phantom", "--config", str(cfg_path)])
        assert main(["train", "--config", str(cfg_path)]) == 0
        from lungseg.cli import _build_graph
        from lungseg.datastore import load_weights

        fresh = _build_graph(config)
        init = {k: v.copy() for k, v in fresh.named_arrays().items()}
        load_weights(config.weights_path, fresh)
        for name, arr in fresh.named_arrays().items():
            assert np.allclose(arr, init[name].astype(np.float32), atol=0), name
        log_lines = (tmp_path / "run.lseg.log").read_text().splitlines()
        assert log_lines == ["epoch,loss,train_dice"]

    def test_training_is_reproducible_bytewise(self, trained_run):
        tmp_path, cfg_path, config = trained_run
        first = (tmp_path / "run.lseg").read_bytes()
        assert main(["train", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "run.lseg").read_bytes() == first

    def test_log_has_one_row_per_epoch(self, trained_run):
        tmp_path, cfg_path, config = trained_run
        lines = (tmp_path / "run.lseg.log").read_text().splitlines()
        assert lines[0] == "epoch,loss,train_dice"
        assert len(lines) == 1 + config.epochs

    def test_missing_dataset_is_io_error(self, tmp_path):
        cfg_path, config = _write_config(tmp_path, dataset_path=str(tmp_path / "nope"))
        assert main(["train", "--config", str(cfg_path)]) == 2


class TestEvalCommand:
    def test_writes_csv_with_recomputable_footer(self, trained_run, capsys):
        tmp_path, cfg_path, config = trained_run
        assert main(["eval", "--config", str(cfg_path)]) == 0
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert lines[0] == "slice_id,dice"
        assert lines[-2] == "mean_dice,tp,fp,tn,fn,f1,rotations,threshold"
        mean_dice, tp, fp, tn, fn, f1, rotations, threshold = lines[-1].split(",")
        recomputed = f1_score(Confusion(int(tp), int(fp), int(tn), int(fn)))
        assert abs(float(f1) - recomputed) < 1e-6
        per_slice = [float(l.split(",")[1]) for l in lines[1:-2]]
        assert abs(float(mean_dice) - np.mean(per_slice)) < 1e-6
        assert int(tp) + int(fp) + int(tn) + int(fn) == len(per_slice)

    def test_rerun_is_byte_identical(self, trained_run):
        tmp_path, cfg_path, config = trained_run
        main(["eval", "--config", str(cfg_path)])
        first = (tmp_path / "report.csv").read_bytes()
        main(["eval", "--config", str(cfg_path)])
        assert (tmp_path / "report.csv").read_bytes() == first

    def test_weights_graph_mismatch_is_validation_error(self, trained_run, tmp_path):
        run_path, cfg_path, config = trained_run
        bad = dataclasses.replace(config, model="unet")
        bad_path = tmp_path / "bad.cfg"
        bad_path.write_text(serialize_config(bad))
        assert main(["eval", "--config", str(bad_path)]) == 1

    def test_overlays_emitted_when_configured(self, trained_run, tmp_path):
        run_path, cfg_path, config = trained_run
        overlay = dataclasses.replace(
            config,
            overlay_dir=str(tmp_path / "ovl"),
            report_path=str(tmp_path / "r.csv"),
        )
        path = tmp_path / "ovl.cfg"
        path.write_text(serialize_config(overlay))
        assert main(["eval", "--config", str(path)]) == 0
        pngs = list((tmp_path / "ovl").glob("*.png"))
        assert pngs, "expected overlay images"


class TestReportCommand:
    def _csv(self, tmp_path, name, mean_dice, f1="0.5"):
        text = (
            "slice_id,dice\n"
            "p0_s000,1.000000\n"
            "mean_dice,tp,fp,tn,fn,f1,rotations,threshold\n"
            f"{mean_dice},1,1,1,1,{f1},20,0.500000\n"
        )
        path = tmp_path / name
        path.write_text(text)
        return path

    def test_single_csv_single_row(self, tmp_path, capsys):
        path = self._csv(tmp_path, "a.csv", "0.750000")
        assert main(["report", str(path)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2
        assert "a.csv" in lines[1]

    def test_rows_sorted_by_mean_dice_descending(self, tmp_path, capsys):
        low = self._csv(tmp_path, "low.csv", "0.700000")
        high = self._csv(tmp_path, "high.csv", "0.800000")
        assert main(["report", str(low), str(high)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert "high.csv" in lines[1]
        assert "low.csv" in lines[2]

    def test_malformed_csv_is_named_parse_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,report\n")
        assert main(["report", str(bad)]) == 1
        assert "header" in capsys.readouterr().err

    def test_parse_error_type(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("slice_id,dice\nx,1.0\nmean_dice,tp,fp,tn,fn,f1,rotations,threshold\n1,2\n")
        with pytest.raises(ReportParseError):
            cmd_report([str(bad)])

    def test_missing_file_is_io_error(self, tmp_path):
        assert main(["report", str(tmp_path / "absent.csv")]) == 2


class TestExitCodes:
    def test_bad_flag_value(self, tmp_path):
        cfg_path, _ = _write_config(tmp_path)
        assert main(["phantom", "--config", str(cfg_path), "--seed", "-1"]) == 1

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 1

    def test_bad_config_file(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("nonsense == 3\n")
        assert main(["phantom", "--config", str(bad)]) == 1
