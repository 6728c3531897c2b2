import csv
import json

import numpy as np
import pytest

from robustprune.checkpoints import Checkpoint, load_checkpoint, save_checkpoint
from robustprune.cli import main as cli_main
from robustprune.errors import ConfigError, FormatError
from robustprune.pipeline import (
    REPORT_COLUMNS,
    PipelineConfig,
    run_pipeline,
    run_sweep,
    write_report,
)

FAST = {
    "dataset": {"kind": "digits", "image_size": 8},
    "epochs": {"pretrain": 1, "prune": 1, "finetune": 1},
    "batch_size": 256,
    "ratio": 90.0,
    "metrics": ["benign"],
}


def fast_config(tmp_path, **overrides):
    d = dict(FAST, output_dir=str(tmp_path / "out"))
    d.update(overrides)
    return PipelineConfig.from_dict(d)


# --- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    ckpt = Checkpoint(
        architecture="mlp-2x256", stage="prune",
        theta={"layer01.W": rng.normal(size=(4, 3)), "layer01.b": rng.normal(size=4)},
        scores={"layer01": rng.normal(size=(4, 3))},
        mask={"layer01": (rng.uniform(size=(4, 3)) > 0.5).astype(np.float64)},
        seeds={"weights": 1, "data": 2, "attack": 3},
        config_digest="abc123",
    )
    path = tmp_path / "x.ckpt"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    assert back.architecture == "mlp-2x256"
    assert back.stage == "prune"
    assert back.seeds == {"weights": 1, "data": 2, "attack": 3}
    assert back.config_digest == "abc123"
    for group in ("theta", "scores", "mask"):
        a, b = getattr(ckpt, group), getattr(back, group)
        assert set(a) == set(b)
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()


def test_checkpoint_truncation_reports_offset(tmp_path):
    ckpt = Checkpoint("mlp-2x256", "pretrain", {"layer01.W": np.ones((2, 2))})
    path = tmp_path / "x.ckpt"
    save_checkpoint(ckpt, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(FormatError, match="byte"):
        load_checkpoint(path)


def test_checkpoint_bad_magic_and_trailing(tmp_path):
    ckpt = Checkpoint("mlp-2x256", "pretrain", {"layer01.W": np.ones((2, 2))})
    path = tmp_path / "x.ckpt"
    save_checkpoint(ckpt, path)
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(raw + b"\x00" * 4)
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(path)


def test_foreign_digest_warns_not_errors(tmp_path):
    ckpt = Checkpoint("mlp-2x256", "pretrain", {"layer01.W": np.ones((2, 2))},
                      config_digest="deadbeef" * 8)
    path = tmp_path / "x.ckpt"
    save_checkpoint(ckpt, path)
    with pytest.warns(UserWarning, match="digest"):
        back = load_checkpoint(path, expected_digest="feedface" * 8)
    assert back.config_digest == "deadbeef" * 8


# --- config -------------------------------------------------------------------

def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys"):
        PipelineConfig.from_dict({"architeture": "mlp-2x256"})


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"architecture": "resnet"})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"ratio": 100.0})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"objectives": {"prune": "fancy"}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"metrics": ["era", "fancy"]})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"stop_after": "deploy"})


def test_digest_excludes_output_dir_and_parallel():
    a = PipelineConfig.from_dict({"output_dir": "x"})
    b = PipelineConfig.from_dict({"output_dir": "y", "parallel_eval": True})
    c = PipelineConfig.from_dict({"ratio": 50.0})
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
    assert a.run_id == b.run_id


def test_config_file_round_trip(tmp_path):
    cfg = PipelineConfig.from_dict({"ratio": 95.0, "batch_size": 64})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = PipelineConfig.from_file(path)
    assert back.digest() == cfg.digest()
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        PipelineConfig.from_file(bad)


# --- reports ------------------------------------------------------------------

def test_report_csv_columns_and_empty_cells(tmp_path):
    rows = [{"run_id": "b", "architecture": "mlp-2x256", "dataset": "digits",
             "p": 99.0, "stage_objectives": "benign+benign+benign", "seed": 1,
             "benign_acc": 0.9, "era": None, "vra_t": None, "vra_s": None,
             "params_total": 10, "params_kept": 1, "wall_seconds": 1.5},
            {"run_id": "a", "architecture": "mlp-2x256", "dataset": "digits",
             "p": 90.0, "stage_objectives": "benign+benign+benign", "seed": 0,
             "benign_acc": 0.95, "era": 0.5, "vra_t": None, "vra_s": None,
             "params_total": 10, "params_kept": 2, "wall_seconds": 2.0}]
    csv_path, json_path = write_report(rows, tmp_path)
    with open(csv_path) as f:
        lines = list(csv.reader(f))
    assert lines[0] == REPORT_COLUMNS
    assert lines[1][0] == "a"  # sorted by run_id
    assert lines[2][0] == "b"
    assert lines[2][7] == ""   # None era becomes an empty cell
    payload = json.loads(json_path.read_text())
    assert len(payload["rows"]) == 2


def test_report_header_only_when_empty(tmp_path):
    csv_path, _ = write_report([], tmp_path)
    lines = csv_path.read_text().strip().splitlines()
    assert len(lines) == 1
    assert lines[0].split(",") == REPORT_COLUMNS


# --- pipeline runs --------------------------------------------------------------

def test_pipeline_smoke_and_row_fields(tmp_path):
    cfg = fast_config(tmp_path)
    result = run_pipeline(cfg)
    row = result.row
    assert set(REPORT_COLUMNS) <= set(row)
    assert row["p"] == 90.0
    assert 0.0 <= row["benign_acc"] <= 1.0
    assert row["params_kept"] < row["params_total"]
    assert row["era"] is None
    assert (tmp_path / "out" / "report.csv").exists()
    for stage in ("pretrain", "prune", "finetune"):
        assert stage in result.checkpoint_paths
        assert load_checkpoint(result.checkpoint_paths[stage]).stage == stage


def test_pipeline_mask_sparsity_in_row(tmp_path):
    cfg = fast_config(tmp_path)
    result = run_pipeline(cfg)
    kept = sum(int(m.sum()) for m in result.mask.masks.values())
    pruned = sum(m.size for m in result.mask.masks.values()) - kept
    assert result.row["params_kept"] == result.row["params_total"] - pruned
    for i, m in result.mask.masks.items():
        w = result.net.layers[i].W.array
        assert float(np.abs(w * (1.0 - m)).sum()) == 0.0


def test_stage_resume_reuses_pretrain(tmp_path):
    pre = fast_config(tmp_path, stop_after="pretrain",
                      output_dir=str(tmp_path / "pre"))
    pre_result = run_pipeline(pre)
    assert list(pre_result.checkpoint_paths) == ["pretrain"]

    full = fast_config(tmp_path, output_dir=str(tmp_path / "full"),
                       start_checkpoint=pre_result.checkpoint_paths["pretrain"])
    with pytest.warns(UserWarning):
        result = run_pipeline(full)
    # the pretrain stage was skipped, later stages ran
    assert "pretrain" not in result.traces
    assert "prune" in result.traces and "finetune" in result.traces


def test_stage_isolation_prune_checkpoint(tmp_path):
    # resuming from the prune checkpoint must not re-run pruning:
    # the final mask equals the stored one exactly
    cfg = fast_config(tmp_path, stop_after="prune", output_dir=str(tmp_path / "p"))
    pruned = run_pipeline(cfg)
    stored = load_checkpoint(pruned.checkpoint_paths["prune"])

    resume = fast_config(tmp_path, output_dir=str(tmp_path / "f"),
                         start_checkpoint=pruned.checkpoint_paths["prune"])
    with pytest.warns(UserWarning):
        result = run_pipeline(resume)
    assert "prune" not in result.traces and "finetune" in result.traces
    for key, m in stored.mask.items():
        i = int(key.replace("layer", ""))
        np.testing.assert_array_equal(result.mask.masks[i], m)


def test_pipeline_identity_when_nothing_runs(tmp_path):
    cfg = fast_config(tmp_path, epochs={"pretrain": 0, "prune": 0, "finetune": 0},
                      ratio=0.0)
    result = run_pipeline(cfg, write_outputs=False)
    # ratio 0 keeps every weight
    assert result.row["params_kept"] == result.row["params_total"]


def test_sweep_row_count_and_files(tmp_path):
    base = fast_config(tmp_path, output_dir=str(tmp_path / "sweep"))
    rows = run_sweep(base, "ratio", [50.0, 90.0], seeds=[0, 1])
    assert len(rows) == 4
    assert {(r["axis"], r["value"], r["seed"]) for r in rows} == {
        ("ratio", 50.0, 0), ("ratio", 90.0, 0), ("ratio", 50.0, 1), ("ratio", 90.0, 1)}
    sweep_csv = tmp_path / "sweep" / "sweep.csv"
    lines = sweep_csv.read_text().strip().splitlines()
    assert len(lines) == 5
    assert lines[0].split(",")[:2] == ["axis", "value"]
    with pytest.raises(ConfigError):
        run_sweep(base, "nonsense", [1], [0])
    with pytest.raises(ConfigError):
        run_sweep(base, "ratio", [], [0])


def test_time_limit_aborts_gracefully(tmp_path):
    cfg = fast_config(tmp_path, time_limit=0.0,
                      epochs={"pretrain": 3, "prune": 1, "finetune": 1})
    result = run_pipeline(cfg, write_outputs=False)
    assert result.row.get("aborted") is True
    assert len(result.traces.get("pretrain", [])) <= 1


# --- CLI ------------------------------------------------------------------------

def cli(args):
    return cli_main(args)


def test_cli_run_success(tmp_path, capsys):
    out = str(tmp_path / "cli")
    code = cli(["run", "--arch", "mlp-2x256", "--ratio", "90",
                "--dataset", '{"kind":"digits","image_size":8}',
                "--epochs-pretrain", "1", "--epochs-prune", "1",
                "--epochs-finetune", "1", "--metrics", "benign",
                "--batch-size", "256", "--out", out])
    assert code == 0
    row = json.loads(capsys.readouterr().out)
    assert row["p"] == 90.0


def test_cli_config_error_is_exit_2(tmp_path, capsys):
    assert cli(["run", "--arch", "resnet"]) == 2
    assert "config error" in capsys.readouterr().err
    assert cli(["eval", "--arch", "mlp-2x256"]) == 2
    assert cli(["run", "--dataset", "{oops"]) == 2


def test_cli_io_error_is_exit_3(tmp_path, capsys):
    assert cli(["eval", "--start-checkpoint", str(tmp_path / "missing.ckpt"),
                "--metrics", "benign",
                "--dataset", '{"kind":"digits","image_size":8}']) == 3
    assert "i/o error" in capsys.readouterr().err


def test_cli_pretrain_stops_after_pretrain(tmp_path):
    out = str(tmp_path / "pre")
    code = cli(["pretrain", "--arch", "mlp-2x256",
                "--dataset", '{"kind":"digits","image_size":8}',
                "--epochs-pretrain", "1", "--metrics", "benign",
                "--batch-size", "256", "--out", out])
    assert code == 0
    ckpts = list((tmp_path / "pre" / "checkpoints").glob("*.ckpt"))
    assert [p.name for p in ckpts] == ["pretrain.ckpt"]
