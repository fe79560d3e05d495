import filecmp
import json
from pathlib import Path

from kerneltower.cli import main


def write_config(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


EX25_YAML = """\
model:
  kind: word-tree
  m: 2
  r: 0.5
  c: 0.5
  eta: 1.0
base_points: ["", "1", "2"]
horizon: 6
seed: 42
nsamples: 20000
max_levels: 10
"""


def read_summary(outdir):
    return json.loads((Path(outdir) / "summary.json").read_text())


def assert_dirs_byte_identical(a, b):
    cmp = filecmp.dircmp(a, b)
    assert not cmp.left_only and not cmp.right_only
    match, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    assert not mismatch and not errors


def test_tower_command(tmp_path, capsys):
    cfg = write_config(tmp_path, EX25_YAML)
    out = tmp_path / "out"
    assert main(["tower", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    summary = read_summary(out)
    results = summary["results"]
    assert results["subinvariance"]["defect_psd"] is True
    assert results["word_expansion"]["max_abs_residual"] <= 1e-12
    assert results["completion"]["bound_label"] == "certified"
    assert (out / "gram_level_00.csv").exists()
    assert (out / "gram_defect_05.csv").exists()
    assert (out / "config_resolved.yaml").exists()


def test_tower_bundle_determinism(tmp_path, capsys):
    cfg = write_config(tmp_path, EX25_YAML)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["tower", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["tower", "--config", cfg, "--out", str(out2)]) == 0
    capsys.readouterr()
    assert_dirs_byte_identical(out1, out2)


def test_diagonal_command(tmp_path, capsys):
    cfg = write_config(tmp_path, EX25_YAML)
    out = tmp_path / "out"
    assert main(["diagonal", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    summary = read_summary(out)
    assert summary["results"]["traces"]["<>"]["verdict"] == "converging"
    assert summary["results"]["layer_cake"]["max_rel_residual"] <= 1e-12
    lines = (out / "diagonal_traces.csv").read_text().splitlines()
    assert lines[0] == "point,level,u_n"
    assert len(lines) == 1 + 3 * 7  # three points, levels 0..6


def test_diagonal_blowup_search(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        "model:\n  kind: delta\nbase_points: [\"\"]\nhorizon: 6\ncertificate: none\n",
    )
    out = tmp_path / "out"
    assert main(["diagonal", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    summary = read_summary(out)
    assert summary["results"]["traces"]["<>"]["verdict"] == "diverging"
    assert summary["results"]["blowup_witness"]["valid"] is True


def test_gaussian_command(tmp_path, capsys):
    cfg = write_config(tmp_path, EX25_YAML)
    out = tmp_path / "out"
    assert main(["gaussian", "--config", cfg, "--max-level", "3", "--out", str(out)]) == 0
    capsys.readouterr()
    summary = read_summary(out)
    assert summary["results"]["generator"] == "philox4x64-10"
    assert summary["results"]["martingale"]["passed"] is True
    assert summary["results"]["top_level_max_z"] <= 5.0


def test_gaussian_sample_export(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        "model:\n  kind: feeder\nhorizon: 2\nseed: 3\nnsamples: 50\n"
        "gaussian:\n  export_samples: true\n",
    )
    out = tmp_path / "out"
    assert main(["gaussian", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    lines = (out / "samples.csv").read_text().splitlines()
    assert lines[0] == "seed,sample,level,point_label,value"
    assert len(lines) == 1 + 50 * 3 * 2  # samples x levels x base points


def test_gaussian_requires_seed(tmp_path, capsys):
    cfg = write_config(
        tmp_path, "model:\n  kind: word-tree\nbase_points: [\"\"]\nhorizon: 3\n"
    )
    code = main(["gaussian", "--config", cfg, "--out", str(tmp_path / "out")])
    captured = capsys.readouterr()
    assert code == 2
    assert "seed" in captured.err


def test_boundary_command(tmp_path, capsys):
    cfg = write_config(tmp_path, EX25_YAML + "boundary:\n  cylinder_levels: 8\n  feature_levels: 6\n")
    out = tmp_path / "out"
    assert main(["boundary", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    summary = read_summary(out)
    res = summary["results"]
    assert res["cylinders"]["max_level_sum_error"] <= 1e-12
    assert res["boundary_gram"]["residual"] <= 1e-10
    assert res["boundary_gram"]["nu_invariance"] <= 1e-12
    assert (out / "cylinders.csv").exists()


def test_delta_tower_exits_with_model_code(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        "model:\n  kind: delta\nbase_points: [\"\"]\nhorizon: 4\nceiling: 1.0e4\n"
        "max_levels: 30\ncertificate: none\n",
    )
    code = main(["tower", "--config", cfg, "--out", str(tmp_path / "out")])
    captured = capsys.readouterr()
    assert code == 3
    assert "error[model]" in captured.err
    assert "ceiling" in captured.err


def test_missing_config_is_input_error(tmp_path, capsys):
    code = main(["tower", "--out", str(tmp_path / "out")])
    captured = capsys.readouterr()
    assert code == 2
    assert "error[input]" in captured.err


def test_nonexistent_config_file(tmp_path, capsys):
    code = main(["tower", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")])
    capsys.readouterr()
    assert code == 2


def test_bad_tol_flag(tmp_path, capsys):
    cfg = write_config(tmp_path, EX25_YAML)
    code = main(["tower", "--config", cfg, "--tol", "-1", "--out", str(tmp_path / "o")])
    capsys.readouterr()
    assert code == 2


def test_resource_cap_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, EX25_YAML + "pair_cap: 100\nhorizon: 12\n")
    code = main(["tower", "--config", cfg, "--out", str(tmp_path / "o")])
    captured = capsys.readouterr()
    assert code == 5
    assert "error[resource]" in captured.err


def test_format_flag_csv_only(tmp_path, capsys):
    cfg = write_config(tmp_path, EX25_YAML)
    out = tmp_path / "out"
    assert main(["diagonal", "--config", cfg, "--format", "csv", "--out", str(out)]) == 0
    capsys.readouterr()
    assert (out / "diagonal_traces.csv").exists()
    assert not (out / "summary.json").exists()
    assert (out / "config_resolved.yaml").exists()


def test_feeder_tower_converges(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        "model:\n  kind: feeder\nhorizon: 4\nmax_levels: 10\n",
    )
    out = tmp_path / "out"
    assert main(["tower", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    summary = read_summary(out)
    assert summary["results"]["completion"]["converged_by_trace"] is True


def test_verify_fault_injection_exit_and_naming(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        "model:\n  kind: word-tree\nseed: 20250809\nnsamples: 2000\n"
        "fault_injection:\n  check: telescoping\n  delta: 1.0e-3\n",
    )
    out = tmp_path / "out"
    code = main(["verify", "--config", cfg, "--out", str(out)])
    captured = capsys.readouterr()
    assert code == 4
    assert "telescoping" in captured.err
    summary = read_summary(out)
    assert summary["results"]["checks"]["telescoping-identity"]["passed"] is False
    assert summary["results"]["all_passed"] is False


def test_threads_flag_matches_serial(tmp_path, capsys):
    cfg = write_config(tmp_path, EX25_YAML)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["tower", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["tower", "--config", cfg, "--threads", "4", "--out", str(out2)]) == 0
    capsys.readouterr()
    assert_dirs_byte_identical(out1, out2)
