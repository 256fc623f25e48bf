"""CLI subcommands, exit codes, and file formats."""

import json

import numpy as np
import pytest

from cnnkr.cli import main, read_tensor_file, write_tensor_file
from cnnkr.decomposition import random_tucker


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestVerifyLinearization:
    def test_default_scale_passes(self, capsys):
        code, out, _ = run(
            ["verify-linearization", "--trials", "40", "--seed", "1"], capsys
        )
        assert code == 0
        assert "max relative deviation" in out

    def test_zero_trials(self, capsys):
        code, out, _ = run(["verify-linearization", "--trials", "0"], capsys)
        assert code == 0
        assert "checks run: 0" in out

    def test_impossible_tolerance_fails(self, capsys):
        code, out, _ = run(
            ["verify-linearization", "--trials", "8", "--tol", "0"], capsys
        )
        assert code == 1
        assert "FAIL" in out

    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["verify-linearization", "--bogus"])
        assert exc.value.code == 2


class TestComplexityCommand:
    def test_uncompressed_s1(self, capsys):
        code, out, _ = run(
            ["complexity", "--K", "1", "--P", "8", "--L", "8"], capsys
        )
        assert code == 0
        assert "naive parameter count: 16" in out
        assert "sample complexity:     17" in out

    def test_tucker_example(self, capsys):
        code, out, _ = run(
            [
                "complexity", "--tucker", "2,2:4", "--l", "3,3",
                "--P", "16", "--K", "8",
            ],
            capsys,
        )
        assert code == 0
        assert "188" in out
        assert "92" in out
        assert "discrepancy:                      96" in out

    def test_k_equals_r_no_redundancy(self, capsys):
        code, out, _ = run(
            [
                "complexity", "--tucker", "2,2:4", "--l", "3,3",
                "--P", "16", "--K", "4",
            ],
            capsys,
        )
        assert code == 0
        assert "no_redundancy" in out
        # at K == R the gap collapses to R^2
        assert "discrepancy:                      16" in out

    def test_missing_l_usage_error(self, capsys):
        code, _, err = run(["complexity", "--K", "1", "--P", "8"], capsys)
        assert code == 2
        assert "error" in err


class TestAuditBlocks:
    def test_resnet_style_file(self, tmp_path, capsys):
        spec = tmp_path / "net.spec"
        spec.write_text(
            "# three ResNet-style groups\n"
            "bottleneck C=64 R=64 K=256 k=3x3\n"
            "bottleneck C=256 R=128 K=512 k=3x3\n"
        )
        code, out, _ = run(["audit-blocks", str(spec)], capsys)
        assert code == 0
        lines = out.strip().split("\n")
        assert lines[0].startswith("block_index")
        assert ",4," in lines[1]  # K/R = 4
        assert "possible_redundancy" in lines[1]

    def test_threshold_flag(self, tmp_path, capsys):
        spec = tmp_path / "net.spec"
        spec.write_text("bottleneck C=64 R=64 K=256 k=3x3\n")
        code, out, _ = run(
            ["audit-blocks", str(spec), "--threshold", "2"], capsys
        )
        assert code == 0
        assert "has_redundancy" in out

    def test_empty_file_header_only(self, tmp_path, capsys):
        spec = tmp_path / "empty.spec"
        spec.write_text("")
        code, out, _ = run(["audit-blocks", str(spec)], capsys)
        assert code == 0
        assert out.strip() == (
            "block_index,kind,C,R,K,kr_ratio,d_naive,d_M,discrepancy,classification"
        )

    def test_malformed_line_exits_2(self, tmp_path, capsys):
        spec = tmp_path / "bad.spec"
        spec.write_text("funnel C=64 R=64 K=64 k=3x3\nwhat is this\n")
        code, _, err = run(["audit-blocks", str(spec)], capsys)
        assert code == 2
        assert "line 2" in err

    def test_missing_file_exits_2(self, capsys):
        code, _, err = run(["audit-blocks", "/nonexistent/file.spec"], capsys)
        assert code == 2


class TestRunExperiment:
    def config(self, tmp_path, **extra):
        cfg = {
            "study": "uncompressed",
            "setting": "S1",
            "replications": 2,
            "n_grid": [50, 120],
            "seed": 3,
        }
        cfg.update(extra)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        return path

    def test_artifacts_written(self, tmp_path, capsys):
        cfg = self.config(tmp_path)
        out_dir = tmp_path / "out"
        code, out, _ = run(
            ["run-experiment", str(cfg), "--out-dir", str(out_dir)], capsys
        )
        assert code == 0
        assert "slope=" in out and "R2=" in out
        csv = out_dir / "uncompressed_S1_iid_seed3.csv"
        svg = out_dir / "uncompressed_S1_iid_seed3.svg"
        assert csv.exists() and svg.exists()
        assert csv.read_text().startswith("setting,n,")

    def test_repeat_run_identical_artifacts(self, tmp_path, capsys):
        cfg = self.config(tmp_path)
        d1, d2 = tmp_path / "o1", tmp_path / "o2"
        run(["run-experiment", str(cfg), "--out-dir", str(d1)], capsys)
        run(["run-experiment", str(cfg), "--out-dir", str(d2)], capsys)
        name = "uncompressed_S1_iid_seed3.csv"
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
        svg = "uncompressed_S1_iid_seed3.svg"
        assert (d1 / svg).read_bytes() == (d2 / svg).read_bytes()

    def test_kernel_study_prints_table(self, tmp_path, capsys):
        path = tmp_path / "k.json"
        path.write_text(
            json.dumps(
                {
                    "study": "kernel",
                    "setting": "KS",
                    "replications": 2,
                    "n_grid": [122],
                    "seed": 1,
                    "train": {"tol": 1e-4},
                }
            )
        )
        code, out, _ = run(
            ["run-experiment", str(path), "--out-dir", str(tmp_path)], capsys
        )
        assert code == 0
        assert "mean error by K" in out

    def test_bad_config_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"study": "uncompressed"}')
        code, _, err = run(
            ["run-experiment", str(path), "--out-dir", str(tmp_path)], capsys
        )
        assert code == 2

    def test_unknown_setting_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad2.json"
        path.write_text('{"study": "uncompressed", "setting": "S99"}')
        code, _, err = run(
            ["run-experiment", str(path), "--out-dir", str(tmp_path)], capsys
        )
        assert code == 2
        assert "unknown setting" in err


class TestDecompose:
    def test_tensor_file_roundtrip(self, tmp_path):
        t = np.random.default_rng(0).standard_normal((3, 4, 2))
        path = tmp_path / "t.txt"
        write_tensor_file(t, path)
        np.testing.assert_array_equal(read_tensor_file(path), t)
        first = path.read_text().splitlines()[0]
        assert first == "3 4 2"

    def test_exact_low_rank_tucker_fit(self, tmp_path, capsys):
        form = random_tucker((6, 5, 4), (2, 2, 2), seed=1)
        path = tmp_path / "t.txt"
        write_tensor_file(form.reconstruct(), path)
        code, out, _ = run(
            ["decompose", str(path), "--tucker", "2,2,2"], capsys
        )
        assert code == 0
        fit = float(out.split("fit=")[1].split()[0])
        assert fit >= 1 - 1e-8

    def test_full_rank_request_perfect_fit(self, tmp_path, capsys):
        t = np.random.default_rng(2).standard_normal((3, 3, 3))
        path = tmp_path / "t.txt"
        write_tensor_file(t, path)
        code, out, _ = run(["decompose", str(path), "--tucker", "3,3,3"], capsys)
        assert code == 0
        fit = float(out.split("fit=")[1].split()[0])
        assert fit >= 1 - 1e-10

    def test_cp_fit(self, tmp_path, capsys):
        from cnnkr.decomposition import random_cp

        form = random_cp((6, 6, 6), 3, seed=3)
        path = tmp_path / "t.txt"
        write_tensor_file(form.reconstruct(), path)
        code, out, _ = run(
            ["decompose", str(path), "--cp", "3", "--restarts", "3"], capsys
        )
        assert code == 0
        fit = float(out.split("fit=")[1].split()[0])
        assert fit >= 1 - 1e-6

    def test_rank_zero_usage_error(self, tmp_path, capsys):
        path = tmp_path / "t.txt"
        write_tensor_file(np.ones((2, 2)), path)
        code, _, err = run(["decompose", str(path), "--cp", "0"], capsys)
        assert code == 2

    def test_requires_exactly_one_mode(self, tmp_path, capsys):
        path = tmp_path / "t.txt"
        write_tensor_file(np.ones((2, 2)), path)
        code, _, _ = run(["decompose", str(path)], capsys)
        assert code == 2
        code, _, _ = run(
            ["decompose", str(path), "--cp", "1", "--tucker", "1,1"], capsys
        )
        assert code == 2

    def test_bad_file(self, tmp_path, capsys):
        path = tmp_path / "bad.txt"
        path.write_text("2 2\n1.0\n")
        code, _, err = run(["decompose", str(path), "--cp", "1"], capsys)
        assert code == 2


def test_missing_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
