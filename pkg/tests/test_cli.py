import json

import pytest

from hodgecover.cli import main

FAST = ["--set", "model.layers=2", "--set", "model.n=8", "--set", "model.clusters=2",
        "--set", "corpus.size=512"]


def run(args):
    return main([str(a) for a in args])


@pytest.fixture
def model_dir(tmp_path):
    out = tmp_path / "run"
    assert run(["synth", "--out", out] + FAST) == 0
    return out / "model"


class TestSynth:
    def test_writes_layer_files_and_manifest(self, tmp_path):
        out = tmp_path / "run"
        assert run(["synth", "--out", out] + FAST) == 0
        files = sorted((out / "model").glob("layer_*.json"))
        assert len(files) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["config"]["model"]["n"] == 8
        assert len(manifest["config_sha256"]) == 64

    def test_same_seed_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["synth", "--out", a] + FAST)
        run(["synth", "--out", b] + FAST)
        for name in ("model/layer_000.json", "model/layer_001.json", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["synth", "--out", a] + FAST)
        run(["synth", "--out", b, "--set", "model.seed=9"] + FAST)
        assert (a / "model/layer_000.json").read_bytes() != \
               (b / "model/layer_000.json").read_bytes()

    def test_config_file_and_override_precedence(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"model": {"n": 8, "clusters": 2, "layers": 1}}))
        out = tmp_path / "run"
        assert run(["synth", "--config", cfg, "--out", out,
                    "--set", "model.layers=2", "--set", "corpus.size=512"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["model"]["layers"] == 2  # flag beats file

    def test_bad_override_is_usage_error(self, tmp_path):
        assert run(["synth", "--out", tmp_path / "x", "--set", "nonsense"]) == 1
        assert run(["synth", "--out", tmp_path / "x", "--set", "model.bogus=1"]) == 1

    def test_unreadable_config_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run(["synth", "--config", bad, "--out", tmp_path / "x"]) == 2


class TestBarriersAndDiagnose:
    def test_barriers_artifacts(self, tmp_path, model_dir):
        out = tmp_path / "bar"
        assert run(["barriers", "--out", out, "--model-dir", model_dir] + FAST) == 0
        assert (out / "barriers/layer_000.json").exists()
        csv = (out / "barriers/layer_000_pairwise.csv").read_text()
        assert len(csv.strip().split("\n")) == 8

    def test_differing_seeds_give_differing_barrier_tables(self, tmp_path, model_dir):
        import hashlib

        other = tmp_path / "other"
        run(["synth", "--out", other, "--set", "model.seed=77"] + FAST)
        out_a, out_b = tmp_path / "ba", tmp_path / "bb"
        run(["barriers", "--out", out_a, "--model-dir", model_dir] + FAST)
        run(["barriers", "--out", out_b, "--model-dir", other / "model"] + FAST)
        digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()  # noqa: E731
        assert digest(out_a / "barriers/layer_000_pairwise.csv") != \
               digest(out_b / "barriers/layer_000_pairwise.csv")

    def test_diagnose_artifacts(self, tmp_path, model_dir):
        out = tmp_path / "diag"
        assert run(["diagnose", "--out", out, "--model-dir", model_dir] + FAST) == 0
        csv = (out / "diagnostics.csv").read_text().strip().split("\n")
        assert csv[0] == "layer,rho_harm,rho_grad,rho_curl,delta,beta1"
        assert len(csv) == 3
        assert (out / "betti_curve_layer_001.csv").exists()
        assert (out / "diagnostics_series.json").exists()

    def test_malformed_model_file_is_data_error(self, tmp_path):
        broken = tmp_path / "model"
        broken.mkdir()
        (broken / "layer_000.json").write_text("{broken")
        assert run(["diagnose", "--out", tmp_path / "d", "--model-dir", broken] + FAST) == 2

    def test_missing_model_dir_is_data_error(self, tmp_path):
        assert run(["diagnose", "--out", tmp_path / "d",
                    "--model-dir", tmp_path / "nope"] + FAST) == 2


class TestCompress:
    def test_rate_zero_identity_plans(self, tmp_path, model_dir):
        out = tmp_path / "c0"
        assert run(["compress", "--out", out, "--model-dir", model_dir,
                    "--rate", 0.0] + FAST) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["heldout_loss"] == pytest.approx(0.0, abs=1e-12)
        plan = json.loads((out / "plans/plan_layer_000.json").read_text())
        assert len(plan["survivors"]) == 8 and plan["redirect"] == {}

    def test_compress_writes_plans_and_summary(self, tmp_path, model_dir):
        out = tmp_path / "c"
        assert run(["compress", "--out", out, "--model-dir", model_dir,
                    "--rate", 0.5, "--method", "hodgecover"] + FAST) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["method"] == "hodgecover"
        assert summary["per_layer_k"] == [4, 4]
        assert summary["heldout_loss"] >= 0.0
        assert len(summary["per_layer_phi"]) == 2

    def test_methods_all_run(self, tmp_path, model_dir):
        for method in ("random", "greedy_barrier", "triplet_penalty",
                       "triplet_hypergraph", "no_triangle"):
            out = tmp_path / f"m_{method}"
            assert run(["compress", "--out", out, "--model-dir", model_dir,
                        "--rate", 0.5, "--method", method] + FAST) == 0

    def test_invalid_method_and_rate_are_usage_errors(self, tmp_path, model_dir):
        assert run(["compress", "--out", tmp_path / "x", "--model-dir", model_dir,
                    "--method", "alchemy"] + FAST) == 1
        assert run(["compress", "--out", tmp_path / "x", "--model-dir", model_dir,
                    "--rate", 1.5] + FAST) == 1
        assert run(["compress", "--out", tmp_path / "x", "--model-dir", model_dir,
                    "--method", "greedy_barrier", "--hybrid"] + FAST) == 1

    def test_hybrid_applies_residual_sparsity_then_pruning(self, tmp_path, model_dir):
        out = tmp_path / "h"
        assert run(["compress", "--out", out, "--model-dir", model_dir,
                    "--rate", 0.66, "--hybrid"] + FAST) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["hybrid"] is True
        assert summary["r1"] == 0.20
        assert summary["r2"] == pytest.approx(0.575, abs=1e-12)
        # stage 1 runs at r1 = 0.2: R = 3 drops, remainder to the first layer
        assert summary["per_layer_k"] == [6, 7]
        assert (out / "masks_layer_000.json").exists()
        assert summary["heldout_loss"] >= 0.0

    def test_deterministic_rerun(self, tmp_path, model_dir):
        a, b = tmp_path / "r1", tmp_path / "r2"
        for out in (a, b):
            assert run(["compress", "--out", out, "--model-dir", model_dir,
                        "--rate", 0.5] + FAST) == 0
        assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
        assert (a / "plans/plan_layer_000.json").read_bytes() == \
               (b / "plans/plan_layer_000.json").read_bytes()


class TestAblateVerifyReport:
    def test_ablate_grid(self, tmp_path, model_dir):
        out = tmp_path / "ab"
        assert run(["ablate", "--out", out, "--model-dir", model_dir,
                    "--rate", 0.5] + FAST) == 0
        grid = json.loads((out / "ablation_grid.json").read_text())
        assert set(grid["grid"]) == {"hodgecover", "random", "no_triangle",
                                     "greedy_barrier", "triplet_penalty",
                                     "triplet_hypergraph"}
        dev = grid["deviation_from_hodgecover"]["hodgecover"]
        assert all(v == 0.0 for v in dev.values())
        csv = (out / "ablation_grid.csv").read_text().strip().split("\n")
        assert len(csv) == 7

    def test_verify_subset_and_artifact(self, tmp_path, capsys):
        out = tmp_path / "v"
        assert run(["verify", "--only", "1,6,8", "--out", out]) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert sum("PASS" in line for line in lines) == 3
        doc = json.loads((out / "verify.json").read_text())
        assert [entry["number"] for entry in doc] == [1, 6, 8]

    def test_verify_bad_only_list(self):
        assert run(["verify", "--only", "one,two"]) == 1

    def test_report_bundles_run_dir(self, tmp_path, model_dir, capsys):
        out = tmp_path / "c"
        run(["compress", "--out", out, "--model-dir", model_dir, "--rate", 0.5] + FAST)
        assert run(["report", "--run-dir", out]) == 0
        report = json.loads((out / "report.json").read_text())
        assert "manifest" in report and "summary" in report

    def test_report_missing_dir(self, tmp_path):
        assert run(["report", "--run-dir", tmp_path / "ghost"]) == 2


def test_entry_point_installed():
    import shutil

    assert shutil.which("hodgecover") is not None
