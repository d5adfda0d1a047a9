import hashlib
import json
import math

import pandas as pd
import pytest

from ldp_lab.artifacts import MANIFEST, compare
from ldp_lab.cli import main
from ldp_lab.config import config_from_mapping, flatten, load_config, unflatten
from ldp_lab.errors import ConfigInvalid, ManifestMissing
from tests.conftest import D_HALF

WALK = {"family": "bounded-step", "step": {"law": "rademacher", "p": 0.5}}


def _write(tmp_path, name, raw):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


def _run(tmp_path, raw, out="out", *extra):
    cfg = _write(tmp_path, f"{out}.json", raw)
    return main([raw["kind"], "--config", str(cfg), "--out", str(tmp_path / out), *extra])


def _local(seed=7):
    return {"kind": "verify-local", "seed": seed, "model": WALK, "beta": 0.5,
            "T_grid": [10, 20], "n": 1000, "eps": {"c": 0.5}, "method": "tilted"}


class TestConfig:
    def test_flatten_roundtrip(self):
        raw = {"model": {"step": {"law": "rademacher"}}, "eps": {"c": 0.5}, "T_grid": [1, 2]}
        flat = flatten(raw)
        assert flat == {"model.step.law": "rademacher", "eps.c": 0.5, "T_grid": [1, 2]}
        assert unflatten(flat) == raw

    def test_section(self, tmp_path):
        cfg = config_from_mapping(_local(), tmp_path)
        assert cfg.section("model") == WALK
        assert cfg.get("beta") == 0.5

    def test_missing_seed(self):
        raw = _local()
        del raw["seed"]
        with pytest.raises(ConfigInvalid):
            config_from_mapping(raw)

    @pytest.mark.parametrize("key,value", [
        ("n", 0),
        ("n", 50),
        ("n", 1000.5),
        ("T_grid", []),
        ("T_grid", [10, -1]),
        ("kind", "verify-everything"),
    ])
    def test_rejects(self, key, value):
        raw = _local()
        raw[key] = value
        with pytest.raises(ConfigInvalid):
            config_from_mapping(raw)

    def test_missing_required_key(self):
        raw = _local()
        del raw["beta"]
        with pytest.raises(ConfigInvalid, match="beta"):
            config_from_mapping(raw)

    def test_missing_path_file(self, tmp_path):
        raw = {"kind": "deviation-integral", "seed": 0, "rate": {"family": "gaussian"},
               "path_file": "nowhere.json"}
        with pytest.raises(ConfigInvalid):
            config_from_mapping(raw, tmp_path)

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigInvalid):
            load_config(tmp_path / "absent.json")
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(ConfigInvalid):
            load_config(tmp_path / "bad.json")

    def test_hash_tracks_params(self, tmp_path):
        a = config_from_mapping(_local(), tmp_path)
        b = config_from_mapping({**_local(), "beta": 0.4}, tmp_path)
        assert a.config_hash != b.config_hash
        assert a.config_hash == config_from_mapping(_local(), tmp_path).config_hash


class TestConjugate:
    def test_rademacher(self, tmp_path):
        raw = {"kind": "conjugate", "seed": 0,
               "fundamental": {"family": "rademacher", "parameters": {"p": 0.5}}}
        assert _run(tmp_path, raw) == 0
        df = pd.read_csv(tmp_path / "out" / "conjugate.csv")
        assert list(df.columns) == ["alpha", "D"]
        assert df.loc[df["alpha"] == 0.5, "D"].iloc[0] == pytest.approx(0.130812, abs=1e-6)
        assert math.isinf(df.loc[df["alpha"] == 1.5, "D"].iloc[0])
        manifest = json.loads((tmp_path / "out" / MANIFEST).read_text())
        assert manifest["summary"]["essentially_smooth"] is True
        assert manifest["summary"]["good"] is True
        digest = hashlib.sha256((tmp_path / "out" / "conjugate.csv").read_bytes()).hexdigest()
        assert manifest["files"]["conjugate.csv"] == digest

    def test_table_file(self, tmp_path):
        (tmp_path / "cgf.csv").write_text("mu,A\n-2,2\n0,0\n2,2\n")
        raw = {"kind": "conjugate", "seed": 0, "alpha_grid": [0.0, 0.5],
               "fundamental": {"family": "table", "parameters": {"path": "cgf.csv"}}}
        assert _run(tmp_path, raw) == 0
        df = pd.read_csv(tmp_path / "out" / "conjugate.csv")
        assert df["D"].tolist() == pytest.approx([0.0, 0.0], abs=1e-9)

    def test_unknown_family_is_invalid(self, tmp_path):
        raw = {"kind": "conjugate", "seed": 0, "fundamental": {"family": "cauchy"}}
        assert _run(tmp_path, raw) == 2
        assert not (tmp_path / "out").exists()


class TestDeviationIntegral:
    def test_line(self, tmp_path):
        raw = {"kind": "deviation-integral", "seed": 0, "rate": {"family": "rademacher"},
               "path": {"kind": "linear", "nodes": [[0, 0], [1, 0.5]]}}
        assert _run(tmp_path, raw) == 0
        summary = json.loads((tmp_path / "out" / MANIFEST).read_text())["summary"]
        assert summary["J"] == pytest.approx(D_HALF)
        assert summary["converged"] is True

    def test_jump_fails_when_finite_expected(self, tmp_path):
        raw = {"kind": "deviation-integral", "seed": 0, "rate": {"family": "rademacher"},
               "path": {"kind": "step", "nodes": [[0, 0], [0.5, 1]]}, "expect_finite": True}
        assert _run(tmp_path, raw) == 3
        summary = json.loads((tmp_path / "out" / MANIFEST).read_text())["summary"]
        assert summary["diverged"] is True
        assert summary["J"] == "inf"


class TestSimulate:
    def test_trajectory_and_budget(self, tmp_path):
        raw = {"kind": "simulate", "seed": 3, "model": WALK, "T": 100, "grid_step": 1,
               "budget": {"gamma0": 1, "gamma1": 1}, "delta_grid": [0.01, 0.1]}
        assert _run(tmp_path, raw) == 0
        traj = pd.read_csv(tmp_path / "out" / "trajectory.csv")
        assert list(traj.columns) == ["t", "Z"] and len(traj) == 101
        assert pd.read_csv(tmp_path / "out" / "condition_B.csv")["passed"].all()


class TestVerify:
    def test_local_outputs(self, tmp_path):
        assert _run(tmp_path, _local()) == 0
        out = tmp_path / "out"
        results = pd.read_csv(out / "results.csv")
        assert list(results.columns) == ["T", "target", "eps", "method", "n", "p_hat",
                                         "std_err", "log_rate", "reference_rate", "abs_gap"]
        assert results["T"].tolist() == [10, 20]
        assert results["reference_rate"].iloc[0] == pytest.approx(D_HALF)
        assert list(pd.read_csv(out / "plot_data.csv").columns) == ["T", "log_rate", "reference_rate"]
        assert 'id="ldp-lab-plot"' in (out / "plot.html").read_text()
        manifest = json.loads((out / MANIFEST).read_text())
        assert set(manifest["files"]) == {"results.csv", "plot_data.csv", "plot.html"}
        assert "fitted_rate" in manifest["summary"]

    def test_same_seed_is_reproducible(self, tmp_path):
        assert _run(tmp_path, _local(), "a") == 0
        assert _run(tmp_path, _local(), "b", "--workers", "3") == 0
        assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
        assert compare(tmp_path / "a", tmp_path / "b").passed
        assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 0

    def test_different_seeds_differ(self, tmp_path):
        assert _run(tmp_path, _local(1), "a") == 0
        assert _run(tmp_path, _local(2), "b") == 0
        report = compare(tmp_path / "a", tmp_path / "b")
        assert not report.passed
        assert "p_hat" in set(report.flagged["column"])
        assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 1
        assert compare(tmp_path / "a", tmp_path / "b", stderr_multiple=10).passed

    def test_seed_override(self, tmp_path):
        assert _run(tmp_path, _local(1), "a", "--seed", "2") == 0
        assert _run(tmp_path, _local(2), "b") == 0
        assert compare(tmp_path / "a", tmp_path / "b").passed

    def test_interval(self, tmp_path):
        raw = {"kind": "verify-interval", "seed": 0, "model": WALK, "lo": 0.3, "hi": 0.6,
               "T_grid": [20, 40], "n": 1000}
        assert _run(tmp_path, raw) == 0
        results = pd.read_csv(tmp_path / "out" / "results.csv")
        assert results["target"].iloc[0] == "(0.3,0.6)"

    def test_zero_samples_is_invalid(self, tmp_path):
        raw = {**_local(), "n": 0}
        assert _run(tmp_path, raw) == 2
        assert not (tmp_path / "out").exists()


class TestOtherKinds:
    def test_varadhan(self, tmp_path):
        raw = {"kind": "varadhan", "seed": 0, "model": WALK, "phi": {"kind": "linear", "slope": 0.5},
               "T": 50, "n": 1000, "method": "tilted"}
        assert _run(tmp_path, raw) == 0
        row = pd.read_csv(tmp_path / "out" / "varadhan.csv").iloc[0]
        assert row["abs_gap"] < 1e-6

    def test_tightness(self, tmp_path):
        raw = {"kind": "tightness", "seed": 0, "model": WALK, "N_targets": [0.1],
               "T_grid": [20], "n": 1000}
        assert _run(tmp_path, raw) == 0
        assert pd.read_csv(tmp_path / "out" / "tightness.csv")["v"].iloc[0] == 0.45

    def test_uniformity(self, tmp_path):
        raw = {"kind": "uniformity", "seed": 0, "model": WALK, "beta": 0.5, "T": 40, "n": 1000,
               "alpha": 0.0, "eta": 0.2, "points": 3, "eps": 0.1}
        assert _run(tmp_path, raw) == 0
        assert len(pd.read_csv(tmp_path / "out" / "uniformity.csv")) == 3


class TestCli:
    def test_kind_mismatch(self, tmp_path):
        cfg = _write(tmp_path, "c.json", _local())
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_compare_without_manifest(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        with pytest.raises(ManifestMissing):
            compare(tmp_path / "a", tmp_path / "b")
        assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 2

    def test_compare_flags_file_missing_from_one_run(self, tmp_path):
        raw = {"kind": "simulate", "seed": 3, "model": WALK, "T": 50, "grid_step": 1}
        assert _run(tmp_path, raw, "a") == 0
        assert _run(tmp_path, {**raw, "budget": {"gamma0": 1, "gamma1": 1}}, "b") == 0
        report = compare(tmp_path / "a", tmp_path / "b")
        assert not report.passed
        row = report.flagged.iloc[0]
        assert (row["file"], row["a"], row["b"]) == ("condition_B.csv", False, True)
        assert "trajectory.csv" not in set(report.flagged["file"])
        assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 1
