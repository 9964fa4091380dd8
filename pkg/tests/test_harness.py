import csv
import json
from pathlib import Path

import numpy as np
import pytest

from spdelab import cli
from spdelab.harness import (
    ConfigError,
    ExperimentAbortedError,
    build_config,
    parse_config,
    preset,
    preset_document,
    preset_names,
    run_experiment,
)


def tiny_doc(**overrides):
    """Small additive-noise run on the interval, cheap enough for every test."""
    doc = {
        "schema": 1,
        "name": "tiny",
        "seed": 99,
        "replicas": 300,
        "model": {
            "domain": {"kind": "unit_interval"},
            "drift": {"kind": "zero"},
            "sigma": {"kind": "constant", "value": 1.0},
            "initial": {"kind": "sine", "amplitude": 0.2},
            "horizon": 0.02,
        },
        "grid": {"n_space": 32, "dt": 5e-4},
        "probes": [[0.01, 0.5]],
        "analyses": [
            {
                "kind": "hoelder",
                "p": 2.0,
                "base_time": 0.01,
                "x": 0.5,
                "lags": [0.0005, 0.001, 0.002, 0.004],
            },
            {"kind": "moments", "p_values": [2.0]},
        ],
    }
    doc.update(overrides)
    return doc


class TestPresets:
    @pytest.mark.parametrize("name", preset_names())
    def test_preset_builds(self, name):
        config = preset(name)
        assert config.name == name
        assert config.replicas >= 1
        # the document round-trips through JSON unchanged
        doc = preset_document(name)
        assert json.loads(json.dumps(doc)) == doc

    def test_unknown_preset_lists_available(self):
        with pytest.raises(ValueError, match="kernel-lemma21"):
            preset("definitely-not-a-preset")

    def test_kernel_preset_passes_all_bands(self, tmp_path):
        report = run_experiment(preset("kernel-lemma21"), output_dir=tmp_path / "k")
        assert report.overall_pass
        quantities = {c["quantity"] for c in report.summary["checks"]}
        assert quantities == {
            "space_l2_slope",
            "deriv_l1_slope",
            "time_integrated_l2_slope",
        }

    def test_documents_carry_expected_sections(self):
        for name in preset_names():
            doc = preset_document(name)
            assert doc["schema"] == 1
            assert {"name", "seed", "replicas", "model", "grid"} <= set(doc)


class TestConfigValidation:
    def test_problems_are_aggregated(self):
        doc = tiny_doc(seed=-1, replicas=0)
        doc["probes"] = [[0.0123, 0.5]]
        with pytest.raises(ConfigError) as err:
            build_config(doc)
        msg = str(err.value)
        assert "seed" in msg
        assert "replicas" in msg
        assert "0.0123" in msg  # the offending probe is named
        assert len(err.value.issues) == 3

    def test_explicit_scheme_stability_limit_reported(self):
        doc = tiny_doc()
        doc["grid"] = {"n_space": 64, "dt": 5e-4, "scheme": "explicit"}
        with pytest.raises(ConfigError, match="dt <= dx\\^2/2"):
            build_config(doc)

    def test_unknown_analysis_kind(self):
        doc = tiny_doc(analyses=[{"kind": "wavelet"}])
        with pytest.raises(ConfigError, match="unknown analysis kind"):
            build_config(doc)

    def test_misaligned_lag_rejected(self):
        doc = tiny_doc()
        doc["analyses"][0]["lags"] = [0.0005, 0.001, 0.002, 0.00333]
        with pytest.raises(ConfigError, match="hoelder"):
            build_config(doc)

    def test_not_json(self):
        with pytest.raises(ConfigError, match="not valid JSON"):
            parse_config("{nope")

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="typo"):
            build_config(tiny_doc(typo=1))

    def test_moments_needs_probes(self):
        doc = tiny_doc(probes=[], analyses=[{"kind": "moments", "p_values": [2.0]}])
        with pytest.raises(ConfigError, match="no probes"):
            build_config(doc)

    def test_aux_error_window_bounds(self):
        doc = tiny_doc(
            analyses=[
                {"kind": "aux-error", "t": 0.01, "x": 0.5, "eps_set": [0.001, 0.002, 0.004, 0.008]}
            ]
        )
        with pytest.raises(ConfigError, match="outside"):
            build_config(doc)

    def test_band_must_be_ordered(self):
        doc = tiny_doc()
        doc["analyses"][0]["band"] = [0.3, 0.2]
        with pytest.raises(ConfigError, match="band"):
            build_config(doc)

    def test_schema_version_checked(self):
        with pytest.raises(ConfigError, match="schema"):
            build_config(tiny_doc(schema=7))


class TestConfigHash:
    def test_output_dir_does_not_change_hash(self):
        a = build_config(tiny_doc())
        b = build_config(tiny_doc(output_dir="elsewhere"))
        assert a.config_hash == b.config_hash

    def test_seed_and_replicas_change_hash(self):
        base = build_config(tiny_doc())
        assert build_config(tiny_doc(seed=100)).config_hash != base.config_hash
        assert build_config(tiny_doc(replicas=301)).config_hash != base.config_hash


class TestRunExperiment:
    def test_worker_count_never_changes_bytes(self, tmp_path):
        # 300 replicas split into two fixed blocks, so the pool actually
        # runs more than one task
        r1 = run_experiment(
            build_config(tiny_doc()), workers=1, output_dir=tmp_path / "w1"
        )
        r2 = run_experiment(
            build_config(tiny_doc()), workers=3, output_dir=tmp_path / "w3"
        )
        names = sorted(p.name for p in (tmp_path / "w1").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "w3").iterdir())
        for name in names:
            assert (tmp_path / "w1" / name).read_bytes() == (
                tmp_path / "w3" / name
            ).read_bytes(), name
        assert r1.summary == r2.summary

    def test_rerun_is_byte_identical(self, tmp_path):
        run_experiment(build_config(tiny_doc()), output_dir=tmp_path / "a")
        run_experiment(build_config(tiny_doc()), output_dir=tmp_path / "b")
        for p in sorted((tmp_path / "a").iterdir()):
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()

    def test_every_csv_row_carries_config_hash(self, tmp_path):
        config = build_config(tiny_doc())
        report = run_experiment(config, output_dir=tmp_path / "h")
        csvs = [p for p in report.files.values() if p.suffix == ".csv"]
        assert csvs
        for path in csvs:
            with open(path) as fh:
                rows = list(csv.DictReader(fh))
            assert rows
            assert all(row["config_hash"] == config.config_hash for row in rows)

    def test_probe_statistics_written(self, tmp_path):
        report = run_experiment(build_config(tiny_doc()), output_dir=tmp_path / "p")
        with open(report.files["probes.csv"]) as fh:
            rows = list(csv.DictReader(fh))
        # configured probe plus the four lagged ones the fit needs
        assert len(rows) == 5
        assert all(int(row["count"]) == 300 for row in rows)

    def test_summary_provenance(self, tmp_path):
        config = build_config(tiny_doc())
        report = run_experiment(config, output_dir=tmp_path / "s")
        s = report.summary
        assert s["config_hash"] == config.config_hash
        assert s["seed"] == 99
        assert s["replicas"] == 300
        assert s["failed_replicas"] == 0
        assert "version" in s
        text = (tmp_path / "s" / "summary.json").read_text()
        assert json.loads(text) == s

    def test_band_failure_reported_not_raised(self, tmp_path):
        doc = tiny_doc()
        doc["analyses"][0]["band"] = [0.9, 1.0]  # absurd, must fail
        report = run_experiment(build_config(doc), output_dir=tmp_path / "f")
        assert not report.overall_pass
        check = report.summary["checks"][0]
        assert check["pass"] is False

    def test_too_many_failures_abort(self, tmp_path):
        doc = tiny_doc(replicas=32)
        doc["model"]["drift"] = {"kind": "burgers"}
        doc["model"]["initial"] = {"kind": "sine", "amplitude": 200.0}
        doc["analyses"] = []
        with pytest.raises(ExperimentAbortedError, match="replicas failed"):
            run_experiment(build_config(doc), output_dir=tmp_path / "x")

    def test_snapshot_dump(self, tmp_path):
        report = run_experiment(
            build_config(tiny_doc(replicas=8, analyses=[])),
            dump_snapshots=True,
            output_dir=tmp_path / "snap",
        )
        with open(report.files["snapshots.csv"]) as fh:
            rows = list(csv.DictReader(fh))
        assert {row["t"] for row in rows} == {"0.01"}
        assert len(rows) == 33  # all nodes of the 32-cell grid

    def test_smoothing_and_besov_analyses_run(self, tmp_path):
        doc = tiny_doc(
            replicas=400,
            analyses=[
                {
                    "kind": "smoothing",
                    "t": 0.01,
                    "x": 0.5,
                    "phi": "sin",
                    "m": 2,
                    "lags": [0.1, 0.2, 0.4],
                },
                {"kind": "besov", "t": 0.01, "x": 0.5, "s": 0.4},
            ],
        )
        report = run_experiment(build_config(doc), output_dir=tmp_path / "sb")
        kinds = {c["kind"] for c in report.summary["checks"]}
        assert kinds == {"smoothing", "besov"}
        total = [c for c in report.summary["checks"] if c["quantity"] == "besov_total"]
        assert np.isfinite(total[0]["estimate"])

    def test_aux_error_exact_zero_for_additive_noise(self, tmp_path):
        doc = tiny_doc(
            replicas=40,
            probes=[],
            analyses=[
                {
                    "kind": "aux-error",
                    "t": 0.01,
                    "x": 0.5,
                    "eps_set": [0.0005, 0.001, 0.002, 0.004],
                    "replicas": 40,
                }
            ],
        )
        report = run_experiment(build_config(doc), output_dir=tmp_path / "aux")
        with open(report.files["analysis_00_aux_error.csv"]) as fh:
            rows = list(csv.DictReader(fh))
        gaps = [float(r["estimate"]) for r in rows if r["quantity"] == "freeze_gap"]
        assert gaps == [0.0] * 4
        fit = [r for r in rows if r["quantity"] == "freeze_gap_exponent"][0]
        assert "exact_zero=True" in fit["parameters"]


class TestCli:
    def test_preset_list(self, capsys):
        assert cli.main(["preset", "list"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert out == sorted(out)
        assert "heat-dirichlet-hoelder" in out

    def test_kernel_check_default(self, tmp_path, capsys):
        rc = cli.main(["kernel-check", "--out", str(tmp_path / "k")])
        assert rc == 0
        assert "PASS" in capsys.readouterr().out

    def test_run_config_file(self, tmp_path, capsys):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(tiny_doc(replicas=64)))
        rc = cli.main(["run", str(path), "--out", str(tmp_path / "out")])
        assert rc == 0
        assert (tmp_path / "out" / "summary.json").exists()

    def test_seed_override_changes_hash(self, tmp_path):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(tiny_doc(replicas=64)))
        cli.main(["run", str(path), "--out", str(tmp_path / "a")])
        cli.main(["run", str(path), "--seed", "7", "--out", str(tmp_path / "b")])
        s_a = json.loads((tmp_path / "a" / "summary.json").read_text())
        s_b = json.loads((tmp_path / "b" / "summary.json").read_text())
        assert s_a["config_hash"] != s_b["config_hash"]
        assert s_b["seed"] == 7

    def test_simulate_strips_analyses(self, tmp_path):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(tiny_doc(replicas=64)))
        rc = cli.main(["simulate", str(path), "--out", str(tmp_path / "sim")])
        assert rc == 0
        names = {p.name for p in (tmp_path / "sim").iterdir()}
        assert names == {"probes.csv", "summary.json"}

    def test_filtered_command_requires_matching_analysis(self, tmp_path, capsys):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(tiny_doc(replicas=64)))
        rc = cli.main(["besov", str(path), "--out", str(tmp_path / "b")])
        assert rc == 2
        assert "no besov analysis" in capsys.readouterr().err

    def test_bad_config_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(tiny_doc(seed=-1)))
        assert cli.main(["run", str(path)]) == 2
        assert "seed" in capsys.readouterr().err

    def test_unknown_preset_exit_code(self, capsys):
        assert cli.main(["run", "not-a-preset"]) == 2
        assert "available" in capsys.readouterr().err
