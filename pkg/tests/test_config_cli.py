"""Tests for config round-tripping, table formatting, and the CLI runners."""

import json

import numpy as np
import pytest

from guidance_lab import (
    ConfigurationError,
    GaussianMixture,
    Table,
    cli,
    config_from_dict,
    config_to_dict,
    default_config,
    default_target_pair,
    format_value,
    load_config,
    save_config,
    target_from_dict,
    target_to_dict,
)
from guidance_lab.config import KINDS


# ---------------------------------------------------------------------------
# value formatting and CSV writing


def test_format_value():
    assert format_value(True) == "1"
    assert format_value(False) == "0"
    assert format_value(7) == "7"
    assert format_value(0.5) == "0.5"
    # 17 significant digits round-trip doubles exactly.
    assert float(format_value(0.1)) == 0.1
    assert float(format_value(1.0 / 3.0)) == 1.0 / 3.0
    assert format_value("label") == "label"


def test_table_write_csv(tmp_path):
    path = tmp_path / "sub" / "t.csv"
    Table(columns=["a", "b"], rows=[[1, 0.5], [2, 1.5]]).write_csv(str(path))
    assert path.read_text() == "a,b\n1,0.5\n2,1.5\n"
    with pytest.raises(ValueError):
        Table(columns=["a", "b"], rows=[[1]]).write_csv(str(path))


# ---------------------------------------------------------------------------
# target serialization


def test_target_round_trip_diagonal():
    g = GaussianMixture.isotropic(
        np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([0.5, 1.5]),
        weights=np.array([0.25, 0.75]),
    )
    d = target_to_dict(g)
    assert d["dim"] == 2
    assert all("cov_diag" in comp for comp in d["components"])
    back = target_from_dict(d)
    np.testing.assert_array_equal(back.weights, g.weights)
    np.testing.assert_array_equal(back.means, g.means)
    np.testing.assert_array_equal(back.covariances, g.covariances)


def test_target_round_trip_full_covariance():
    cov = np.array([[1.0, 0.3], [0.3, 0.8]])
    g = GaussianMixture.single(np.array([0.5, -0.5]), cov)
    d = target_to_dict(g)
    assert "cov_full" in d["components"][0]
    back = target_from_dict(d)
    np.testing.assert_array_equal(back.covariances[0], cov)


def test_target_from_dict_validation():
    base = {"dim": 2, "components": [
        {"weight": 1.0, "mean": [0.0, 0.0], "cov_diag": [1.0, 1.0]}
    ]}
    target_from_dict(base)  # sanity: the base form parses

    with pytest.raises(ConfigurationError):
        target_from_dict({"components": []})
    with pytest.raises(ConfigurationError):
        target_from_dict({"dim": 2, "components": []})
    bad = json.loads(json.dumps(base))
    bad["components"][0]["cov_full"] = [[1.0, 0.0], [0.0, 1.0]]
    with pytest.raises(ConfigurationError):
        target_from_dict(bad)  # both covariance forms present
    bad = json.loads(json.dumps(base))
    del bad["components"][0]["cov_diag"]
    with pytest.raises(ConfigurationError):
        target_from_dict(bad)  # no covariance form
    bad = json.loads(json.dumps(base))
    bad["components"][0]["mean"] = [0.0]
    with pytest.raises(ConfigurationError):
        target_from_dict(bad)
    bad = json.loads(json.dumps(base))
    bad["components"][0]["cov_diag"] = [1.0]
    with pytest.raises(ConfigurationError):
        target_from_dict(bad)
    bad = json.loads(json.dumps(base))
    bad["components"][0]["weight"] = 0.5  # weights must sum to one
    with pytest.raises(ConfigurationError):
        target_from_dict(bad)


# ---------------------------------------------------------------------------
# experiment config


def test_default_config_every_kind():
    for kind in KINDS:
        config = default_config(kind)
        assert config.kind == kind
        assert config.pair.dim == 2
    assert default_config("trace_divergence").sampler.steps == 240
    assert default_config("sample_compare").guidance.guidance_scale == 15.0


def test_config_dict_round_trip_is_exact():
    for kind in KINDS:
        d = config_to_dict(default_config(kind, seed=3, output_dir="artifacts"))
        assert config_to_dict(config_from_dict(d)) == d


def test_config_file_round_trip(tmp_path):
    config = default_config("sweep_omega", seed=11)
    path = tmp_path / "cfg.json"
    save_config(config, str(path))
    loaded = load_config(str(path))
    assert config_to_dict(loaded) == config_to_dict(config)


def test_config_defaults_fill_missing_blocks():
    config = config_from_dict({"kind": "verify"})
    assert config.seed == 0
    assert config.sampler.steps == 30
    assert config.hutchinson.probes == 256
    assert config.guidance.guidance_scale == 5.0
    assert config.sample_count == 2000
    # Default targets: four-mode ring versus its first mode.
    assert config.pair.unconditional.n_components == 4
    assert config.pair.conditional.n_components == 1


def test_config_validation_errors():
    with pytest.raises(ConfigurationError):
        config_from_dict({})  # missing kind
    with pytest.raises(ConfigurationError):
        config_from_dict({"kind": "nonsense"})
    with pytest.raises(ConfigurationError):
        config_from_dict({"kind": "verify", "guidance": {"rule": "magic"}})
    with pytest.raises(ConfigurationError):
        config_from_dict(
            {"kind": "verify",
             "guidance": {"guidance_scale": 1.0, "min_scale": 2.0}}
        )
    with pytest.raises(ConfigurationError):
        config_from_dict({"kind": "verify", "schedule": {"kind": "cosine"}})
    with pytest.raises(ConfigurationError):
        config_from_dict({"kind": "trace_divergence",
                          "guidance": {"beta_sweep": []}})
    with pytest.raises(ConfigurationError):
        config_from_dict({"kind": "verify", "samples": {"count": 1}})
    with pytest.raises(ConfigurationError):
        config_from_dict({"kind": "verify",
                          "targets": {"conditional": {"dim": 2, "components": []}}})
    with pytest.raises(ConfigurationError):
        load_config("/nonexistent/path.json")


def test_default_pair_geometry():
    pair = default_target_pair()
    assert pair.dim == 2
    np.testing.assert_array_equal(pair.conditional.means[0], [4.0, 0.0])
    assert pair.unconditional.n_components == 4
    # The conditional mode is strictly sharper than the unconditional ring.
    assert pair.conditional.covariances[0][0, 0] < pair.unconditional.covariances[0][0, 0]


# ---------------------------------------------------------------------------
# CLI runners (small configs; in-process main())


def _write_config(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def test_cli_trace_divergence_smoke_and_rerun(tmp_path):
    cfg = _write_config(tmp_path, {
        "kind": "trace_divergence",
        "sampler": {"steps": 24},
        "guidance": {"guidance_scale": 1.0, "min_scale": 1.0,
                     "decay_power": 0.0, "beta_sweep": [0.0, 1.0]},
    })
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    assert cli.main(["trace_divergence", "--config", cfg, "--out", str(out1)]) == 0
    assert cli.main(["trace_divergence", "--config", cfg, "--out", str(out2)]) == 0
    text1 = (out1 / "trace_divergence.csv").read_text()
    assert text1 == (out2 / "trace_divergence.csv").read_text()
    header = text1.splitlines()[0].split(",")
    assert header[:2] == ["step", "t"]
    assert "div_cond" in header and "div_uncond" in header
    assert "div_g_beta_0" in header and "div_g_beta_1" in header
    assert len(text1.splitlines()) == 26  # header + 25 states


def test_cli_seed_override_changes_trajectory(tmp_path):
    cfg = _write_config(tmp_path, {
        "kind": "trace_divergence",
        "sampler": {"steps": 8},
        "guidance": {"guidance_scale": 1.0, "min_scale": 1.0,
                     "decay_power": 0.0, "beta_sweep": [1.0]},
    })
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert cli.main(["trace_divergence", "--config", cfg, "--out", str(out1),
                     "--seed", "1"]) == 0
    assert cli.main(["trace_divergence", "--config", cfg, "--out", str(out2),
                     "--seed", "2"]) == 0
    assert (out1 / "trace_divergence.csv").read_text() != (
        out2 / "trace_divergence.csv"
    ).read_text()


def test_cli_sweep_beta_smoke(tmp_path):
    cfg = _write_config(tmp_path, {
        "kind": "sweep_beta",
        "sampler": {"steps": 16},
        "guidance": {"guidance_scale": 1.0, "min_scale": 1.0,
                     "decay_power": 0.0, "beta_sweep": [0.5, 1.0]},
    })
    out = tmp_path / "out"
    assert cli.main(["sweep_beta", "--config", cfg, "--out", str(out)]) == 0
    lines = (out / "sweep_beta.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header[:5] == ["step", "t", "div_g", "div_g_par", "div_g_perp"]
    assert "div_update_beta_0.5" in header
    assert "div_update_beta_1" in header
    assert len(lines) == 18  # header + 17 states

    # With a constant unit scale, the beta=1 update divergence column must
    # equal the raw residual column exactly (same scalar arithmetic).
    idx_g = header.index("div_g")
    idx_b1 = header.index("div_update_beta_1")
    for line in lines[1:]:
        cells = line.split(",")
        assert cells[idx_b1] == cells[idx_g]


def test_cli_sweep_omega_smoke(tmp_path):
    cfg = _write_config(tmp_path, {
        "kind": "sweep_omega",
        "sampler": {"steps": 12},
        "guidance": {"omega_sweep": [1.0, 3.0]},
        "samples": {"count": 60, "n_perm": 100},
    })
    out = tmp_path / "out"
    assert cli.main(["sweep_omega", "--config", cfg, "--out", str(out)]) == 0
    lines = (out / "sweep_omega.csv").read_text().splitlines()
    assert lines[0].split(",") == ["rule", "omega", "energy_distance",
                                   "null_q95", "mean_log_p_cond"]
    assert len(lines) == 5  # header + 2 omegas x 2 rules
    report = json.loads((out / "sweep_omega_report.json").read_text())
    assert report["omega_max"] == 3.0
    assert set(report["energy_distances"]) == {
        "cfg_omega_1", "cfg_omega_3", "projected_omega_1", "projected_omega_3"
    }
    assert isinstance(report["projected_le_cfg_at_omega_max"], bool)


def test_cli_sample_compare_smoke(tmp_path):
    cfg = _write_config(tmp_path, {
        "kind": "sample_compare",
        "sampler": {"steps": 12},
        "guidance": {"guidance_scale": 15.0},
        "samples": {"count": 60, "n_perm": 100},
    })
    out = tmp_path / "out"
    assert cli.main(["sample_compare", "--config", cfg, "--out", str(out)]) == 0
    for name in ("samples_oracle.csv", "samples_cfg.csv", "samples_projected.csv"):
        lines = (out / name).read_text().splitlines()
        assert lines[0] == "x_0,x_1"
        assert len(lines) == 61
    report = json.loads((out / "sample_compare_report.json").read_text())
    assert set(report["rules"]) == {"cfg", "projected"}
    for rule in report["rules"].values():
        assert rule["n_perm"] == 100
        assert "0.95" in rule["null_quantiles"]


def test_cli_verify_smoke(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["verify", "--out", str(out)]) == 0
    report = json.loads((out / "verify_report.json").read_text())
    assert report["passed"] is True
    assert len(report["checks"]) >= 14
    assert all(chk["passed"] for chk in report["checks"])


def test_cli_error_paths(tmp_path):
    # kind mismatch between CLI argument and config file
    cfg = _write_config(tmp_path, {"kind": "sweep_beta"})
    assert cli.main(["trace_divergence", "--config", cfg]) == 2
    # missing config file
    assert cli.main(["verify", "--config", str(tmp_path / "nope.json")]) == 2
    # invalid JSON
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["verify", "--config", str(bad)]) == 2
    # bad thread count
    assert cli.main(["verify", "--threads", "0"]) == 2
    # unknown kind is rejected by argparse itself
    with pytest.raises(SystemExit):
        cli.main(["explode"])
