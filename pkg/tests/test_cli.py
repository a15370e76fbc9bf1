import json

import numpy as np
import pytest

from rfiqkd.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, build_parser, main
from rfiqkd.config import (
    CONFIG_SCHEMA,
    STATIC_TRANSMISSION,
    ConfigError,
    ScenarioConfig,
    from_dict,
    load_config,
    to_dict,
)
from rfiqkd.experiments import derive_seed, render_table
from rfiqkd.linksim import CountMatrix, multiphoton_fraction

SMALL = {
    "angles": [0, 90, 180],
    "n_starts": 4,
    "finite_key_runs": 2,
    "fig5": {"duration": 1.0, "lock_time": 0.3},
    "steering": {"duration": 3.0, "coverage_offsets": [0, 3, 5]},
}


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_empty_config_is_default():
    cfg = from_dict({})
    assert cfg == ScenarioConfig()
    assert cfg.source.mean_photon_number == 0.07
    assert cfg.channel.transmission == 0.03
    assert cfg.static_transmission == STATIC_TRANSMISSION
    assert len(cfg.angles) == 36 and cfg.finite_key_runs == 14


def test_roundtrip_and_fingerprint():
    cfg = from_dict(SMALL)
    again = from_dict(to_dict(cfg))
    assert again == cfg
    assert again.fingerprint() == cfg.fingerprint()
    assert from_dict({**SMALL, "workers": 4, "output_dir": "x"}).fingerprint() == cfg.fingerprint()
    assert from_dict({**SMALL, "seed": 1}).fingerprint() != cfg.fingerprint()


@pytest.mark.parametrize(
    "bad",
    [
        {"unknown": 1},
        {"seed": -1},
        {"channel": {"transmission": 2}},
        {"source": {"power_imbalance": [1, 1]}},
        {"scenario": "fig9"},
        {"scenario": "fig4", "angles": [0, 400]},
        {"motion": {"segments": [{"start": 0}]}},
    ],
)
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        from_dict(bad)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(p)


def test_schema_file_in_sync():
    from pathlib import Path

    doc = json.loads((Path(__file__).parents[1] / "docs" / "config.schema.json").read_text())
    assert doc == json.loads(json.dumps(CONFIG_SCHEMA))


def test_derive_seed_stable():
    assert derive_seed(0, 4, 1) == derive_seed(0, 4, 1)
    assert derive_seed(0, 4, 1) != derive_seed(0, 4, 2)
    assert derive_seed(0, 4, 1) == 2040376534


def test_render_table_format():
    text = render_table(["a", "b"], [[1, 0.1 + 0.2], [np.int64(2), float("nan")]], "x=1")
    assert text == "# x=1\na,b\n1,0.3\n2,nan\n"


def test_parser_subcommands():
    p = build_parser()
    args = p.parse_args(["fig4", "--seed", "3", "--workers", "2", "--backend", "per-pulse"])
    assert (args.scenario, args.seed, args.workers, args.backend) == ("fig4", 3, 2, "per-pulse")
    with pytest.raises(SystemExit):
        p.parse_args(["fig4", "--backend", "gpu"])


def test_cli_config_error_exit(tmp_path, capsys):
    assert main(["fig4", "--config", write(tmp_path, {"bogus": 1}), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert main(["custom", "--out", str(tmp_path), "--counts", str(tmp_path / "nope.csv")]) == EXIT_CONFIG


def test_cli_infeasible_exit(tmp_path):
    counts = np.zeros((6, 6), dtype=int)
    counts[4, 4] = counts[5, 5] = 10**6
    # C_XX = C_XY = C_YY = 1 but C_YX = 0: no directions fit
    counts[0, 0] = counts[1, 1] = counts[0, 2] = counts[1, 3] = 10**6
    counts[2, 2] = counts[3, 3] = 10**6
    counts[2, 0] = counts[2, 1] = counts[3, 0] = counts[3, 1] = 10**6
    m = CountMatrix(counts, np.full(6, 10**8), np.zeros(6, dtype=int), 1.0)
    path = tmp_path / "m.csv"
    m.to_csv(path)
    cfg = write(tmp_path, {"n_starts": 2})
    assert main(["custom", "--config", cfg, "--out", str(tmp_path / "o"), "--counts", str(path)]) == EXIT_INFEASIBLE


def test_custom_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["custom", "--config", write(tmp_path, SMALL), "--out", str(out)]) == EXIT_OK
    m = CountMatrix.from_csv(out / "counts.csv")
    assert m.duration == 0.5
    rows = (out / "key_rate.csv").read_text().splitlines()
    assert rows[0].startswith("# rfiqkd scenario=custom seed=0 config_sha256=")
    assert [r.split(",")[0] for r in rows[2:]] == ["device-model", "closed-form", "bb84"]
    # re-analysing the written counts reproduces the report
    out2 = tmp_path / "o2"
    assert main(["custom", "--config", write(tmp_path, SMALL), "--out", str(out2), "--counts", str(out / "counts.csv")]) == EXIT_OK
    assert (out2 / "key_rate.csv").read_text() == (out / "key_rate.csv").read_text()


def test_fig5_prelock_rows_have_no_key(tmp_path):
    out = tmp_path / "o"
    assert main(["fig5", "--config", write(tmp_path, SMALL), "--out", str(out)]) == EXIT_OK
    lines = (out / "fig5.csv").read_text().splitlines()[2:]
    pre = [l.split(",") for l in lines if float(l.split(",")[0]) < 0.3]
    assert pre and all(float(r[11]) == 0.0 and "insufficient_data" in r[12] for r in pre)
    post = [l.split(",") for l in lines if float(l.split(",")[0]) >= 0.5]
    assert np.median([float(r[11]) for r in post]) > 15000


def test_finite_key_zero_transmission(tmp_path):
    out = tmp_path / "o"
    cfg = write(tmp_path, {**SMALL, "static_transmission": 0.0})
    assert main(["finite-key", "--config", cfg, "--out", str(out)]) == EXIT_OK
    lines = (out / "finite_key.csv").read_text().splitlines()
    runs = [l.split(",") for l in lines[2:4]]
    assert all(float(r[7]) == 0.0 and r[8] == "1" for r in runs)
    assert lines[4].startswith("mean,") and lines[5].startswith("std,")


def test_noiseless_finite_key_rate(tmp_path):
    out = tmp_path / "o"
    cfg = write(
        tmp_path,
        {
            **SMALL,
            "finite_key_runs": 1,
            "channel": {"intrinsic_error_rate": 0, "linear_error_rate": 0},
            "background": {"dark_rate": 0, "ambient_rate": 0, "beacon_rate": 0},
        },
    )
    assert main(["finite-key", "--config", cfg, "--out", str(out)]) == EXIT_OK
    row = (out / "finite_key.csv").read_text().splitlines()[2].split(",")
    secure, sifted = float(row[7]), float(row[6])
    # r -> 1 up to finite-size widening
    assert secure / sifted == pytest.approx(1 - 0.0346, abs=0.06)
    assert secure / sifted <= 1 - multiphoton_fraction(0.07) + 1e-12
