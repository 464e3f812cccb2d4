import json

import numpy as np
import pytest

from glbsim.errors import ConfigError
from glbsim.runner import (
    SCATTER_HEADER,
    SERIES_HEADER,
    RunConfig,
    SweepSpec,
    format_config,
    load_config,
    manifest_for,
    parse_config_text,
    parse_csv,
    run_single,
    run_sweep,
    scatter_csv,
    series_csv,
    write_results,
)

SMALL = RunConfig(algorithm="fedglb-ucb", T=12, N=3, d=3, K=4, D=0.5)


def test_degenerate_horizon():
    res = run_single(RunConfig(algorithm="fedglb-ucb", T=1, N=1, d=2, K=1, D=1.0))
    assert res.series.shape == (1, 6)
    assert res.series[0, 1] == 0.0


def test_series_schema_and_monotone():
    res = run_single(SMALL)
    text = series_csv(res)
    header, rows = parse_csv(text)
    assert ",".join(header) == SERIES_HEADER
    assert len(rows) == SMALL.T
    arr = np.array(rows, dtype=float)
    assert np.all(np.diff(arr[:, 1:], axis=0) >= 0)


def test_rerun_is_byte_identical(tmp_path):
    a = write_results(run_single(SMALL), tmp_path / "a")
    b = write_results(run_single(SMALL), tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_csv_round_trip():
    text = series_csv(run_single(SMALL))
    header, rows = parse_csv(text)
    assert ",".join(header) + "\n" + "".join(",".join(r) + "\n" for r in rows) == text


def test_empty_scatter_is_header_only():
    assert scatter_csv([]) == SCATTER_HEADER + "\n"


def test_manifest_echoes_every_knob():
    res = run_single(SMALL)
    man = manifest_for(res)
    assert set(man["config"]) == set(SMALL.to_dict())
    json.dumps(man)


def test_config_parsing_round_trip():
    text = format_config(SMALL)
    assert RunConfig(**parse_config_text(text)) == SMALL


@pytest.mark.parametrize(
    "kw,field",
    [
        (dict(D=-1.0), "D"),
        (dict(T=0), "T"),
        (dict(algorithm="nope"), "algorithm"),
        (dict(D=None), "D"),
        (dict(B=3), "B"),
        (dict(delta=1.5), "delta"),
    ],
)
def test_validation_names_field(kw, field):
    with pytest.raises(ConfigError, match=field):
        SMALL.replace(**kw).validate()


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        load_config(None, ["bogus=1"])
    cfg = tmp_path / "x.cfg"
    cfg.write_text("T = 5\nN = 2\nD = 1\n# comment\n")
    loaded = load_config(cfg, ["d=2", "K=3"])
    assert (loaded.T, loaded.N, loaded.d, loaded.D) == (5, 2, 2, 1.0)


def test_single_cell_sweep_matches_run():
    spec = SweepSpec(SMALL, "D", [0.5], [0])
    rows, failures = run_sweep(spec)
    assert not failures
    fin = run_single(SMALL).final
    assert rows[0]["final_regret"] == fin["final_regret"]
    assert rows[0]["final_comm_events"] == fin["final_comm_events"]


def test_sweep_mean_rows():
    spec = SweepSpec(SMALL, "D", [0.5, 2.0], [0, 1, 2])
    rows, _ = run_sweep(spec)
    per = [r for r in rows if r["seed"] != "mean"]
    means = [r for r in rows if r["seed"] == "mean"]
    assert len(per) == 6 and len(means) == 2
    for m in means:
        grp = [r["final_regret"] for r in per if r["value"] == m["value"]]
        assert abs(m["final_regret"] - sum(grp) / len(grp)) <= 1e-12


def test_sweep_validation():
    with pytest.raises(ConfigError):
        SweepSpec(SMALL, "D", [], [0]).validate()
    with pytest.raises(ConfigError):
        SweepSpec(SMALL, "D", [1.0, 1.0], [0]).validate()


def test_failed_cell_is_recorded():
    bad = RunConfig(algorithm="dislinucb", T=3, N=2, d=2, K=2, D=1.0, dataset="/nonexistent/corpus.csv")
    rows, failures = run_sweep(SweepSpec(bad, "D", [1.0], [0]))
    assert rows == [] and len(failures) == 1
    assert "DatasetError" in failures[0]["error"]


def test_algorithms_share_arm_stream():
    a = run_single(RunConfig(algorithm="fedglb-ucb", T=5, N=2, d=2, K=3, D=1.0))
    b = run_single(RunConfig(algorithm="one-ucb-glm", T=5, N=2, d=2, K=3))
    assert a.arm_checksum == b.arm_checksum
