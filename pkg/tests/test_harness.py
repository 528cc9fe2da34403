import json
import os

import numpy as np
import pytest

from akwinfer import directions as dirs
from akwinfer import kwengine as kw
from akwinfer import models
from akwinfer import simharness as sh


def small_raw(**overrides):
    raw = {
        "name": "t",
        "model": {"family": "linear", "theta": [0.6, -0.8]},
        "directions": {"kind": "canonical"},
        "n": 300,
        "replications": 6,
        "seed": 11,
    }
    raw.update(overrides)
    return raw


def test_parse_config_defaults():
    cfg, diags = sh.parse_config(small_raw())
    assert diags == []
    assert np.allclose(cfg.w, np.full(2, 1 / np.sqrt(2)))
    assert cfg.level == 0.95
    assert cfg.inference == sh.METHODS
    assert cfg.sched.eta0 == 0.1 and cfg.sched.gamma == 0.7
    assert cfg.run_id == f"t-{cfg.config_hash[:10]}"
    assert len(cfg.config_hash) == 64


def test_parse_config_collects_all_violations():
    raw = small_raw(
        schedules={"alpha": 1.2},
        plugin={"p": 0.0},
        directions={"kind": "canonical", "bogus": 1},
    )
    cfg, diags = sh.parse_config(raw)
    assert cfg is None
    joined = "\n".join(diags)
    assert "alpha must lie in (0.5, 1)" in joined
    assert "plugin.p must lie in (0, 1]" in joined
    assert "unknown key 'bogus'" in joined
    assert len(diags) == 3


def test_parse_config_unknown_top_level_key():
    cfg, diags = sh.parse_config(small_raw(extra=1))
    assert cfg is None and any("unknown key 'extra'" in d for d in diags)


def test_parse_config_theta_dim_contradiction_and_dim_seed():
    cfg, diags = sh.parse_config(
        small_raw(model={"family": "linear", "theta": [1.0, 0.0], "dim": 3})
    )
    assert cfg is None and any("contradicts" in d for d in diags)
    cfg, diags = sh.parse_config(
        small_raw(model={"family": "linear", "dim": 4, "theta_seed": 7})
    )
    assert diags == []
    assert np.allclose(cfg.model.theta_star, models.theta_on_unit_sphere(4, seed=7))


def test_config_validation_rules():
    with pytest.raises(ValueError):
        sh.config_from_dict(small_raw(level=0.93))  # untabled scaling level
    cfg, _ = sh.parse_config(small_raw(level=0.93, inference=["plugin", "oracle"]))
    assert cfg is not None  # fine without random scaling
    with pytest.raises(sh.ConfigError):
        sh.config_from_dict(small_raw(checkpoints=[0]))
    with pytest.raises(sh.ConfigError):
        sh.config_from_dict(small_raw(checkpoints=[1000]))
    with pytest.raises(sh.ConfigError):
        sh.config_from_dict(small_raw(w=[0.0, 0.0]))
    with pytest.raises(sh.ConfigError):
        sh.config_from_dict(small_raw(w=[1.0, 0.0, 0.0]))
    with pytest.raises(sh.ConfigError):
        sh.config_from_dict(small_raw(inference=["bootstrap"]))
    cfg = sh.config_from_dict(small_raw(checkpoints=[200, 100, 200]))
    assert cfg.checkpoints == (100, 200)


def test_config_hash_ignores_dict_order_but_not_values():
    a = sh.config_from_dict(small_raw())
    b = sh.config_from_dict(dict(reversed(list(small_raw().items()))))
    assert a.config_hash == b.config_hash
    c = sh.config_from_dict(small_raw(seed=12))
    assert a.config_hash != c.config_hash


def test_zero_iterations_yields_unit_error_and_no_intervals():
    cfg = sh.config_from_dict(small_raw(n=0, replications=3))
    report = sh.run_experiment(cfg)
    assert len(report.records) == 3 * len(sh.METHODS)
    for r in report.records:
        assert r.est_error == pytest.approx(1.0)
        assert r.ci_center is None and r.covered is None
        assert not r.aborted


def test_vectorized_engine_matches_scalar_replay():
    cfg = sh.config_from_dict(
        small_raw(
            n=200,
            replications=3,
            inference=["oracle"],
            directions={"kind": "spherical", "m": 2},
        )
    )
    st = sh.replication_states(cfg)
    oracle = models.make_oracle(cfg.model)
    for rep in range(cfg.replications):
        rng = np.random.default_rng(cfg.seed + rep)
        x, z, v, _ = sh.draw_block(rng, oracle, cfg.dist, cfg.mode, cfg.n)
        y = oracle.response_from_noise(x @ cfg.model.theta_star, z)
        state = kw.KwRunState.initial(cfg.model.dim)
        for i in range(cfg.n):
            kw.step(
                state, oracle, cfg.dist, cfg.mode, cfg.sched, rng,
                zeta=(x[i], y[i]), dir_batch=v[i],
            )
        assert np.allclose(state.theta, st.theta[rep], rtol=1e-9, atol=1e-12)
        assert np.allclose(state.theta_bar, st.theta_bar[rep], rtol=1e-9, atol=1e-12)


def test_chunking_and_workers_do_not_change_results():
    cfg = sh.config_from_dict(small_raw(n=150, replications=5))
    r1 = sh.run_experiment(cfg, workers=1)
    r2 = sh.run_experiment(cfg, workers=4)
    csv1 = sh._records_csv(r1.records, sh.CSV_FIELDS)
    csv2 = sh._records_csv(r2.records, sh.CSV_FIELDS)
    assert csv1 == csv2
    assert r1.summary == r2.summary


def test_write_and_read_report_round_trip(tmp_path):
    cfg = sh.config_from_dict(small_raw(n=120, replications=4, checkpoints=[60]))
    report = sh.run_experiment(cfg)
    run_dir = sh.write_report(report, str(tmp_path))
    assert os.path.basename(run_dir) == cfg.run_id
    back = sh.read_replications(os.path.join(run_dir, "replications.csv"))
    assert sh.summarize_records(back) == sh.summarize_records(report.records)
    with open(os.path.join(run_dir, "summary.json")) as fh:
        summary = json.load(fh)
    assert summary["run_id"] == cfg.run_id
    assert "wall_time" not in summary
    with open(os.path.join(run_dir, "config.resolved.json")) as fh:
        assert json.load(fh) == cfg.resolved()
    cps = sh.read_replications(os.path.join(run_dir, "checkpoints.csv"))
    assert {r.n for r in cps} == {60}
    assert len(cps) == 4 * len(sh.METHODS)


def test_rerun_writes_identical_bytes(tmp_path):
    cfg = sh.config_from_dict(small_raw(n=100, replications=3))
    d1 = sh.write_report(sh.run_experiment(cfg), str(tmp_path / "a"))
    d2 = sh.write_report(sh.run_experiment(cfg), str(tmp_path / "b"))
    for fname in ("replications.csv", "summary.json", "config.resolved.json"):
        with open(os.path.join(d1, fname), "rb") as f1, open(
            os.path.join(d2, fname), "rb"
        ) as f2:
            assert f1.read() == f2.read(), fname


def test_divergent_replications_marked_aborted():
    cfg = sh.config_from_dict(
        small_raw(
            n=200,
            replications=4,
            schedules={"eta0": 1e7, "alpha": 0.501, "h0": 1.0, "gamma": 0.7},
        )
    )
    report = sh.run_experiment(cfg)
    aborted = [r for r in report.records if r.aborted]
    assert aborted, "expected the huge step size to trip the divergence guard"
    for r in aborted:
        assert r.ci_center is None and r.covered is None
    assert report.summary["aborted"] == len(aborted) // len(sh.METHODS)


def test_rm_baseline_beats_kw_variance():
    cfg = sh.config_from_dict(
        small_raw(n=4000, replications=20, inference=["oracle"],
                  directions={"kind": "gaussian"})
    )
    akw = sh.run_experiment(cfg)
    rm = sh.run_rm_baseline(cfg)
    assert rm.config.algorithm == "rm"
    assert rm.run_id.startswith("t-rm-")
    assert (
        rm.summary["methods"]["oracle"]["est_error_mean"]
        < akw.summary["methods"]["oracle"]["est_error_mean"]
    )
    assert (
        rm.summary["oracle_covariance_trace"]
        < akw.summary["oracle_covariance_trace"]
    )
    # RM consumes one query per step, AKW m+1
    assert rm.records[0].queries == cfg.n
    assert akw.records[0].queries == 2 * cfg.n


def test_sweep_rejects_duplicates_and_handles_empty():
    cfg = sh.config_from_dict(small_raw(n=50, replications=2))
    with pytest.raises(sh.ConfigError):
        sh.sweep([cfg, cfg])
    assert sh.sweep([]) == []


def test_oracle_coverage_near_nominal():
    cfg = sh.config_from_dict(
        small_raw(n=8000, replications=60, seed=3, inference=["oracle"])
    )
    report = sh.run_experiment(cfg)
    cov = report.summary["methods"]["oracle"]["coverage"]
    assert 0.85 <= cov <= 1.0
