import math

import numpy as np
import pytest

import odorloc

# 12x12 grid, 0.5 s: every call stays well under a second
TINY = dict(
    domain_size=(2.4e-6, 2.4e-6),
    grid=(12, 12),
    flow=(1e-7, 0.0),
    source_pos=(0.9e-6, 1.5e-6),
    injection_duration=0.3,
    total_time=0.5,
    sensors=[(0.6e-6, 0.6e-6), (1.8e-6, 0.9e-6), (1.2e-6, 1.9e-6)],
    map_resolution=12,
    pinn_epochs=10,
    pinn_collocation=64,
    mlp_epochs=2,
    mlp_samples=12,
    mlp_wind_levels=0,
    rl_episodes=20,
    rl_grid=6,
    rl_truth=(0.8e-6, 1.6e-6),
)


def test_methods_exposed():
    assert list(odorloc.METHODS) == ["KF", "MAP", "MLP", "PINN", "RL"]


def test_resolved_config_applies_overrides():
    text = odorloc.resolved_config(**TINY)
    assert "grid=12,12" in text.replace(" ", "")


def test_simulate_shapes_and_positivity():
    out = odorloc.simulate(times=[0.1, 0.3], **TINY)
    assert [t for t, _ in out["snapshots"]] == pytest.approx([0.1, 0.3], abs=1e-9)
    for _, f in out["snapshots"]:
        assert f.shape == (12, 12)
        assert (f >= 0).all()
    assert out["final"].shape == (12, 12)
    assert out["peak"] > 0


def test_observe_is_seeded():
    a = odorloc.observe(seed=3, **TINY)
    b = odorloc.observe(seed=3, **TINY)
    c = odorloc.observe(seed=4, **TINY)
    assert a["readings"].shape == (3, 600)
    assert np.array_equal(a["readings"], b["readings"])
    assert not np.array_equal(a["readings"], c["readings"])
    assert np.array_equal(a["clean"], c["clean"])
    assert a["noise_sigma"] > 0


def test_bench_report_round_trip():
    rep = odorloc.bench(repetitions=1, methods=["map", "kf"], **TINY)
    assert [r["method"] for r in rep["rows"]] == ["KF", "MAP"]
    for row in rep["rows"]:
        assert row["failures"] == []
        assert math.isfinite(row["median_error_m"])
    md = odorloc.format_report(rep, "md")
    assert md.splitlines()[0].startswith("Method | Estimate")
    csv = odorloc.format_report(rep, "csv")
    assert csv.startswith("method,estimate_x")


def test_localize_single_method():
    est = odorloc.localize("rl", **TINY)
    assert est["method"] == "RL"
    assert est["inference_s"] > 0


def test_errors_map_to_python_exceptions():
    with pytest.raises(odorloc.ConfigError):
        odorloc.resolved_config(diffusion=-1)
    with pytest.raises(ValueError):
        odorloc.bench(methods=["nope"], **TINY)
    with pytest.raises(odorloc.ConfigError):
        odorloc.localize("pinn", **{**TINY, "injection_duration": 1e-9})
