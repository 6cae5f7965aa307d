"""Smoke test for the msf_spoof extension module.

Run with `pytest python/smoke_test.py` or `python python/smoke_test.py`
after installing the wheel built from crates/python.
"""

import math
import os
import tempfile

import pytest
import msf_spoof
from scipy import stats


def test_goal_thresholds():
    local = msf_spoof.goal_thresholds("local")
    assert local == {"touch_lane_line": 0.295, "off_road": 0.895, "wrong_way": 2.405}
    with pytest.raises(ValueError):
        msf_spoof.goal_thresholds("gravel")


def test_statistics_match_scipy():
    table = [[8, 2], [1, 5]]
    odds, p = msf_spoof.fisher_exact(table)
    ref = stats.fisher_exact(table)
    assert math.isclose(p, ref.pvalue, rel_tol=1e-9)
    assert math.isclose(odds, ref.statistic, rel_tol=1e-12)

    xs = [0.1, 0.4, 0.35, 0.8, 0.9, 1.3, 1.1]
    ys = [1.0, 1.9, 2.2, 2.8, 3.9, 4.1, 4.4]
    r, p = msf_spoof.pearson(xs, ys)
    ref = stats.pearsonr(xs, ys)
    assert math.isclose(r, ref.statistic, rel_tol=1e-12)
    assert math.isclose(p, ref.pvalue, rel_tol=1e-6)


def test_exponential_fit_recovers_base():
    devs = [1.5 ** x + 0.2 for x in range(1, 11)]
    a, b, mse = msf_spoof.fit_exponential(devs)
    assert abs(a - 1.5) < 1e-9 and abs(b - 0.2) < 1e-6 and mse < 1e-12
    with pytest.raises(ValueError):
        msf_spoof.fit_exponential([1.0, 2.0])


def test_bench_and_attack():
    plain = msf_spoof.Bench(duration=60.0, demo=False, noise_free=True)
    assert plain.count("gps") == 60 and plain.count("lidar") == 300
    start = next(t for t in plain.gps_epoch_times() if t >= 10.0)
    out = plain.fusion_ripper(start, 0.5, 1.2, max_duration=30.0)
    assert out["stage2_time"] is None
    assert out["max_deviation"] < 0.295

    demo = msf_spoof.Bench(duration=150.0)
    start = next(t for t in demo.gps_epoch_times() if t >= 25.0)
    out = demo.fusion_ripper(start, 0.6, 1.3, side="right", max_duration=60.0)
    assert out["side"] == "right"
    assert len(out["deviation_series"]) > 0
    with pytest.raises(ValueError):
        demo.fusion_ripper(start + 0.5, 0.6, 1.3)
    with pytest.raises(ValueError):
        demo.fusion_ripper(start, 0.6, 1.3, side="up")


def test_campaign_round_trip():
    with tempfile.TemporaryDirectory() as tmp:
        config = """
experiment = "RIPPER_GRID"
output_dir = "run"
threads = 1
[demo]
duration = 120.0
[attack]
max_duration = 30.0
[campaign]
min_duration = 30.0
grid_d = [0.5]
grid_f = [1.2]
"""
        files = msf_spoof.run_campaign(config, base_dir=tmp)
        assert "report.json" in files
        out = os.path.join(tmp, "run")
        assert msf_spoof.verify(out) == []
        with open(os.path.join(out, "report.json"), "a") as fh:
            fh.write(" ")
        assert msf_spoof.verify(out) == ["report.json"]
        with pytest.raises(ValueError):
            msf_spoof.run_campaign('experiment = "NOPE"\noutput_dir = "x"\n', base_dir=tmp)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
