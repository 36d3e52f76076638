import math
from dataclasses import replace

import numpy as np
import pytest

from tensorsim import power_model as pm
from tensorsim import simulate as sim
from tensorsim import study


def synthetic_traj(times, deltas_by_gen, n_machines=3):
    """Trajectory with prescribed rotor angles, everything else zero."""
    states = np.zeros((len(times), n_machines * pm.N_STATES))
    for pos, series in deltas_by_gen.items():
        states[:, pos * pm.N_STATES] = series
    return sim.Trajectory(times=np.asarray(times, dtype=float), states=states)


class TestRmsError:
    def test_identical_runs_zero(self, wscc_sys):
        times = np.arange(11) * 0.01
        a = synthetic_traj(times, {1: np.linspace(0, 1, 11)})
        assert study.rms_error(a, a, wscc_sys) == {"G2": 0.0, "G3": 0.0}

    def test_constant_offset(self, wscc_sys):
        times = np.arange(5) * 0.01
        a = synthetic_traj(times, {1: np.full(5, math.radians(1.0))})
        b = synthetic_traj(times, {1: np.zeros(5)})
        err = study.rms_error(a, b, wscc_sys, generators=("G2",), reference="G1")
        assert abs(err["G2"] - 1.0) < 1e-12

    def test_sine_rms(self, wscc_sys):
        # >= 100 periods sampled: RMS of A sin is A/sqrt(2) within 1%
        times = np.linspace(0.0, 100.0, 20001)
        amp = math.radians(2.0)
        a = synthetic_traj(times, {1: amp * np.sin(2 * math.pi * times)})
        b = synthetic_traj(times, {1: np.zeros_like(times)})
        err = study.rms_error(a, b, wscc_sys, generators=("G2",), reference="G1")
        assert abs(err["G2"] - 2.0 / math.sqrt(2)) / (2.0 / math.sqrt(2)) < 0.01

    def test_symmetry(self, wscc_sys):
        rng = np.random.default_rng(0)
        times = np.arange(20) * 0.01
        a = synthetic_traj(times, {1: rng.standard_normal(20) * 0.02})
        b = synthetic_traj(times, {1: rng.standard_normal(20) * 0.02})
        assert study.rms_error(a, b, wscc_sys) == study.rms_error(b, a, wscc_sys)

    def test_grid_mismatch(self, wscc_sys):
        a = synthetic_traj(np.arange(5) * 0.01, {})
        b = synthetic_traj(np.arange(6) * 0.01, {})
        with pytest.raises(study.GridMismatchError):
            study.rms_error(a, b, wscc_sys)

    def test_max_abs_variant(self, wscc_sys):
        times = np.arange(4) * 0.01
        a = synthetic_traj(times, {1: np.array([0, 0.01, -0.03, 0.0])})
        b = synthetic_traj(times, {1: np.zeros(4)})
        err = study.max_abs_error(a, b, wscc_sys, generators=("G2",), reference="G1")
        assert abs(err["G2"] - math.degrees(0.03)) < 1e-12


class TestCct:
    def test_zero_duration_stable(self, wscc_sys):
        pol = sim.SwitchPolicy(mode="force_full")
        res = study.cct_search(wscc_sys, None, pol, 7, t_end=8.0)
        assert res.runs[0] == (0.0, True)
        assert res.cct > 0

    def test_bracket_confirmation(self, wscc_sys):
        pol = sim.SwitchPolicy(mode="force_full")
        res = study.cct_search(wscc_sys, None, pol, 7)
        assert study._stable(wscc_sys, None, pol, 7, res.stable_steps, 0.01, 16.0, 180.0)
        assert not study._stable(wscc_sys, None, pol, 7, res.unstable_steps, 0.01, 16.0, 180.0)
        assert res.unstable_steps == res.stable_steps + 1

    def test_unstable_at_zero_raises(self, wscc_sys, monkeypatch):
        pol = sim.SwitchPolicy(mode="force_full")
        monkeypatch.setattr(study, "_stable", lambda *a, **k: False)
        with pytest.raises(study.CctError):
            study.cct_search(wscc_sys, None, pol, 7)

    def test_cap_when_always_stable(self, wscc_sys, monkeypatch):
        pol = sim.SwitchPolicy(mode="force_full")
        monkeypatch.setattr(study, "_stable", lambda *a, **k: True)
        res = study.cct_search(wscc_sys, None, pol, 7, max_duration=0.5)
        assert res.capped and res.cct == 0.5


class TestRankSweepCore:
    def test_planted_rank_found(self):
        # scores mimic an exactly rank-5 target: each extra component below
        # rank 5 removes a chunk of error, extra ranks beyond it do nothing
        def score(r2, r3):
            return (2.0 * (5 - r2) + 0.5 if r2 < 5 else 0.01), None

        chosen, curve, stopped = study._rank_sweep(score, 1, 0.1, (0, 1, 2), 50)
        assert chosen[1] == 5
        assert stopped == "improvement_below_tol"

    def test_infinite_tolerance_returns_start(self):
        def score(r2, r3):
            return 10.0 / r2, None

        chosen, _, stopped = study._rank_sweep(score, 3, float("inf"), (0,), 50)
        assert chosen[1] == 3 and stopped == "improvement_below_tol"

    def test_max_rank_reported_not_fatal(self):
        def score(r2, r3):
            return 10.0 / r2, None

        chosen, curve, stopped = study._rank_sweep(score, 1, 1e-9, (0,), 4)
        assert stopped == "max_rank"
        assert chosen[1] == 4

    def test_real_search_smoke(self, wscc_sys):
        scn = sim.Scenario(fault_bus=7, t_clear=0.08, t_end=2.0)
        pol = sim.SwitchPolicy(mode="force_taylor", representative_levels=(1.0,))
        res = study.rank_search(
            wscc_sys, scn, pol, start_rank=2, max_rank=4,
            improvement_tol_deg=0.1, r3_offsets=(0,), dt=0.01,
            cp_options=dict(max_iters=80, restarts=1),
        )
        assert res.r2 >= 2
        assert len(res.curve) >= 1
        assert all("max_rms_deg" in row for row in res.curve)
        assert isinstance(res.monotonicity_violations, list)  # logged, never fatal


class TestThresholdSearch:
    def test_infinite_band_returns_upper_bound(self, wscc_sys, wscc_model_set):
        scn = sim.Scenario(fault_bus=7, t_clear=0.1, t_end=2.0)
        pol = sim.SwitchPolicy()
        res = study.threshold_search(
            wscc_sys, wscc_model_set, scn, pol,
            max_deg=5.0, max_error_deg=float("inf"),
        )
        assert res.threshold_deg == 5.0 and res.satisfied

    def test_zero_band_returns_zero(self, wscc_sys, wscc_model_set):
        scn = sim.Scenario(fault_bus=7, t_clear=0.1, t_end=2.0)
        pol = sim.SwitchPolicy()
        res = study.threshold_search(
            wscc_sys, wscc_model_set, scn, pol, max_deg=3.0, max_error_deg=0.0,
        )
        assert res.threshold_deg == 0.0 and not res.satisfied

    def test_curve_recorded(self, wscc_sys, wscc_model_set):
        scn = sim.Scenario(fault_bus=7, t_clear=0.1, t_end=2.0)
        pol = sim.SwitchPolicy()
        res = study.threshold_search(
            wscc_sys, wscc_model_set, scn, pol, start_deg=5.0, step_deg=10.0,
            max_deg=35.0, max_error_deg=5.0,
        )
        assert len(res.curve) >= 1
        assert res.metric == "rms"


class TestTiming:
    def test_self_ratio_near_one(self, wscc_sys):
        scn = sim.Scenario(fault_bus=7, t_clear=0.05, t_end=1.0)
        pol = sim.SwitchPolicy(mode="force_full")
        rows = study.timing_compare(
            wscc_sys, None, scn, pol, modes=("force_full", "force_full"),
            repetitions=5,
        )
        ratio = rows[0].median_s / rows[1].median_s
        assert 0.5 < ratio < 2.0

    def test_flop_model_relations(self, wscc_sys):
        n = wscc_sys.n_states
        full = study.count_flops_full(wscc_sys)
        red = study.count_flops_reduced(n, 30, 36)
        unf = study.count_flops_unfolded(n)
        assert red < 0.5 * unf
        assert study.count_flops_linear(n) < red
        # the dense unfolded evaluation dwarfs everything else
        assert unf > 100 * full

    def test_repetition_floor(self, wscc_sys):
        scn = sim.Scenario(fault_bus=7, t_clear=0.05, t_end=0.5)
        with pytest.raises(ValueError):
            study.timing_compare(wscc_sys, None, scn,
                                 sim.SwitchPolicy(mode="force_full"),
                                 modes=("force_full",), repetitions=0)


class TestLoadSweep:
    def test_mini_sweep(self, wscc_sys, wscc_model_set):
        pol = sim.SwitchPolicy()
        rep = study.load_sweep(
            wscc_sys, wscc_model_set, pol, 7, levels=(0.95, 1.0, 1.15),
            t_end=8.0, cct_max=1.0,
        )
        assert len(rep.rows) == 3
        by_level = {r["level"]: r for r in rep.rows}
        assert by_level[1.0]["model_level"] == 1.0 and not by_level[1.0]["swapped"]
        assert by_level[1.15]["model_level"] == 1.2 and by_level[1.15]["swapped"]
        for r in rep.rows:
            assert "max_rms_deg" in r
            assert r["cct_s"] > 0

    def test_report_writers(self, tmp_path, wscc_sys, wscc_model_set):
        pol = sim.SwitchPolicy()
        rep = study.load_sweep(
            wscc_sys, wscc_model_set, pol, 7, levels=(1.0,), t_end=4.0, cct_max=0.5,
        )
        rep.config["config_hash"] = "cafe"
        rep.write_json(tmp_path / "r.json")
        rep.write_csv(tmp_path / "r.csv")
        import json

        payload = json.loads((tmp_path / "r.json").read_text())
        assert payload["kind"] == "load_sweep"
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0].startswith("# tensorsim")
        assert "level" in lines[1].split(",")
        # identical rewrite is byte-identical
        rep.write_json(tmp_path / "r2.json")
        assert (tmp_path / "r.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
