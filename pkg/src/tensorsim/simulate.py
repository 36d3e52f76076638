"""Fixed-step time-domain simulation with adaptive model switching.

One contingency run has three phases: full nonlinear model before and
during the fault, then post-fault either the hybrid model (while the
study-area rotor deviation exceeds the angle threshold) or the reduced
Taylor model.  The post-fault switch is one way: once the deviation drops
below the threshold the run stays on the reduced model, which prevents
chattering without a hysteresis band.

Load tracking: when the scenario's load level differs from the active
representative model level by more than the configured fraction, the
Taylor model is swapped for the nearest representative level in the
direction of the change before the run starts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import power_model as pm
from .taylor import (
    ModelSet,
    build_hybrid,
    hybrid_rhs,
    linear_rhs,
    reduced_rhs,
    select_boundary_generators,
)

__all__ = [
    "MODES",
    "Scenario",
    "SwitchPolicy",
    "SwitchEvent",
    "Trajectory",
    "rk4_step",
    "integrate",
    "max_rotor_deviation",
    "select_reference_generator",
    "resolve_active_level",
    "run_adaptive",
    "export_trajectory_csv",
    "export_switch_log",
]

MODES = ("adaptive", "force_full", "force_hybrid", "force_taylor", "force_linear")
TRAJECTORY_FORMAT = "trajectory-v1"
SWITCHLOG_FORMAT = "switchlog-v1"


@dataclass(frozen=True)
class Scenario:
    """Self-clearing three-phase bus fault at a given operating point."""

    fault_bus: int
    t_clear: float
    t_fault_on: float = 0.0
    t_end: float = 16.0
    load_level: float = 1.0


@dataclass(frozen=True)
class SwitchPolicy:
    angle_threshold_deg: float = 26.0
    load_change_fraction: float = 0.10
    reference_generator: str | None = None
    representative_levels: tuple = (0.8, 1.0, 1.2)
    mode: str = "adaptive"
    norm_threshold_pu: float = 1.0

    def __post_init__(self):
        if self.angle_threshold_deg <= 0:
            raise ValueError("angle threshold must be > 0")
        if not 0.0 < self.load_change_fraction < 1.0:
            raise ValueError("load change fraction must be in (0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode '{self.mode}'")


@dataclass
class SwitchEvent:
    t: float
    from_mode: str
    to_mode: str
    reason: str
    level: float


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    switch_log: list = field(default_factory=list)
    modes: list = field(default_factory=list)  # model mode used on step k
    completed: bool = True
    blowup_time: float | None = None
    unstable_at: float | None = None

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


def rk4_step(f, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(rhs, x_init, t_span, dt: float) -> Trajectory:
    """Classical fixed-step RK4 with every step recorded.

    A non-finite state truncates the trajectory and flags it rather than
    raising: blow-ups are a legitimate outcome (they signal instability).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    t0, t1 = t_span
    steps = int(round((t1 - t0) / dt))
    x = np.array(x_init, dtype=float)
    states = np.empty((steps + 1, x.size))
    states[0] = x
    blowup = None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            x = rk4_step(rhs, x, dt)
            if not np.all(np.isfinite(x)):
                blowup = t0 + (k + 1) * dt
                states = states[: k + 1]
                break
            states[k + 1] = x
    times = t0 + np.arange(states.shape[0]) * dt
    return Trajectory(
        times=times,
        states=states,
        completed=blowup is None,
        blowup_time=blowup,
    )


def max_rotor_deviation(x, x_base, ref_pos: int, study_pos) -> float:
    """Largest study-area change of rotor angle relative to the reference
    machine since the base state, in degrees.

    Referencing removes common drift; a uniform shift of every angle
    (including the reference) reads as zero deviation.
    """
    x = np.asarray(x)
    x_base = np.asarray(x_base)
    d_idx = np.asarray(study_pos, dtype=int) * pm.N_STATES
    ref = ref_pos * pm.N_STATES
    rel_now = x[d_idx] - x[ref]
    rel_base = x_base[d_idx] - x_base[ref]
    if d_idx.size == 0:
        return 0.0
    return float(np.max(np.abs(rel_now - rel_base)) * 180.0 / math.pi)


def select_reference_generator(sys: pm.SystemModel, norms: dict | None = None,
                               norm_threshold: float = 1.0):
    """Reference machine for angle differencing: the highest-inertia
    external machine that is electrically far from the study boundary
    (column norm below threshold), ties broken by lowest id.  If every
    external machine is close, falls back to the global inertia maximum
    and reports the fallback."""
    if norms is None:
        norms = pm.admittance_column_norms(sys)
    far = [g for g in sys.external if norms.get(g, 0.0) < norm_threshold]
    pool = far
    fallback = False
    if not pool:
        pool = [m.id for m in sys.machines]
        fallback = True
    h_of = {m.id: m.h for m in sys.machines}
    best = sorted(pool, key=lambda g: (-h_of[g], g))[0]
    return best, fallback


def resolve_active_level(levels, scenario_level: float, fraction: float):
    """Representative level serving a scenario.

    Starts from the level nearest nominal (1.0); if the scenario level
    differs by strictly more than ``fraction`` (with a 1e-12 guard so
    exact boundary arithmetic like |1.1 - 1.0| does not trip on float
    representation), swaps to the nearest level in the direction of the
    change.
    """
    levels = sorted(levels)
    active = min(levels, key=lambda l: (abs(l - 1.0), l))
    if abs(scenario_level - active) > fraction + 1e-12:
        if scenario_level > active:
            side = [l for l in levels if l > active]
        else:
            side = [l for l in levels if l < active]
        if side:
            new = min(side, key=lambda l: (abs(l - scenario_level), l))
            return new, new != active
    return active, False


def _grid_step(t: float, dt: float, what: str) -> int:
    k = int(round(t / dt))
    if abs(k * dt - t) > 1e-9:
        raise ValueError(f"{what}={t} is not on the {dt} s step grid")
    return k


def run_adaptive(
    sys: pm.SystemModel,
    model_set: ModelSet | None,
    scenario: Scenario,
    policy: SwitchPolicy,
    dt: float = 0.01,
    *,
    instability_stop_deg: float | None = None,
) -> Trajectory:
    """Simulate one contingency under the switching policy.

    The system must already be solved at the scenario load level.  All
    five policy modes share this driver (and its integrator), so timing
    comparisons between modes isolate right-hand-side cost.
    """
    if abs(sys.load_level - scenario.load_level) > 1e-12:
        raise ValueError(
            f"system solved at load level {sys.load_level}, scenario wants "
            f"{scenario.load_level}"
        )
    k_on = _grid_step(scenario.t_fault_on, dt, "t_fault_on")
    k_clear = _grid_step(scenario.t_clear, dt, "t_clear")
    k_end = _grid_step(scenario.t_end, dt, "t_end")
    if not 0 <= k_on <= k_clear <= k_end:
        raise ValueError("need 0 <= t_fault_on <= t_clear <= t_end")

    log = [SwitchEvent(0.0, "none", "full", "start", sys.load_level)]

    model = None
    hybrid = None
    if policy.mode != "force_full":
        if model_set is None:
            raise ValueError("this policy mode needs a prebuilt model set")
        active, swapped = resolve_active_level(
            model_set.levels, scenario.load_level, policy.load_change_fraction
        )
        if active not in model_set.models:
            raise ValueError(f"missing model for required level {active}")
        model = model_set.models[active]
        if swapped:
            log.append(SwitchEvent(0.0, "full", "full", "load_level_swap", active))
        if policy.mode in ("adaptive", "force_hybrid"):
            keep = select_boundary_generators(sys, policy.norm_threshold_pu)
            hybrid = build_hybrid(sys, model, keep)

    if policy.reference_generator is not None:
        ref_id = policy.reference_generator
        sys.machine_pos(ref_id)  # existence check
    else:
        ref_id, fallback = select_reference_generator(
            sys, norm_threshold=policy.norm_threshold_pu
        )
        if fallback:
            log.append(SwitchEvent(0.0, "full", "full", "reference_fallback_max_inertia", sys.load_level))
    ref_pos = sys.machine_pos(ref_id)
    study_pos = sys.study_idx

    yred_pre = sys.y_red
    yred_fault = pm.apply_fault(sys, scenario.fault_bus) if k_clear > k_on else None

    def rhs_pre(x):
        return pm._rhs(sys, yred_pre, x)

    def rhs_fault(x):
        return pm._rhs(sys, yred_fault, x)

    def rhs_hybrid(x):
        return hybrid_rhs(hybrid, x, sys, yred=yred_pre)

    def rhs_taylor(x):
        return reduced_rhs(model, x - model.x0)

    def rhs_linear(x):
        return linear_rhs(model, x - model.x0)

    forced_post = {
        "force_full": ("full", rhs_pre),
        "force_hybrid": ("hybrid", rhs_hybrid),
        "force_taylor": ("taylor", rhs_taylor),
        "force_linear": ("linear", rhs_linear),
    }

    n = sys.n_states
    states = np.empty((k_end + 1, n))
    x = sys.x0.copy()
    states[0] = x
    x_base = sys.x0
    modes = []
    current = "full"
    taylor_locked = False
    blowup = None
    unstable_at = None
    stop_rad = (
        math.radians(instability_stop_deg) if instability_stop_deg is not None else None
    )
    d_idx = study_pos * pm.N_STATES
    ref_d = ref_pos * pm.N_STATES

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(k_end):
            t = k * dt
            if k < k_on:
                mode_now, rhs = "full", rhs_pre
                reason = None
            elif k < k_clear:
                mode_now, rhs = "full", rhs_fault
                reason = None
            elif policy.mode == "adaptive":
                if not taylor_locked:
                    dev = max_rotor_deviation(x, x_base, ref_pos, study_pos)
                    if dev <= policy.angle_threshold_deg:
                        taylor_locked = True
                if taylor_locked:
                    mode_now, rhs = "taylor", rhs_taylor
                    reason = (
                        "deviation_below_threshold"
                        if current == "hybrid"
                        else "post_fault_small_disturbance"
                    )
                else:
                    mode_now, rhs = "hybrid", rhs_hybrid
                    reason = "post_fault_large_disturbance"
            else:
                mode_now, rhs = forced_post[policy.mode]
                reason = "post_fault_forced"
            if mode_now != current:
                log.append(
                    SwitchEvent(t, current, mode_now, reason or "switch",
                                model.load_level if model is not None else sys.load_level)
                )
                current = mode_now
            modes.append(mode_now)
            x = rk4_step(rhs, x, dt)
            if not np.all(np.isfinite(x)):
                blowup = (k + 1) * dt
                states = states[: k + 1]
                break
            states[k + 1] = x
            if stop_rad is not None and unstable_at is None and d_idx.size:
                if np.max(np.abs(x[d_idx] - x[ref_d])) > stop_rad:
                    unstable_at = (k + 1) * dt
                    states = states[: k + 2]
                    break

    times = np.arange(states.shape[0]) * dt
    return Trajectory(
        times=times,
        states=states,
        switch_log=log,
        modes=modes[: states.shape[0] - 1],
        completed=blowup is None and unstable_at is None,
        blowup_time=blowup,
        unstable_at=unstable_at,
    )


def export_trajectory_csv(traj: Trajectory, sys: pm.SystemModel, path, meta: dict | None = None) -> None:
    """CSV export: one comment line with provenance, a header of
    ``time,<machine>.<state>`` columns, then one row per step at full
    float precision."""
    from . import __version__

    meta = meta or {}
    labels = pm.state_labels(sys.machines)
    with open(path, "w") as fh:
        tags = " ".join(f"{k}={v}" for k, v in sorted(meta.items()))
        fh.write(f"# tensorsim {__version__} format={TRAJECTORY_FORMAT} {tags}".rstrip() + "\n")
        fh.write("time," + ",".join(labels) + "\n")
        data = np.column_stack([traj.times, traj.states])
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def export_switch_log(traj: Trajectory, path, meta: dict | None = None) -> None:
    """JSON-lines export: a header record, then one record per event."""
    from . import __version__

    head = {"format": SWITCHLOG_FORMAT, "version": __version__}
    head.update(meta or {})
    with open(path, "w") as fh:
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for ev in traj.switch_log:
            rec = {"t": ev.t, "from": ev.from_mode, "to": ev.to_mode,
                   "reason": ev.reason, "level": ev.level}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
