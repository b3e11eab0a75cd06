"""Deterministic synthetic flight recordings for desk-scale experiments.

A crude longitudinal point-mass model, integrated at 1 Hz:

* airspeed ``V`` follows ``dV/dt = a * (throttle - throttle_eq(V))`` where
  ``throttle_eq`` is the setting that balances parasite (``~V^2``) and
  induced (``~1/V^2``) drag;
* the pilot holds altitude, so angle of attack tracks the trim value
  ``alpha_trim(V) = -1 + 3.5 * w * (240/V)^2`` (``w`` is a per-flight weight
  factor) with a short lag;
* vertical speed sinks quadratically once AoA passes 9 deg and hard at stall;
* pitch is AoA plus the flight-path angle implied by vertical speed.

Profiles:

``cruise``
    Throttle steps, gentle turns and climbs/descents; AoA stays well below
    the warning threshold.
``gradual_stall``
    Cruise, then a 20-35 s throttle reduction to idle; the aircraft
    decelerates and AoA rises monotonically until the warning, holds near
    stall for 8-20 s, then recovers with full power and nose-down input.
``abrupt_stall``
    Cruise, then a sudden pull that drives AoA past stall within <= 3 s with
    no preceding drift, a short hold, and recovery.

``stall_warning[t]`` is exactly ``angle_of_attack[t] >= warning_margin *
stall_aoa_deg`` on the emitted channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import COLUMNS, TimeSeries
from .errors import InvalidArgument

KINDS = ("cruise", "gradual_stall", "abrupt_stall")

# per-channel measurement noise std at noise_level = 1
NOISE_STD = {
    "indicated_airspeed": 0.4,
    "true_airspeed": 0.5,
    "elevator_input": 0.01,
    "aileron_input": 0.02,
    "rudder_input": 0.01,
    "pitch": 0.05,
    "roll": 0.2,
    "angle_of_attack": 0.03,
    "throttle_1": 0.002,
    "throttle_2": 0.002,
    "thrust_1": 60.0,
    "thrust_2": 60.0,
    "rpm_1": 1.5,
    "rpm_2": 1.5,
    "elevator_deflection": 0.05,
    "vertical_speed": 25.0,
}

V_REF = 240.0
THROTTLE_REF = 0.7
THRUST_MAX_N = 36000.0
KT_TO_FPM = 101.27


@dataclass
class FlightProfile:
    kind: str = "cruise"
    duration_s: int = 420
    base_speed: float = 240.0
    stall_aoa_deg: float = 15.0
    warning_margin: float = 0.85
    noise_level: float = 1.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown profile kind {self.kind!r}")
        if self.duration_s != int(self.duration_s):
            raise InvalidArgument("duration_s must be a whole number of seconds")
        self.duration_s = int(self.duration_s)
        if self.duration_s < 1:
            raise InvalidArgument("duration_s must be >= 1")
        if self.kind != "cruise" and self.duration_s < 40:
            raise InvalidArgument("stall profiles need duration_s >= 40")
        if not 0.0 < self.warning_margin < 1.0:
            raise InvalidArgument("warning_margin must lie in (0, 1)")
        if self.stall_aoa_deg <= 6.0:
            raise InvalidArgument("stall_aoa_deg must exceed cruise AoA range (> 6 deg)")
        if not 150.0 <= self.base_speed <= 300.0:
            raise InvalidArgument("base_speed must lie in [150, 300] kt")
        if self.noise_level < 0:
            raise InvalidArgument("noise_level must be >= 0")

    @property
    def warning_aoa(self):
        return self.warning_margin * self.stall_aoa_deg


def throttle_eq(V):
    r = V / V_REF
    return min(1.0, THROTTLE_REF * (0.8 * r * r + 0.2 / (r * r)))


def alpha_trim(V, weight=1.0):
    return -1.0 + 3.5 * weight * (V_REF / V) ** 2


class _Sim:
    """Accumulates the true state history one step at a time."""

    def __init__(self, V, throttle, weight, decel_gain, rng):
        self.V = V
        self.throttle = throttle
        self.alpha = alpha_trim(V, weight)
        self.weight = weight
        self.gain = decel_gain
        self.rng = rng
        self.rows = []

    def step(self, throttle, roll=0.0, vs_cmd=0.0, elev_in=None, alpha=None, extra_dv=0.0):
        self.throttle = float(np.clip(throttle, 0.0, 1.0))
        self.V += self.gain * (self.throttle - throttle_eq(self.V)) + extra_dv
        self.V = max(self.V, 60.0)
        load = 1.0 / math.cos(math.radians(roll))
        if alpha is None:
            target = alpha_trim(self.V, self.weight) * load + vs_cmd / 1000.0
            self.alpha += 0.6 * (target - self.alpha)
        else:
            self.alpha = alpha
        if elev_in is None:
            elev_in = 0.05 * (self.alpha - 2.0) + vs_cmd / 4000.0
        vs = vs_cmd - 120.0 * max(0.0, self.alpha - 9.0) ** 2
        self.rows.append((self.V, self.alpha, self.throttle, roll, vs, elev_in))


def _approach(rng, V0, throttle0, weight, gain, warn_aoa):
    """Throttle-back deceleration from V0 until trim AoA reaches warn_aoa."""
    ramp = int(rng.integers(20, 36))
    idle = float(rng.uniform(0.05, 0.2))
    sim = _Sim(V0, throttle0, weight, gain, rng)
    sim.alpha = alpha_trim(V0, weight)
    k = 0
    while True:
        frac = min(1.0, (k + 1) / ramp)
        thr = throttle0 + frac * (idle - throttle0)
        sim.V += gain * (thr - throttle_eq(sim.V))
        sim.throttle = thr
        sim.alpha = alpha_trim(sim.V, weight)
        vs = -120.0 * max(0.0, sim.alpha - 9.0) ** 2
        sim.rows.append((sim.V, sim.alpha, thr, 0.0, vs, 0.05 * (sim.alpha - 2.0)))
        k += 1
        if sim.alpha >= warn_aoa and k >= ramp:
            return sim.rows, idle
        if k > 2000:
            raise RuntimeError("approach failed to reach the warning AoA")


def _cruise_segment(sim, n, cruise_throttle, rng, maneuvers=True):
    """n steps of cruise with optional throttle steps, turns and climbs."""
    t = 0
    thr_target = cruise_throttle
    roll_target = 0.0
    vs_target = 0.0
    roll = 0.0
    vs = 0.0
    while t < n:
        if maneuvers and rng.random() < 0.03:
            choice = rng.integers(0, 3)
            if choice == 0:
                thr_target = float(np.clip(cruise_throttle + rng.uniform(-0.2, 0.15), 0.45, 0.85))
            elif choice == 1:
                roll_target = float(rng.choice([-1, 1]) * rng.uniform(10, 25)) if roll_target == 0 else 0.0
            else:
                vs_target = float(rng.uniform(-1000, 1000)) if vs_target == 0 else 0.0
        roll += float(np.clip(roll_target - roll, -3.0, 3.0))
        vs += float(np.clip(vs_target - vs, -200.0, 200.0))
        thr = sim.throttle + float(np.clip(thr_target - sim.throttle, -0.02, 0.02))
        # keep speed in the cruise band regardless of maneuvers
        if sim.V < 175.0:
            thr_target = max(thr_target, 0.75)
        sim.step(thr, roll=roll, vs_cmd=vs, extra_dv=-vs / 6000.0)
        t += 1


def _recovery(sim, n, cruise_throttle, cruise_speed, stall_aoa):
    for k in range(n):
        if sim.V < cruise_speed - 5.0:
            thr = min(1.0, sim.throttle + 0.3)
            target = alpha_trim(sim.V, sim.weight) - 3.0
            elev = -0.4
        else:
            thr = sim.throttle + float(np.clip(cruise_throttle - sim.throttle, -0.05, 0.05))
            target = alpha_trim(sim.V, sim.weight)
            elev = None
        alpha = sim.alpha + 0.5 * (target - sim.alpha)
        sim.step(thr, elev_in=elev, alpha=min(alpha, stall_aoa + 2.0), extra_dv=2.5 if elev else 0.0)


def _stall_hold(sim, n, stall_aoa, rng, pull=0.6):
    floor = 0.9 * sim.V
    for _ in range(n):
        alpha = min(stall_aoa + 2.0, max(sim.alpha, alpha_trim(sim.V, sim.weight)) + rng.uniform(-0.1, 0.3))
        sim.step(sim.throttle, elev_in=pull, alpha=alpha, extra_dv=-0.5)
        # mushing descent trades height for speed instead of decelerating further
        sim.V = max(sim.V, floor)


def generate_flight(p):
    """One recording for ``p``; identical output for identical profiles."""
    if not isinstance(p, FlightProfile):
        raise InvalidArgument("generate_flight expects a FlightProfile")
    rng = np.random.default_rng([p.seed, KINDS.index(p.kind)])
    Vc = float(np.clip(p.base_speed + rng.uniform(-15, 15), 170.0, 300.0))
    weight = float(rng.uniform(0.9, 1.1))
    cruise_thr = throttle_eq(Vc)
    tas_factor = float(rng.uniform(1.1, 1.35))
    n = p.duration_s
    warn = p.warning_aoa
    monotone = None  # (start, stop) of the drift segment kept non-decreasing

    if p.kind == "cruise":
        sim = _Sim(Vc, cruise_thr, weight, 1.0, rng)
        _cruise_segment(sim, n, cruise_thr, rng)
        rows = sim.rows
    elif p.kind == "gradual_stall":
        gain = float(rng.uniform(1.2, 2.0))
        approach, idle = _approach(rng, Vc, cruise_thr, weight, gain, warn)
        hold = int(rng.integers(8, 21))
        tail = 40
        lead = int(rng.integers(20, 81))
        K = len(approach)
        if lead + K + hold + tail > n:
            lead = max(0, n - (K + hold + tail))
        crop = max(0, K + hold + tail - n)
        sim = _Sim(Vc, cruise_thr, weight, gain, rng)
        _cruise_segment(sim, lead, cruise_thr, rng, maneuvers=False)
        start = len(sim.rows)
        sim.rows.extend(approach[crop:])
        monotone = (start, len(sim.rows))
        last = approach[-1]
        sim.V, sim.alpha, sim.throttle = last[0], last[1], last[2]
        _stall_hold(sim, hold, p.stall_aoa_deg, rng)
        _recovery(sim, n - len(sim.rows), cruise_thr, Vc, p.stall_aoa_deg)
        rows = sim.rows[:n]
    else:
        lead = int(rng.integers(30, max(31, n - 60)))
        lead = min(lead, max(0, n - 30))
        sim = _Sim(Vc, cruise_thr, weight, 1.0, rng)
        _cruise_segment(sim, lead, cruise_thr, rng)
        ramp = int(rng.integers(2, 4))
        peak = p.stall_aoa_deg + float(rng.uniform(0.5, 3.0))
        a0 = sim.alpha
        for k in range(ramp):
            sim.step(sim.throttle, elev_in=float(rng.uniform(0.8, 1.0)),
                     alpha=a0 + (peak - a0) * (k + 1) / ramp, extra_dv=-2.0)
        _stall_hold(sim, int(rng.integers(3, 11)), p.stall_aoa_deg, rng, pull=0.9)
        _recovery(sim, max(0, n - len(sim.rows)), cruise_thr, Vc, p.stall_aoa_deg)
        rows = sim.rows[:n]

    values, alpha = _channels(np.asarray(rows), p, rng, tas_factor)
    if monotone is not None:
        a, b = monotone
        b = min(b, len(alpha))
        alpha[a:b] = np.maximum.accumulate(alpha[a:b])
        if a > 0:
            alpha[a:b] = np.maximum(alpha[a:b], alpha[a - 1])
    if p.kind == "cruise":
        alpha = np.minimum(alpha, warn - 1.0)
    values[:, COLUMNS.index("angle_of_attack")] = alpha
    warning = (alpha >= warn).astype(np.int8)
    return TimeSeries(values, warning, 1.0, p.name or f"{p.kind}_{p.seed}", p.kind)


def _channels(rows, p, rng, tas_factor):
    V, alpha, thr, roll, vs, elev = rows.T
    n = len(V)
    lvl = p.noise_level

    def noise(name):
        return rng.normal(0.0, NOISE_STD[name] * lvl, n)

    gamma = np.degrees(np.arcsin(np.clip(vs / (V * KT_TO_FPM), -1, 1)))
    droll = np.diff(roll, prepend=roll[0])
    ail = np.clip(droll / 6.0 + noise("aileron_input"), -1, 1)
    thr1 = np.clip(thr + noise("throttle_1"), 0, 1)
    thr2 = np.clip(thr + noise("throttle_2"), 0, 1)
    thrust_scale = THRUST_MAX_N * np.clip(1.0 - 0.3 * V / 300.0, 0.3, 1.0)
    out = {
        "indicated_airspeed": V + noise("indicated_airspeed"),
        "true_airspeed": V * tas_factor + noise("true_airspeed"),
        "elevator_input": np.clip(elev + noise("elevator_input"), -1, 1),
        "aileron_input": ail,
        "rudder_input": np.clip(0.3 * ail + noise("rudder_input"), -1, 1),
        "pitch": alpha + gamma + noise("pitch"),
        "roll": roll + noise("roll"),
        "angle_of_attack": alpha + noise("angle_of_attack"),
        "throttle_1": thr1,
        "throttle_2": thr2,
        "thrust_1": thr1 * thrust_scale + noise("thrust_1"),
        "thrust_2": thr2 * thrust_scale + noise("thrust_2"),
        "rpm_1": 850.0 + 170.0 * thr1 + noise("rpm_1"),
        "rpm_2": 850.0 + 170.0 * thr2 + noise("rpm_2"),
        "elevator_deflection": 20.0 * elev + 0.3 * alpha + noise("elevator_deflection"),
        "vertical_speed": vs + noise("vertical_speed"),
    }
    values = np.column_stack([out[c] for c in COLUMNS])
    return values, values[:, COLUMNS.index("angle_of_attack")].copy()


def generate_corpus(n_cruise=60, n_gradual=120, n_abrupt=0, seed=0, **profile_kw):
    """Flights of each kind with per-flight seeds spawned from ``seed``.

    Names encode kind and index (``gradual_stall_0007``); ``TimeSeries.kind``
    carries the kind as metadata.
    """
    counts = {"cruise": n_cruise, "gradual_stall": n_gradual, "abrupt_stall": n_abrupt}
    if any(c < 0 for c in counts.values()):
        raise InvalidArgument("flight counts must be >= 0")
    out = []
    for ki, kind in enumerate(KINDS):
        seeds = np.random.SeedSequence([seed, ki]).generate_state(max(counts[kind], 1))
        for i in range(counts[kind]):
            prof = FlightProfile(kind=kind, seed=int(seeds[i]), name=f"{kind}_{i:04d}", **profile_kw)
            out.append(generate_flight(prof))
    return out


def first_warning(ts):
    idx = np.flatnonzero(ts.warning)
    return int(idx[0]) if idx.size else -1
