"""Figures of merit extracted from read transients: decision, readout delay,
average power (integrated and closed form), sense margin, clamp-gate
disturbance and the read-disturbance check."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .devices import MtjState
from .senseamps import TimingPlan, default_timing
from .solver import TransientResult

DECISION_BAND = 0.010  # volts; |SAOUT - SAOUTB| below this is indeterminate
DEFAULT_FREQUENCY = 66.7e6
RD_FRACTION = 0.20
# word-line feed-through settles within this time after WL rises; the read
# current is judged after it
RD_SETTLE = 0.25e-9
# DC rails of a read path: (source, node)
SUPPLY_RAILS = (("VDD", "vdd"), ("VC", "vc"), ("VR", "vr"))


class MetricError(ValueError):
    pass


class Decision(str, enum.Enum):
    P = "P"
    AP = "AP"
    INDETERMINATE = "indeterminate"

    @classmethod
    def of(cls, state: MtjState) -> "Decision":
        return cls(MtjState(state).value)


class RdVerdict(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"


@dataclass(frozen=True)
class ReadoutMetrics:
    decision: Decision
    delay: float  # NaN when the decision is indeterminate
    power_avg: float
    sense_margin: float
    i_rd_peak: float


@dataclass(frozen=True)
class PowerModel:
    """alpha * C_total * V_swing * V_DD * f"""
    activity: float
    c_total: float
    v_swing: float
    vdd: float
    f: float = DEFAULT_FREQUENCY

    def __post_init__(self):
        for name in ("activity", "c_total", "v_swing", "vdd", "f"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"PowerModel.{name} must be finite and >= 0, got {v!r}")


def _outputs(tr: TransientResult) -> Tuple[np.ndarray, np.ndarray]:
    for node in ("saout", "saoutb"):
        if not tr.has_node(node):
            raise MetricError(f"transient result has no {node!r} node")
    return tr.v("saout"), tr.v("saoutb")


def classify(diff: float, band: float = DECISION_BAND) -> Decision:
    """AP pulls SAOUT high; P pulls it low."""
    if not math.isfinite(diff) or abs(diff) <= band:
        return Decision.INDETERMINATE
    return Decision.AP if diff > 0 else Decision.P


def output_difference(tr: TransientResult, t: float) -> float:
    so, sob = _outputs(tr)
    return float(np.interp(t, tr.times, so - sob))


def extract_decision(tr: TransientResult, timing: Optional[TimingPlan] = None) -> Decision:
    timing = timing or default_timing()
    t = timing.decision_time
    if tr.times[-1] < t:
        raise MetricError(f"transient ends at {tr.times[-1]:.4g} s, before the decision at {t:.4g} s")
    return classify(output_difference(tr, t))


def extract_readout_delay(tr: TransientResult, timing: Optional[TimingPlan] = None) -> float:
    """Time from the SAE rising edge to the first crossing of
    ``|SAOUT - SAOUTB| = VDD/2`` in the direction of the final decision."""
    timing = timing or default_timing()
    decision = extract_decision(tr, timing)
    if decision is Decision.INDETERMINATE:
        raise MetricError("readout delay is undefined for an indeterminate decision")
    so, sob = _outputs(tr)
    sign = 1.0 if decision is Decision.AP else -1.0
    s = sign * (so - sob)
    t = tr.times
    t0 = timing.sae_rise
    threshold = 0.5 * timing.vdd
    k0 = int(np.searchsorted(t, t0, side="left"))
    s0 = float(np.interp(t0, t, s))
    if s0 >= threshold:
        return 0.0
    hits = np.flatnonzero(s[k0:] >= threshold)
    if hits.size == 0:
        raise MetricError("no decision within window")
    k = k0 + int(hits[0])
    ta, sa = (t0, s0) if k == k0 else (t[k - 1], s[k - 1])
    tb, sb = t[k], s[k]
    if tb == ta or sb == sa:
        return float(tb - t0)
    return float(ta + (threshold - sa) * (tb - ta) / (sb - sa) - t0)


def extract_power_integrated(tr: TransientResult, vdd: float, f: float = DEFAULT_FREQUENCY) -> float:
    """Cycle energy drawn from the supply times the cycle frequency."""
    i = np.asarray(tr.supply_current, dtype=float)
    energy = float(np.trapezoid(vdd * i, tr.times))
    return f * energy


def extract_supply_power(tr: TransientResult, rails: Sequence[Tuple[str, str]] = SUPPLY_RAILS,
                         f: float = DEFAULT_FREQUENCY) -> float:
    """Cycle energy delivered by every DC rail present in ``tr`` times ``f``.

    ``rails`` pairs a source name with the node it drives.  The clamp bias
    rails are switched per read and charge the clamp gates (and C1/C2 where
    present), so their energy is part of the read cost.
    """
    currents = {k.lower(): v for k, v in tr.source_currents.items()}
    energy = 0.0
    for source, node in rails:
        i = currents.get(source.lower())
        if i is None or not tr.has_node(node):
            continue
        energy += float(np.trapezoid(tr.v(node) * np.asarray(i, dtype=float), tr.times))
    return f * energy


def power_dynamic_model(m: PowerModel) -> float:
    return m.activity * m.c_total * m.v_swing * m.vdd * m.f


def sense_margin(tr: TransientResult, timing: Optional[TimingPlan] = None) -> float:
    """|V_BL - V_REFL| at the SAE1 rising edge."""
    timing = timing or default_timing()
    for node in ("bl", "refl"):
        if not tr.has_node(node):
            raise MetricError(f"transient result has no {node!r} node")
    return abs(tr.at("bl", timing.sae1_rise) - tr.at("refl", timing.sae1_rise))


def check_read_disturbance(i_rd_peak: float, i_c: float) -> RdVerdict:
    if not i_c > 0:
        raise ValueError("critical current must be positive")
    return RdVerdict.PASS if abs(i_rd_peak) < RD_FRACTION * i_c else RdVerdict.FAIL


def read_current_window(timing: Optional[TimingPlan] = None) -> Tuple[float, float]:
    """Interval over which the cell read current is judged: from the end of the
    word-line feed-through transient to the start of the WL falling edge."""
    timing = timing or default_timing()
    return timing.wl.points[0][0] + timing.edge_time + RD_SETTLE, timing.decision_time


def extract_metrics(tr: TransientResult, timing: Optional[TimingPlan] = None,
                    f: float = DEFAULT_FREQUENCY) -> ReadoutMetrics:
    timing = timing or default_timing()
    decision = extract_decision(tr, timing)
    delay = math.nan
    if decision is not Decision.INDETERMINATE:
        try:
            delay = extract_readout_delay(tr, timing)
        except MetricError:
            delay = math.nan
    peak = max(tr.mtj_peak_current.values(), default=0.0)
    return ReadoutMetrics(decision=decision, delay=delay,
                          power_avg=extract_supply_power(tr, SUPPLY_RAILS, f),
                          sense_margin=sense_margin(tr, timing), i_rd_peak=float(peak))


@dataclass(frozen=True)
class GateDisturbance:
    """Peak excursions (volts) of the clamp gate nodes from their bias."""
    mc_gate: float
    mr_gate: float
    differential: float


def gate_disturbance(tr: TransientResult, timing: Optional[TimingPlan] = None,
                     mc_gate: str = "vcg", mr_gate: str = "vrg") -> GateDisturbance:
    """Disturbance of the MC/MR gates over the decision phase (SAE1 rise to
    WL fall).  ``differential`` is the peak of the difference of the two
    excursions, the part that unbalances the data and reference currents."""
    timing = timing or default_timing()
    m = (tr.times >= timing.sae1_rise) & (tr.times <= timing.decision_time)
    dc = tr.v(mc_gate)[m] - timing.vc
    dr = tr.v(mr_gate)[m] - timing.vr
    return GateDisturbance(float(np.abs(dc).max()), float(np.abs(dr).max()),
                           float(np.abs(dc - dr).max()))
