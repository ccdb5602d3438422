"""Read-path netlists for the current-mode, voltage-mode and neutralized
voltage-mode sense amplifiers, their clock plan and the neutralization
balance relations.

Read cycle: BL and REFL are held at ground while WL is low.  WL opens the
cells at 0 ns together with the VC/VR clamp biases, and the clamps MC/MR, whose sources sit on BL/REFL, set the
read currents while SAE is low and the pmos pre-charge devices hold
SAOUT/SAOUTB at VDD.  SAE releases the pre-charge at 0.5 ns and the clamp
currents start discharging the output nodes.  SAE1 at 0.75 ns fires the
latch tail and opens the isolation switches between the lines and the
cells, so the decision finishes without read current.  The decision is
sampled when WL falls at 1 ns.

Polarity convention: an AP data cell conducts less than the reference, so
SAOUT stays high; a P data cell pulls SAOUT low.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from .devices import (DEFAULT_MOS, NOMINAL_AREA, NOMINAL_TOX, MosParams, MtjParams,
                      MtjState, Waveform, mos_caps, mtj_critical_current, mtj_resistance)
from .netlist import ElementLine, Netlist, format_value

# default clock plan
WL_RISE, WL_WIDTH = 0.0, 1e-9
SAE_RISE, SAE_WIDTH = 0.5e-9, 0.5e-9
SAE1_RISE, SAE1_WIDTH = 0.75e-9, 0.25e-9
EDGE = 10e-12
VDD, VC, VR = 1.0, 0.8, 0.7


class SenseAmpKind(str, enum.Enum):
    CSA = "CSenseAmp"
    VSA = "VSenseAmp"
    NVSA = "NVSenseAmp"


class ReferenceConfig(str, enum.Enum):
    SINGLE_P = "single_P"
    MULTI_3S = "multi_3S"

    @property
    def series_count(self) -> int:
        return 3 if self is ReferenceConfig.MULTI_3S else 1

    @property
    def area_scale(self) -> float:
        return 3.0 if self is ReferenceConfig.MULTI_3S else 1.0


DESIGNS: Dict[str, Tuple[SenseAmpKind, ReferenceConfig]] = {
    "csa-1ref": (SenseAmpKind.CSA, ReferenceConfig.SINGLE_P),
    "vsa-1ref": (SenseAmpKind.VSA, ReferenceConfig.SINGLE_P),
    "vsa-3s": (SenseAmpKind.VSA, ReferenceConfig.MULTI_3S),
    "nvsa-3s": (SenseAmpKind.NVSA, ReferenceConfig.MULTI_3S),
    "nvsa-1ref": (SenseAmpKind.NVSA, ReferenceConfig.SINGLE_P),
}

DESIGN_LABELS = {
    "csa-1ref": "CSenseAmp, single reference",
    "vsa-1ref": "VSenseAmp, single reference",
    "vsa-3s": "VSenseAmp, 3S reference",
    "nvsa-3s": "NVSenseAmp, 3S reference",
    "nvsa-1ref": "NVSenseAmp, single reference",
}


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class TimingPlan:
    wl: Waveform
    sae: Waveform
    sae1: Waveform
    vdd: float = VDD
    vc: float = VC
    vr: float = VR
    edge_time: float = EDGE

    def __post_init__(self):
        wl0, sae0, sae10 = (_rise_start(w) for w in (self.wl, self.sae, self.sae1))
        if wl0 != 0.0:
            raise ValueError("WL must rise at t=0")
        if not (sae0 > wl0 and sae10 > sae0):
            raise ValueError("clock order must be WL, SAE, SAE1")

    @property
    def sae_rise(self) -> float:
        return _rise_start(self.sae)

    @property
    def sae1_rise(self) -> float:
        return _rise_start(self.sae1)

    @property
    def decision_time(self) -> float:
        """WL falling edge: the end of the decision phase."""
        return _fall_start(self.wl)

    @property
    def end(self) -> float:
        return max(w.points[-1][0] for w in (self.wl, self.sae, self.sae1))

    def complement(self, w: Waveform) -> Waveform:
        return Waveform(tuple((t, self.vdd - v) for t, v in w.points))

    def bias(self, level: float) -> Waveform:
        """Clamp bias at ``level`` while WL is up and 0 V otherwise, so the
        clamps do not leak into the grounded lines between reads."""
        return Waveform(tuple((t, level * v / self.vdd) for t, v in self.wl.points))

    def isolation(self) -> Waveform:
        """Array isolation enable: on once WL is fully up, off at SAE1 rise."""
        start = _rise_start(self.wl) + self.edge_time
        return Waveform.pulse(0.0, self.vdd, start, self.sae1_rise - start, self.edge_time)


def _rise_start(w: Waveform) -> float:
    pts = w.points
    for (t0, v0), (t1, v1) in zip(pts, pts[1:]):
        if v1 > v0:
            return t0
    raise ValueError("waveform has no rising edge")


def _fall_start(w: Waveform) -> float:
    pts = w.points
    for (t0, v0), (t1, v1) in zip(pts, pts[1:]):
        if v1 < v0:
            return t0
    return pts[-1][0]


def default_timing() -> TimingPlan:
    """WL 0-1 ns, SAE 0.5-1 ns, SAE1 0.75-1 ns, 10 ps edges, VDD 1 V, VC 0.8 V, VR 0.7 V."""
    pulse = lambda start, width: Waveform.pulse(0.0, VDD, start, width, EDGE)
    return TimingPlan(wl=pulse(WL_RISE, WL_WIDTH), sae=pulse(SAE_RISE, SAE_WIDTH),
                      sae1=pulse(SAE1_RISE, SAE1_WIDTH), vdd=VDD, vc=VC, vr=VR,
                      edge_time=EDGE)


@dataclass(frozen=True)
class SenseAmpParams:
    """Sizing of the read path.  Lengths in metres, capacitances in farads."""
    c_bl: float = 50e-15
    c_refl: float = 50e-15
    clamp_w: float = 135e-9
    clamp_l: float = 240e-9
    # reference clamps are wider than MC so a P reference sits midway between
    # the P and AP data currents; each value centres the nominal decision
    # boundary of its design kind
    ref_clamp_w: float = 251.0e-9
    nv_ref_clamp_w: float = 249.4e-9
    csa_clamp_w: float = 70e-9
    csa_ref_clamp_w: float = 121.4e-9
    neutral_cap_w: Optional[float] = None  # None: match the clamp it neutralizes
    neutral_cap_l: Optional[float] = None
    bias_source_r: float = 10e3
    c_load: float = 2e-15
    access_w: float = 1e-6
    access_l: float = 60e-9
    ref_access_scale: float = 1.0
    precharge_w: float = 400e-9
    latch_n_w: float = 400e-9
    latch_p_w: float = 700e-9
    latch_l: float = 60e-9
    tail_w: float = 300e-9
    discharge_w: float = 400e-9
    iso_w: float = 400e-9
    eq_w: float = 800e-9
    mirror_w: float = 200e-9
    mirror_l: float = 120e-9
    mirror_ratio: float = 0.25
    tail_clock: str = "sae1"  # "sae1" or "sae"
    iso_position: str = "cell"  # "cell" or "clamp"
    mtj: MtjParams = field(default_factory=MtjParams)

    def __post_init__(self):
        if not (self.c_bl > 0 and self.c_refl > 0):
            raise ValueError("c_bl and c_refl must be positive")
        if not self.bias_source_r > 0:
            raise ValueError("bias_source_r must be positive")
        if self.tail_clock not in ("sae", "sae1"):
            raise ValueError("tail_clock must be 'sae' or 'sae1'")
        if self.iso_position not in ("cell", "clamp"):
            raise ValueError("iso_position must be 'cell' or 'clamp'")

    def clamp(self, kind: "SenseAmpKind", ref: bool) -> MosParams:
        """MC (``ref=False``) or MR (``ref=True``) of the given design kind."""
        kind = SenseAmpKind(kind)
        if kind is SenseAmpKind.CSA:
            w = self.csa_ref_clamp_w if ref else self.csa_clamp_w
        elif kind is SenseAmpKind.NVSA:
            w = self.nv_ref_clamp_w if ref else self.clamp_w
        else:
            w = self.ref_clamp_w if ref else self.clamp_w
        return MosParams.default("nmos", w, self.clamp_l)

    def neutral_cap(self, of_ref_clamp: bool) -> float:
        """Capacitance of C1 (neutralizes MR) or C2 (neutralizes MC)."""
        clamp = self.clamp(SenseAmpKind.NVSA, of_ref_clamp)
        w = self.neutral_cap_w if self.neutral_cap_w is not None else clamp.w
        l = self.neutral_cap_l if self.neutral_cap_l is not None else clamp.l
        return mos_caps(MosParams.default("nmos", w, l))[0]


class _Builder:
    def __init__(self, title: str):
        self.net = Netlist(title=title)

    def add(self, kind: str, name: str, nodes, **params):
        self.net.elements.append(ElementLine(kind, name, tuple(nodes), dict(params)))

    def r(self, name, a, b, value):
        self.add("resistor", name, (a, b), value=value)

    def c(self, name, a, b, value):
        self.add("capacitor", name, (a, b), value=value)

    def m(self, name, d, g, s, model, w, l):
        bulk = "0" if model == "nmos" else "vdd"
        self.add("mosfet", name, (d, g, s, bulk), model=model, w=w, l=l)

    def v(self, name, a, b, wave: Waveform):
        if len(wave.points) == 1:
            self.add("vsource", name, (a, b), dc=wave.points[0][1])
        else:
            self.add("vsource", name, (a, b), pwl=wave.points)

    def j(self, name, a, b, state: MtjState, p: MtjParams, area_scale=1.0):
        self.add("mtj", name, (a, b), state=state.value, area=p.area * area_scale, tox=p.tox0,
                 ra=p.ra_p, tmr=p.tmr, beta=p.beta, jc0=p.jc0, tox0=p.tox0)


DATA_MTJ = "JD"


def reference_mtj_names(ref: ReferenceConfig) -> List[str]:
    return ["JR"] if ref is ReferenceConfig.SINGLE_P else ["JR1", "JR2", "JR3"]


def build_design(kind: SenseAmpKind, ref: ReferenceConfig,
                 params: SenseAmpParams = SenseAmpParams(),
                 data_state: MtjState = MtjState.P,
                 timing: Optional[TimingPlan] = None,
                 neutralize: Optional[bool] = None) -> Netlist:
    """Emit the read-path netlist of one design.

    ``neutralize`` overrides whether C1/C2 are inserted (default: only for
    NVSenseAmp); requesting them on a CSenseAmp is an error.
    """
    kind, ref, data_state = SenseAmpKind(kind), ReferenceConfig(ref), MtjState(data_state)
    timing = timing or default_timing()
    if neutralize is None:
        neutralize = kind is SenseAmpKind.NVSA
    if neutralize and kind is SenseAmpKind.CSA:
        raise DesignError("neutralization capacitors are not defined for the CSenseAmp")
    if kind is SenseAmpKind.NVSA and not neutralize:
        kind = SenseAmpKind.VSA
    p = params
    b = _Builder(f"{kind.value} {ref.value} data={data_state.value}")

    # supplies and clocks
    b.v("VDD", "vdd", "0", Waveform.constant(timing.vdd))
    b.v("VWL", "wl", "0", timing.wl)
    b.v("VSAE", "sae", "0", timing.sae)
    b.v("VSAE1", "sae1", "0", timing.sae1)
    b.v("VPRE", "pre", "0", timing.complement(timing.sae))
    b.v("VWLB", "wlb", "0", timing.complement(timing.wl))
    b.v("VISO", "iso", "0", timing.isolation())
    b.v("VISOB", "isob", "0", timing.complement(timing.isolation()))
    b.v("VC", "vc", "0", timing.bias(timing.vc))
    b.v("VR", "vr", "0", timing.bias(timing.vr))
    b.r("RBC", "vc", "vcg", p.bias_source_r)
    b.r("RBR", "vr", "vrg", p.bias_source_r)

    # Data column: clamp source -> BL -> isolation -> MTJ -> access -> ground.
    # With ``iso_position == "clamp"`` the isolation sits between the clamp
    # source and BL instead, leaving the clamp source floating after SAE1.
    at_cell = p.iso_position == "cell"
    xd, xr = ("bl", "refl") if at_cell else ("xd", "xr")
    td, tr = ("jd", "jr") if at_cell else ("bl", "refl")
    b.c("CBL", "bl", "0", p.c_bl)
    b.j(DATA_MTJ, td, "cd", data_state, p.mtj)
    b.m("MAD", "cd", "wl", "0", "nmos", p.access_w, p.access_l)
    # reference column, always P
    b.c("CREFL", "refl", "0", p.c_refl)
    names = reference_mtj_names(ref)
    nodes = [tr] + [f"rs{k}" for k in range(1, len(names))] + ["cr"]
    for name, a, c in zip(names, nodes, nodes[1:]):
        b.j(name, a, c, MtjState.P, p.mtj, ref.area_scale)
    b.m("MAR", "cr", "wl", "0", "nmos", p.access_w * p.ref_access_scale, p.access_l)
    # lines held at ground while WL is low so the read starts from an empty
    # C_BL instead of dumping it through the cell
    b.m("MBD", "bl", "wlb", "0", "nmos", p.discharge_w, p.latch_l)
    b.m("MBR", "refl", "wlb", "0", "nmos", p.discharge_w, p.latch_l)
    # array isolation, open after SAE1; transmission gates so the switching
    # charge of the two halves cancels
    a_d, b_d = (td, "bl") if at_cell else ("xd", "bl")
    a_r, b_r = (tr, "refl") if at_cell else ("xr", "refl")
    b.m("MID", a_d, "iso", b_d, "nmos", p.iso_w, p.latch_l)
    b.m("MIDP", a_d, "isob", b_d, "pmos", p.iso_w, p.latch_l)
    b.m("MIR", a_r, "iso", b_r, "nmos", p.iso_w, p.latch_l)
    b.m("MIRP", a_r, "isob", b_r, "pmos", p.iso_w, p.latch_l)

    if kind is SenseAmpKind.CSA:
        _current_mode_front(b, p, xd, xr)
    else:
        # clamps drain straight onto the latch outputs
        mc, mr = p.clamp(kind, False), p.clamp(kind, True)
        b.m("MC", "saout", "vcg", xd, "nmos", mc.w, mc.l)
        b.m("MR", "saoutb", "vrg", xr, "nmos", mr.w, mr.l)
        if neutralize:
            b.c("C1", "saout", "vrg", p.neutral_cap(of_ref_clamp=True))
            b.c("C2", "saoutb", "vcg", p.neutral_cap(of_ref_clamp=False))

    # pre-charge and decision latch
    b.m("MP1", "saout", "sae", "vdd", "pmos", p.precharge_w, p.latch_l)
    b.m("MP2", "saoutb", "sae", "vdd", "pmos", p.precharge_w, p.latch_l)
    b.m("M9", "saout", "pre", "saoutb", "nmos", p.eq_w, p.latch_l)
    b.c("CL1", "saout", "0", p.c_load)
    b.c("CL2", "saoutb", "0", p.c_load)
    b.m("MN1", "saout", "saoutb", "tail", "nmos", p.latch_n_w, p.latch_l)
    b.m("MN2", "saoutb", "saout", "tail", "nmos", p.latch_n_w, p.latch_l)
    b.m("MP3", "saout", "saoutb", "vdd", "pmos", p.latch_p_w, p.latch_l)
    b.m("MP4", "saoutb", "saout", "vdd", "pmos", p.latch_p_w, p.latch_l)
    b.m("MT", "tail", p.tail_clock, "0", "nmos", p.tail_w, p.latch_l)
    return b.net


def _current_mode_front(b: _Builder, p: SenseAmpParams, xd: str, xr: str) -> None:
    """Clamped branches with diode loads, mirrored onto the latch outputs.

    The data current is mirrored into SAOUT and the reference current into
    SAOUTB, so the side with the larger cell current discharges faster.
    """
    mc, mr = p.clamp(SenseAmpKind.CSA, False), p.clamp(SenseAmpKind.CSA, True)
    b.m("MC", "dd", "vcg", xd, "nmos", mc.w, mc.l)
    b.m("MR", "dr", "vrg", xr, "nmos", mr.w, mr.l)
    b.m("MLD", "dd", "dd", "vdd", "pmos", p.mirror_w, p.mirror_l)
    b.m("MLR", "dr", "dr", "vdd", "pmos", p.mirror_w, p.mirror_l)
    # pmos mirrors copy each branch current into an nmos diode...
    wc = p.mirror_w * p.mirror_ratio
    b.m("MMD", "md", "dd", "vdd", "pmos", wc, p.mirror_l)
    b.m("MMR", "mr", "dr", "vdd", "pmos", wc, p.mirror_l)
    b.m("MND", "md", "md", "0", "nmos", wc, p.mirror_l)
    b.m("MNR", "mr", "mr", "0", "nmos", wc, p.mirror_l)
    # ...whose copies discharge the outputs while SAE is high and the array
    # is still connected
    b.m("MOD", "saout", "md", "xo", "nmos", p.mirror_w, p.mirror_l)
    b.m("MOR", "saoutb", "mr", "xo", "nmos", p.mirror_w, p.mirror_l)
    b.m("MOS", "xo", "iso", "xs", "nmos", p.iso_w, p.latch_l)
    b.m("MSE", "xs", "sae", "0", "nmos", p.iso_w, p.latch_l)


def design_components(design_id: str) -> Tuple[SenseAmpKind, ReferenceConfig]:
    try:
        return DESIGNS[design_id]
    except KeyError:
        raise DesignError(f"unknown design {design_id!r}; valid ids: "
                          + ", ".join(DESIGNS)) from None


def build_by_id(design_id: str, data_state: MtjState = MtjState.P,
                params: SenseAmpParams = SenseAmpParams(),
                timing: Optional[TimingPlan] = None) -> Netlist:
    kind, ref = design_components(design_id)
    return build_design(kind, ref, params, data_state, timing)


def reference_resistance(ref: ReferenceConfig, params: SenseAmpParams = SenseAmpParams()) -> float:
    """Series resistance of the nominal reference MTJ network."""
    mp = replace(params.mtj, area=params.mtj.area * ref.area_scale)
    return ref.series_count * mtj_resistance(mp, MtjState.P, mp.tox0)


def reference_critical_current(ref: ReferenceConfig,
                               params: SenseAmpParams = SenseAmpParams()) -> float:
    return mtj_critical_current(params.mtj, ref.series_count, ref.area_scale)


def neutralization_balance(v_saout: float, v_saoutb: float, vc: float, vr: float,
                           c_gdc: float, c_gdr: float, c1: float, c2: float
                           ) -> Tuple[float, float, float, float]:
    """Both sides of the two capacitive balance relations.

    Returns ``(lhs1, rhs1, lhs2, rhs2)`` with
    ``lhs1 = (V_SAOUT - VC) / (V_SAOUT - V_SAOUTB)``, ``rhs1 = C_GDC / (C1 + C_GDR)``,
    ``lhs2 = (V_SAOUTB - VR) / (V_SAOUTB - V_SAOUT)``, ``rhs2 = C_GDR / (C2 + C_GDC)``.
    """
    diff = v_saout - v_saoutb
    if diff == 0:
        raise ValueError("output voltages must differ")
    lhs1 = (v_saout - vc) / diff
    lhs2 = (v_saoutb - vr) / -diff
    rhs1 = c_gdc / (c1 + c_gdr)
    rhs2 = c_gdr / (c2 + c_gdc)
    return lhs1, rhs1, lhs2, rhs2


def design_capacitances(kind: SenseAmpKind, params: SenseAmpParams = SenseAmpParams(),
                        neutralize: Optional[bool] = None) -> Tuple[float, float, float, float]:
    """``(C_GDC, C_GDR, C1, C2)`` of a built design; C1 = C2 = 0 without CRCNT."""
    kind = SenseAmpKind(kind)
    if neutralize is None:
        neutralize = kind is SenseAmpKind.NVSA
    c_gdc = mos_caps(params.clamp(kind, False))[0]
    c_gdr = mos_caps(params.clamp(kind, True))[0]
    if not neutralize:
        return c_gdc, c_gdr, 0.0, 0.0
    return c_gdc, c_gdr, params.neutral_cap(True), params.neutral_cap(False)


def balance_residuals(v_saout: float, v_saoutb: float, kind: SenseAmpKind,
                      params: SenseAmpParams = SenseAmpParams(),
                      timing: Optional[TimingPlan] = None,
                      neutralize: Optional[bool] = None) -> Tuple[float, float]:
    """``|lhs - rhs|`` of both balance relations for a design's capacitors at
    the given output voltages."""
    timing = timing or default_timing()
    lhs1, rhs1, lhs2, rhs2 = neutralization_balance(
        v_saout, v_saoutb, timing.vc, timing.vr, *design_capacitances(kind, params, neutralize))
    return abs(lhs1 - rhs1), abs(lhs2 - rhs2)
