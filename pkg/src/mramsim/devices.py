"""Device constitutive relations.

Level-1 square-law MOSFET, IPMTJ tunnel resistance with exponential oxide
thickness dependence, constant overlap capacitances and piecewise-linear
waveforms.  The scalar functions are the reference definitions; the solver
uses the array form :func:`mos_eval_array`, which implements the same
equations element-wise.
"""
from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

# nominal IPMTJ calibration: 40 nm x 40 nm x 1 nm, R_P = 742 ohm, R_AP = 1.97 kohm
NOMINAL_AREA = 40e-9 * 40e-9
NOMINAL_TOX = 1e-9
NOMINAL_R_P = 742.0
NOMINAL_R_AP = 1970.0
NOMINAL_RA_P = NOMINAL_R_P * NOMINAL_AREA
NOMINAL_TMR = (NOMINAL_R_AP - NOMINAL_R_P) / NOMINAL_R_P
DEFAULT_BETA = 6.5e9  # 1/m, from a 13 % (3 sigma) resistance spread per 2 % tox spread
DEFAULT_JC0 = 3e10  # A/m^2 (3 MA/cm^2)


class MtjState(str, enum.Enum):
    P = "P"
    AP = "AP"

    def flipped(self) -> "MtjState":
        return MtjState.AP if self is MtjState.P else MtjState.P


@dataclass(frozen=True)
class MosParams:
    polarity: str = "nmos"
    vth0: float = 0.40
    kprime: float = 200e-6
    lam: float = 0.1
    w: float = 1e-6
    l: float = 60e-9
    cox_overlap: float = 0.5e-9  # F/m of width (0.5 fF/um)

    def __post_init__(self):
        if self.polarity not in ("nmos", "pmos"):
            raise ValueError(f"unknown polarity {self.polarity!r}")
        if not (self.w > 0 and self.l > 0 and self.kprime > 0):
            raise ValueError("w, l and kprime must be positive")
        if self.lam < 0 or self.cox_overlap < 0:
            raise ValueError("lambda and cox_overlap must be non-negative")

    @classmethod
    def default(cls, polarity: str, w: float, l: float, **overrides) -> "MosParams":
        base = DEFAULT_MOS[polarity]
        kw = dict(vth0=base.vth0, kprime=base.kprime, lam=base.lam,
                  cox_overlap=base.cox_overlap)
        kw.update(overrides)
        return cls(polarity=polarity, w=w, l=l, **kw)

    @property
    def beta(self) -> float:
        return self.kprime * self.w / self.l


DEFAULT_MOS = {
    "nmos": MosParams("nmos", vth0=0.40, kprime=200e-6, lam=0.1),
    "pmos": MosParams("pmos", vth0=-0.42, kprime=80e-6, lam=0.1),
}


@dataclass(frozen=True)
class MtjParams:
    area: float = NOMINAL_AREA
    tox0: float = NOMINAL_TOX
    ra_p: float = NOMINAL_RA_P
    tmr: float = NOMINAL_TMR
    beta: float = DEFAULT_BETA
    jc0: float = DEFAULT_JC0

    def __post_init__(self):
        for name in ("area", "tox0", "ra_p", "jc0", "tmr", "beta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"MtjParams.{name} must be positive, got {value!r}")


def mtj_resistance(p: MtjParams, s: MtjState, tox: float) -> float:
    """Tunnel resistance of one junction at oxide thickness ``tox``."""
    if not tox > 0:
        raise ValueError("tox must be positive")
    ra = p.ra_p if MtjState(s) is MtjState.P else p.ra_p * (1.0 + p.tmr)
    return ra * math.exp(p.beta * (tox - p.tox0)) / p.area


def mtj_critical_current(p: MtjParams, series_count: int = 1, area_scale: float = 1.0) -> float:
    """Critical switching current of one element of a series stack.

    Stacking in series does not change the current density through each
    element, so ``series_count`` only validates the stack description.
    """
    if series_count < 1:
        raise ValueError("series_count must be >= 1")
    if not area_scale > 0:
        raise ValueError("area_scale must be positive")
    return p.jc0 * p.area * area_scale


def _square_law(vgs, vds, vth, beta, lam):
    """Forward-mode (vds >= 0) square law and its partials, array friendly."""
    vov = vgs - vth
    on = vov > 0.0
    vov = np.where(on, vov, 0.0)
    clm = 1.0 + lam * vds
    triode = vds < vov
    i_tri = beta * (vov * vds - 0.5 * vds * vds)
    i_sat = 0.5 * beta * vov * vov
    core = np.where(triode, i_tri, i_sat)
    ids = core * clm
    gm = np.where(triode, beta * vds, beta * vov) * clm
    gds = np.where(triode, beta * (vov - vds) * clm, 0.0) + lam * core
    return ids, gm, gds


def mos_eval_array(vgs, vds, vth, beta, lam, sign):
    """Drain current and partials for arrays of transistors.

    ``sign`` is +1 for nmos and -1 for pmos; ``vth`` is the magnitude of the
    threshold voltage.  Currents are drain-to-source in the device's own
    polarity frame, i.e. the returned ``ids`` flows from drain to source.
    """
    vgs = sign * vgs
    vds = sign * vds
    rev = vds < 0.0
    fwd_vgs = np.where(rev, vgs - vds, vgs)
    fwd_vds = np.abs(vds)
    f, fg, fd = _square_law(fwd_vgs, fwd_vds, vth, beta, lam)
    ids = np.where(rev, -f, f)
    gm = np.where(rev, -fg, fg)
    gds = np.where(rev, fg + fd, fd)
    return sign * ids, gm, gds


def mos_eval(p: MosParams, vgs: float, vds: float) -> Tuple[float, float, float]:
    """Return ``(ids, gm, gds)`` for one transistor.

    For pmos, ``vgs``/``vds`` are the usual gate-source and drain-source
    voltages (typically negative) and ``ids`` is negative when current
    flows from source to drain.
    """
    sign = 1.0 if p.polarity == "nmos" else -1.0
    ids, gm, gds = mos_eval_array(np.float64(vgs), np.float64(vds), abs(p.vth0),
                                  p.beta, p.lam, sign)
    return float(ids), float(gm), float(gds)


def mos_caps(p: MosParams) -> Tuple[float, float]:
    """Constant overlap capacitances ``(cgd, cgs)``."""
    c = p.cox_overlap * p.w
    return c, c


@dataclass(frozen=True)
class Waveform:
    points: Tuple[Tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        pts = tuple((float(t), float(v)) for t, v in self.points)
        if not pts:
            raise ValueError("waveform needs at least one point")
        for (t0, _), (t1, _) in zip(pts, pts[1:]):
            if not t1 > t0:
                raise ValueError("waveform times must be strictly increasing")
        if not all(math.isfinite(t) and math.isfinite(v) for t, v in pts):
            raise ValueError("waveform values must be finite")
        object.__setattr__(self, "points", pts)

    @classmethod
    def constant(cls, value: float) -> "Waveform":
        return cls(((0.0, value),))

    @classmethod
    def pulse(cls, low: float, high: float, start: float, width: float,
              edge: float) -> "Waveform":
        """Trapezoidal pulse whose rising edge starts at ``start`` and which
        stays high for ``width`` measured between the edge starts."""
        pts = [(start, low), (start + edge, high),
               (start + width, high), (start + width + edge, low)]
        if start > 0:
            pts.insert(0, (0.0, low))
        return cls(tuple(pts))

    def __call__(self, t: float) -> float:
        return pwl_value(self, t)

    @property
    def times(self) -> Tuple[float, ...]:
        return tuple(t for t, _ in self.points)

    def breakpoints(self) -> Sequence[float]:
        return self.times


def pwl_value(w: Waveform, t: float) -> float:
    """Linear interpolation with hold outside the defined span."""
    pts = w.points
    if t <= pts[0][0]:
        return pts[0][1]
    if t >= pts[-1][0]:
        return pts[-1][1]
    k = bisect.bisect_right(w.times, t)
    (t0, v0), (t1, v1) = pts[k - 1], pts[k]
    return v0 + (v1 - v0) * (t - t0) / (t1 - t0)
