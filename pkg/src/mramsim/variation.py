"""Process-variation sampling, tox sensitivity calibration and seeded Monte
Carlo ensembles.

Every random number is drawn from a Philox counter-based generator keyed by
the ensemble seed.  The counter holds the sample index and the device class,
so the value given to a device depends only on ``(seed, index, class,
ordinal)``: samples can be run in any order, in any chunking, and adding
devices of one class does not move the draws of the devices before them.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .devices import DEFAULT_MOS, MtjParams, MtjState, mtj_resistance
from .metrics import Decision, extract_metrics, read_current_window
from .netlist import FlatCircuit, flatten_hierarchy
from .senseamps import SenseAmpParams, TimingPlan, build_by_id, default_timing, design_components
from .solver import CompiledCircuit, SolverConfig, transient_batch

log = logging.getLogger(__name__)

SPREAD_3S = 0.02  # relative 3-sigma spread of tox and of CMOS parameters
PROBES = ("saout", "saoutb", "bl", "refl", "vdd", "vc", "vr")
_MTJ_STREAM, _MOS_STREAM = 1, 2
_UINT64 = 1 << 64


@dataclass(frozen=True)
class VariationSpec:
    sigma_tox_rel: float = SPREAD_3S / 3
    sigma_vth: float = 0.010
    seed: int = 0
    samples: int = 1000

    def __post_init__(self):
        if not (self.sigma_tox_rel >= 0 and self.sigma_vth >= 0):
            raise ValueError("variation sigmas must be >= 0")
        if not (math.isfinite(self.sigma_tox_rel) and math.isfinite(self.sigma_vth)):
            raise ValueError("variation sigmas must be finite")
        if int(self.samples) != self.samples or self.samples < 1:
            raise ValueError("samples must be an integer >= 1")
        if not 0 <= int(self.seed) < _UINT64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @classmethod
    def matched_spread(cls, seed: int = 0, samples: int = 1000) -> "VariationSpec":
        """2 % (3 sigma) on tox and on the nmos threshold voltage."""
        sigma = SPREAD_3S / 3
        return cls(sigma, sigma * abs(DEFAULT_MOS["nmos"].vth0), seed, samples)

    @classmethod
    def nominal(cls, seed: int = 0, samples: int = 1) -> "VariationSpec":
        return cls(0.0, 0.0, seed, samples)


@dataclass(frozen=True)
class SampleDraw:
    index: int
    tox_values: Tuple[float, ...]
    vth_deltas: Tuple[float, ...]


def calibrate_beta(sigma_tox_rel_3s: float, sigma_r_rel_3s: float, tox0: float) -> float:
    """Slope of ln R against tox that maps a relative tox spread onto a
    relative resistance spread (both given at 3 sigma)."""
    if not 0 < sigma_tox_rel_3s < 1:
        raise ValueError("sigma_tox_rel_3s must lie in (0, 1)")
    if not 0 <= sigma_r_rel_3s < 1:
        raise ValueError("sigma_r_rel_3s must lie in [0, 1)")
    if not tox0 > 0:
        raise ValueError("tox0 must be positive")
    return (sigma_r_rel_3s / 3) / ((sigma_tox_rel_3s / 3) * tox0)


def _normals(seed: int, index: int, stream: int, n: int) -> np.ndarray:
    # the low counter words advance with use; the high words name the stream
    bitgen = np.random.Philox(key=int(seed), counter=[0, 0, stream, int(index)])
    return np.random.Generator(bitgen).standard_normal(n)


def _check_index(spec: VariationSpec, index: int) -> None:
    if not 0 <= index < spec.samples:
        raise IndexError(f"sample index {index} outside [0, {spec.samples})")


def draw_arrays(spec: VariationSpec, index: int, tox_nominal: np.ndarray,
                mos_count: int) -> Tuple[np.ndarray, np.ndarray]:
    _check_index(spec, index)
    tox_nominal = np.asarray(tox_nominal, dtype=float)
    tox = tox_nominal * (1.0 + spec.sigma_tox_rel * _normals(spec.seed, index, _MTJ_STREAM,
                                                             tox_nominal.size))
    dvth = spec.sigma_vth * _normals(spec.seed, index, _MOS_STREAM, mos_count)
    return tox, dvth


def draw_sample(spec: VariationSpec, index: int, circuit: FlatCircuit) -> SampleDraw:
    """tox of every MTJ and the V_TH shift of every MOSFET for one sample, in
    the circuit's device order."""
    tox0 = [d.value[2] for d in circuit.by_kind("mtj")]
    n_mos = len(circuit.by_kind("mosfet"))
    tox, dvth = draw_arrays(spec, index, np.array(tox0), n_mos)
    return SampleDraw(index, tuple(float(v) for v in tox), tuple(float(v) for v in dvth))


def resistance_samples(spec: VariationSpec, state: MtjState, params: Optional[MtjParams] = None,
                       indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Resistance of a single MTJ across samples (its draw is ordinal 0)."""
    params = params or MtjParams()
    idx = range(spec.samples) if indices is None else indices
    z = np.fromiter((_normals(spec.seed, i, _MTJ_STREAM, 1)[0] for i in idx), dtype=float)
    tox = params.tox0 * (1.0 + spec.sigma_tox_rel * z)
    if np.any(tox <= 0):
        raise ValueError("tox draw is not positive; sigma_tox_rel is too large")
    r0 = mtj_resistance(params, MtjState(state), params.tox0)
    return r0 * np.exp(params.beta * (tox - params.tox0))


@dataclass(frozen=True)
class SampleOutcome:
    index: int
    decision: Decision
    delay: float
    power: float
    sense_margin: float
    i_rd_peak: float
    failed: bool = False


@dataclass
class EnsembleResult:
    design_id: str
    data_state: MtjState
    spec: VariationSpec
    per_sample: List[SampleOutcome] = field(default_factory=list)

    @property
    def error_count(self) -> int:
        want = Decision.of(self.data_state)
        return sum(1 for s in self.per_sample if s.decision is not want)

    @property
    def failure_count(self) -> int:
        return sum(1 for s in self.per_sample if s.failed)

    @property
    def error_rate(self) -> float:
        return self.error_count / len(self.per_sample) if self.per_sample else math.nan

    def concat(self, other: "EnsembleResult") -> "EnsembleResult":
        if (other.design_id, other.data_state, other.spec) != (self.design_id, self.data_state,
                                                               self.spec):
            raise ValueError("can only join ensembles of the same design, state and spec")
        rows = sorted(self.per_sample + other.per_sample, key=lambda s: s.index)
        if len({s.index for s in rows}) != len(rows):
            raise ValueError("ensembles overlap")
        return EnsembleResult(self.design_id, self.data_state, self.spec, rows)


def _threads() -> int:
    raw = os.environ.get("MRAMSIM_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_ensemble(design_id: str, data_state: MtjState, spec: VariationSpec,
                 timing: Optional[TimingPlan] = None, cfg: Optional[SolverConfig] = None,
                 params: Optional[SenseAmpParams] = None, start: int = 0,
                 stop: Optional[int] = None, chunk: int = 50,
                 threads: Optional[int] = None) -> EnsembleResult:
    """Monte Carlo over samples ``[start, stop)`` of ``spec``.

    Samples are simulated in batches of ``chunk``; batches run on up to
    ``threads`` worker threads (default from ``MRAMSIM_THREADS``).  A sample
    whose transient fails is recorded as indeterminate.
    """
    design_components(design_id)
    data_state = MtjState(data_state)
    timing = timing or default_timing()
    cfg = cfg or SolverConfig()
    params = params or SenseAmpParams()
    stop = spec.samples if stop is None else stop
    if not 0 <= start <= stop <= spec.samples:
        raise ValueError(f"sample range [{start}, {stop}) outside [0, {spec.samples})")
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    circuit = flatten_hierarchy(build_by_id(design_id, data_state, params, timing))
    cc = CompiledCircuit(circuit, cfg.gmin)
    window = read_current_window(timing)

    def run_chunk(lo: int) -> List[SampleOutcome]:
        idx = list(range(lo, min(lo + chunk, stop)))
        tox = np.empty((len(idx), len(cc.mtj_names)))
        shift = np.empty((len(idx), len(cc.mos_names)))
        for row, i in enumerate(idx):
            tox[row], dvth = draw_arrays(spec, i, cc.mtj_nominal_tox, len(cc.mos_names))
            # a shift of vth0 is a shift of |vth| with the device's polarity sign
            shift[row] = dvth * cc.mos_sign
        out = transient_batch(circuit, cfg, mtj_tox=tox, vth_shift=shift, probes=PROBES,
                              batch=len(idx), peak_window=window)
        rows = []
        for row, i in enumerate(idx):
            if out.failed[row]:
                log.warning("%s %s sample %d failed to converge at t=%.4g s",
                            design_id, data_state.value, i, out.fail_time[row])
                rows.append(SampleOutcome(i, Decision.INDETERMINATE, math.nan, math.nan,
                                          math.nan, math.nan, failed=True))
                continue
            m = extract_metrics(out.result(row), timing)
            rows.append(SampleOutcome(i, m.decision, m.delay, m.power_avg, m.sense_margin,
                                      m.i_rd_peak))
        return rows

    starts = list(range(start, stop, chunk))
    workers = threads if threads is not None else _threads()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, starts))
    else:
        parts = [run_chunk(lo) for lo in starts]
    per_sample = [s for part in parts for s in part]
    return EnsembleResult(design_id, data_state, spec, per_sample)
