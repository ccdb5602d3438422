"""Modified nodal analysis: DC operating point and backward-Euler transient.

The engine works on a batch of circuit instances that share one topology but
may differ in per-device parameters (MTJ oxide thickness, MOSFET threshold
shift).  Each instance runs its own Newton iteration; converged instances are
frozen so the result for one instance never depends on which other instances
share its batch.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .devices import MtjState, mos_eval_array
from .netlist import Diagnostic, FlatCircuit, validate_circuit

log = logging.getLogger(__name__)

MAX_DT_HALVINGS = 8
NEWTON_STEP_LIMIT = 0.5  # volts per node per Newton update


class ConvergenceError(RuntimeError):
    """Newton iteration failed; carries the time (or None for DC) and worst node."""

    def __init__(self, message: str, time: Optional[float] = None,
                 node: Optional[str] = None):
        super().__init__(message)
        self.time = time
        self.node = node


@dataclass(frozen=True)
class SolverConfig:
    abstol_v: float = 1e-6
    abstol_i: float = 1e-12
    reltol: float = 1e-4
    max_newton_iters: int = 100
    gmin: float = 1e-12
    dt: float = 1e-12
    t_stop: float = 2e-9

    def __post_init__(self):
        for name in ("abstol_v", "abstol_i", "reltol", "gmin", "dt", "t_stop"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SolverConfig.{name} must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")
        if not self.dt < self.t_stop:
            raise ValueError("dt must be smaller than t_stop")

    @property
    def steps(self) -> int:
        return int(round(self.t_stop / self.dt))


@dataclass
class OperatingPoint:
    node_voltages: np.ndarray
    source_currents: Dict[str, float]
    node_names: List[str] = field(default_factory=list)
    diagnostics: List[Diagnostic] = field(default_factory=list)

    def v(self, node: str) -> float:
        return float(self.node_voltages[self.node_names.index(node.lower())])


@dataclass
class TransientResult:
    """Sampled node voltages and source currents of one transient run.

    ``voltages`` has shape ``(len(times), len(node_names))``; source currents
    are the currents delivered by each source out of its positive terminal.
    """
    times: np.ndarray
    node_names: List[str]
    voltages: np.ndarray
    source_currents: Dict[str, np.ndarray]
    mtj_peak_current: Dict[str, float] = field(default_factory=dict)
    supply_name: str = "vdd"

    def __post_init__(self):
        self._col = {n: i for i, n in enumerate(self.node_names)}

    def v(self, node: str) -> np.ndarray:
        try:
            return self.voltages[:, self._col[node.lower()]]
        except KeyError:
            raise KeyError(f"node {node!r} not recorded") from None

    def has_node(self, node: str) -> bool:
        return node.lower() in self._col

    def at(self, node: str, t: float) -> float:
        return float(np.interp(t, self.times, self.v(node)))

    @property
    def supply_current(self) -> np.ndarray:
        for name, series in self.source_currents.items():
            if name.lower() == self.supply_name.lower():
                return series
        raise KeyError(f"no supply source named {self.supply_name!r}")


# ---------------------------------------------------------------------------
# compiled batch system


class CompiledCircuit:
    """Index arrays and constant matrices for one FlatCircuit topology."""

    def __init__(self, circuit: FlatCircuit, gmin: float):
        self.circuit = circuit
        nn = circuit.node_count - 1
        sources = circuit.by_kind("vsource")
        self.n_nodes = nn
        self.size = nn + len(sources)
        size = self.size
        gnd = size  # ground maps to a dummy row/column that is dropped
        self.ext = size + 1

        def ix(node: int) -> int:
            return gnd if node == 0 else node - 1

        self.ix = ix
        e = self.ext
        g0 = np.zeros((e, e))
        cmat = np.zeros((e, e))

        def stamp2(m, a, b, val):
            m[a, a] += val
            m[b, b] += val
            m[a, b] -= val
            m[b, a] -= val

        for d in circuit.devices:
            if d.kind == "resistor":
                stamp2(g0, ix(d.nodes[0]), ix(d.nodes[1]), 1.0 / d.value)
            elif d.kind == "capacitor":
                stamp2(cmat, ix(d.nodes[0]), ix(d.nodes[1]), d.value)
            elif d.kind == "mosfet":
                cgd = d.value.cox_overlap * d.value.w
                nd, ng, ns = (ix(n) for n in d.nodes[:3])
                stamp2(cmat, ng, nd, cgd)
                stamp2(cmat, ng, ns, cgd)
        for i in range(nn):
            g0[i, i] += gmin
        self.sources = sources
        self.source_names = [s.name for s in sources]
        for k, s in enumerate(sources):
            row = nn + k
            p, m = ix(s.nodes[0]), ix(s.nodes[1])
            # branch current flows from + through the source to -
            g0[p, row] += 1.0
            g0[m, row] -= 1.0
            g0[row, p] += 1.0
            g0[row, m] -= 1.0
        self.g0 = g0
        self.cmat = cmat

        mtjs = circuit.by_kind("mtj")
        self.mtj_names = [d.name for d in mtjs]
        self.mtj_a = np.array([ix(d.nodes[0]) for d in mtjs], dtype=int)
        self.mtj_b = np.array([ix(d.nodes[1]) for d in mtjs], dtype=int)
        self.mtj_params = [d.value for d in mtjs]
        self.mtj_nominal_tox = np.array([d.value[2] for d in mtjs], dtype=float)
        a_, b_ = self.mtj_a, self.mtj_b
        self.mtj_stamp = _Scatter(np.concatenate([a_ * e + a_, b_ * e + b_, a_ * e + b_, b_ * e + a_]))

        mos = circuit.by_kind("mosfet")
        self.mos_names = [d.name for d in mos]
        self.mos_d = np.array([ix(d.nodes[0]) for d in mos], dtype=int)
        self.mos_g = np.array([ix(d.nodes[1]) for d in mos], dtype=int)
        self.mos_s = np.array([ix(d.nodes[2]) for d in mos], dtype=int)
        self.mos_vth = np.array([abs(d.value.vth0) for d in mos], dtype=float)
        self.mos_beta = np.array([d.value.beta for d in mos], dtype=float)
        self.mos_lam = np.array([d.value.lam for d in mos], dtype=float)
        self.mos_sign = np.array([1.0 if d.value.polarity == "nmos" else -1.0 for d in mos])
        d_, g_, s_ = self.mos_d, self.mos_g, self.mos_s
        rows = np.concatenate([d_, d_, d_, s_, s_, s_])
        cols = np.concatenate([d_, g_, s_, d_, g_, s_])
        self.mos_jac = _Scatter(rows * e + cols)
        self.mos_kcl = _Scatter(np.concatenate([d_, s_]))
        self.waveforms = [s.value for s in sources]

    def mtj_conductance(self, tox: np.ndarray) -> np.ndarray:
        """Per-instance junction conductances for an array of oxide thicknesses."""
        out = np.empty(tox.shape)
        for k, (p, state, _) in enumerate(self.mtj_params):
            ra = p.ra_p if state is MtjState.P else p.ra_p * (1.0 + p.tmr)
            # math.exp keeps each instance's value independent of batch layout
            out[:, k] = [p.area / (ra * math.exp(p.beta * (t - p.tox0))) for t in tox[:, k]]
        return out

    def source_vector(self, t: float) -> np.ndarray:
        b = np.zeros(self.ext)
        for k, w in enumerate(self.waveforms):
            b[self.n_nodes + k] = w(t)
        return b


class _Scatter:
    """Order-fixed scatter-add of columns into flat positions.

    Contributions to the same position are summed left to right by
    ``np.add.reduceat`` so every batch row is reduced identically whatever
    the batch size.
    """

    def __init__(self, positions: np.ndarray):
        order = np.argsort(positions, kind="stable")
        pos = positions[order]
        self.order = order
        self.starts = np.flatnonzero(np.r_[True, pos[1:] != pos[:-1]]) if len(pos) else pos
        self.targets = pos[self.starts] if len(pos) else pos
        self.empty = len(pos) == 0

    def add_into(self, out: np.ndarray, vals: np.ndarray) -> None:
        if self.empty:
            return
        out[:, self.targets] += np.add.reduceat(vals[:, self.order], self.starts, axis=1)


class BatchSystem:
    """A batch of instances sharing one CompiledCircuit."""

    def __init__(self, cc: CompiledCircuit, cfg: SolverConfig,
                 mtj_tox: Optional[np.ndarray] = None,
                 vth_shift: Optional[np.ndarray] = None, batch: int = 1):
        self.cc = cc
        self.cfg = cfg
        nmtj, nmos = len(cc.mtj_names), len(cc.mos_names)
        if mtj_tox is None:
            mtj_tox = np.broadcast_to(cc.mtj_nominal_tox, (batch, nmtj)).copy()
        if vth_shift is None:
            vth_shift = np.zeros((mtj_tox.shape[0], nmos))
        self.batch = mtj_tox.shape[0]
        self.g_mtj = cc.mtj_conductance(mtj_tox)
        # threshold shifts move |vth| in the direction of a weaker device for positive draws
        self.vth = cc.mos_vth[None, :] + vth_shift
        g = self.g_mtj
        self.g_base = np.tile(cc.g0.reshape(1, -1), (self.batch, 1))
        cc.mtj_stamp.add_into(self.g_base, np.concatenate([g, g, -g, -g], axis=1))
        self._dyn_cache: Dict[float, np.ndarray] = {}

    def base_matrix(self, dt: Optional[float]) -> np.ndarray:
        e = self.cc.ext
        if dt is None:
            return self.g_base.reshape(-1, e, e)
        if dt not in self._dyn_cache:
            self._dyn_cache[dt] = (self.g_base + (self.cc.cmat / dt).reshape(1, -1)).reshape(-1, e, e)
        return self._dyn_cache[dt]

    def mtj_currents(self, xe: np.ndarray, rows=slice(None)) -> np.ndarray:
        cc = self.cc
        return self.g_mtj[rows] * (xe[:, cc.mtj_a] - xe[:, cc.mtj_b])

    def newton(self, rows: np.ndarray, x0: np.ndarray, b: np.ndarray, dt: Optional[float],
               xprev: Optional[np.ndarray], gmin_extra: float = 0.0
               ) -> Tuple[np.ndarray, np.ndarray]:
        """Run Newton on instances ``rows`` starting at ``x0`` (extended vectors).

        Returns the final extended solutions and a boolean convergence mask.
        """
        cc, cfg = self.cc, self.cfg
        e, n, nn = cc.ext, cc.size, cc.n_nodes
        has_mos = len(cc.mos_names) > 0
        x = x0.copy()
        x[:, -1] = 0.0
        base_all = self.base_matrix(dt)
        rhs_all = np.broadcast_to(b, (len(rows), e))
        if dt is not None:
            rhs_all = rhs_all + np.einsum("bj,ij->bi", xprev, cc.cmat / dt)
        converged = np.zeros(len(rows), dtype=bool)
        active = np.arange(len(rows))
        small_prev = np.zeros(len(rows), dtype=bool)
        diag = np.arange(nn)
        for it in range(cfg.max_newton_iters + 1):
            r = rows[active]
            xa = x[active]
            jac = base_all[r]
            # einsum keeps each row's arithmetic independent of the batch size
            resid = np.einsum("bij,bj->bi", jac, xa) - rhs_all[active]
            jac = jac.copy()
            if has_mos:
                vd, vg, vs = xa[:, cc.mos_d], xa[:, cc.mos_g], xa[:, cc.mos_s]
                ids, gm, gds = mos_eval_array(vg - vs, vd - vs, self.vth[r], cc.mos_beta,
                                              cc.mos_lam, cc.mos_sign)
                cc.mos_jac.add_into(jac.reshape(len(r), -1),
                                    np.concatenate([gds, gm, -gm - gds, -gds, -gm, gm + gds],
                                                   axis=1))
                cc.mos_kcl.add_into(resid, np.concatenate([ids, -ids], axis=1))
            if gmin_extra:
                jac[:, diag, diag] += gmin_extra
                resid[:, :nn] += gmin_extra * xa[:, :nn]
            if it > 0:
                i_scale = np.abs(xa[:, nn:n]).max(axis=1, initial=0.0)
                kcl = np.abs(resid[:, :nn]).max(axis=1, initial=0.0)
                done = small_prev[active] & (kcl <= cfg.abstol_i + cfg.reltol * i_scale)
                if done.any():
                    converged[active[done]] = True
                    keep = ~done
                    active = active[keep]
                    if active.size == 0:
                        break
                    xa, jac, resid = xa[keep], jac[keep], resid[keep]
            if it == cfg.max_newton_iters:
                break
            dx = np.linalg.solve(jac[:, :n, :n], -resid[:, :n, None])[:, :, 0]
            finite = np.all(np.isfinite(dx), axis=1)
            dx[~finite] = 0.0
            dv = np.clip(dx[:, :nn], -NEWTON_STEP_LIMIT, NEWTON_STEP_LIMIT)
            dx[:, :nn] = dv
            xa[:, :n] += dx
            tol = cfg.abstol_v + cfg.reltol * np.abs(xa[:, :nn])
            small_prev[active] = finite & np.all(np.abs(dv) <= tol, axis=1)
            x[active] = xa
        return x, converged


# ---------------------------------------------------------------------------
# public API


def stamp_system(circuit: FlatCircuit, guess: OperatingPoint, t: float = 0.0,
                 dt: Optional[float] = None, prev: Optional[OperatingPoint] = None,
                 cfg: SolverConfig = SolverConfig()) -> Tuple[np.ndarray, np.ndarray]:
    """Linearized MNA system ``A x = rhs`` at ``guess``.

    Unknowns are node voltages 1..N-1 followed by source branch currents.
    With ``prev`` the capacitors use the backward-Euler companion model over
    ``dt``; otherwise they are open circuits.
    """
    cc = CompiledCircuit(circuit, cfg.gmin)
    bs = BatchSystem(cc, cfg)
    x = _extended(cc, guess)
    use_dt = dt if prev is not None else None
    base = bs.base_matrix(use_dt)[0]
    vd, vg, vs = x[cc.mos_d], x[cc.mos_g], x[cc.mos_s]
    ids, gm, gds = mos_eval_array(vg - vs, vd - vs, bs.vth[0], cc.mos_beta, cc.mos_lam,
                                  cc.mos_sign)
    jac = base.copy()
    resid = (base @ x - cc.source_vector(t))[None, :]
    cc.mos_jac.add_into(jac.reshape(1, -1),
                        np.concatenate([gds, gm, -gm - gds, -gds, -gm, gm + gds])[None, :])
    cc.mos_kcl.add_into(resid, np.concatenate([ids, -ids])[None, :])
    resid = resid[0]
    if use_dt is not None:
        resid -= (cc.cmat / use_dt) @ _extended(cc, prev)
    n = cc.size
    rhs = jac @ x - resid
    return jac[:n, :n], rhs[:n]


def _extended(cc: CompiledCircuit, op: OperatingPoint) -> np.ndarray:
    x = np.zeros(cc.ext)
    x[:cc.n_nodes] = np.asarray(op.node_voltages, dtype=float)[1:]
    for k, name in enumerate(cc.source_names):
        x[cc.n_nodes + k] = op.source_currents.get(name, 0.0)
    return x


def _solve_dc(bs: BatchSystem, rows: np.ndarray, t: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    cc, cfg = bs.cc, bs.cfg
    b = cc.source_vector(t)
    x0 = np.zeros((len(rows), cc.ext))
    x, ok = bs.newton(rows, x0, b, None, None)
    if ok.all():
        return x, ok
    # gmin stepping for the failures: start 1e6 x gmin and decade down
    fail = np.flatnonzero(~ok)
    xs = x0[fail]
    g = cfg.gmin * 1e6
    while g >= cfg.gmin * 0.999:
        xs, _ = bs.newton(rows[fail], xs, b, None, None, gmin_extra=g)
        g /= 10.0
    xs, good = bs.newton(rows[fail], xs, b, None, None)
    x[fail] = xs
    ok[fail] = good
    return x, ok


def dc_operating_point(circuit: FlatCircuit, cfg: SolverConfig = SolverConfig()) -> OperatingPoint:
    """Newton-Raphson DC solution from an all-zero guess, with gmin stepping."""
    cc = CompiledCircuit(circuit, cfg.gmin)
    bs = BatchSystem(cc, cfg)
    x, ok = _solve_dc(bs, np.array([0]))
    if not ok[0]:
        raise _dc_failure(bs, x[0])
    op = _to_op(cc, x[0])
    op.diagnostics = _weak_nodes(circuit)
    return op


def _dc_failure(bs: BatchSystem, x: np.ndarray) -> ConvergenceError:
    cc = bs.cc
    b = cc.source_vector(0.0)
    resid = bs.base_matrix(None)[0] @ x - b
    worst = int(np.argmax(np.abs(resid[:cc.n_nodes]))) if cc.n_nodes else 0
    node = cc.circuit.node_names[worst + 1] if cc.n_nodes else None
    return ConvergenceError(f"DC operating point did not converge (worst node {node!r})",
                            None, node)


def _weak_nodes(circuit: FlatCircuit) -> List[Diagnostic]:
    out = []
    for d in validate_circuit(circuit):
        if d.code == "floating-node":
            log.warning("node %r is only weakly connected (gmin-defined voltage)", d.subject)
            out.append(Diagnostic("weakly-connected", d.subject,
                                  f"node {d.subject!r} has no DC path; voltage set by gmin"))
    return out


def _to_op(cc: CompiledCircuit, x: np.ndarray) -> OperatingPoint:
    v = np.concatenate([[0.0], x[:cc.n_nodes]])
    currents = {name: float(-x[cc.n_nodes + k]) for k, name in enumerate(cc.source_names)}
    return OperatingPoint(v, currents, list(cc.circuit.node_names))


@dataclass
class BatchTransient:
    """Raw batch output: probe voltages ``(B, T, P)`` and source currents ``(B, T, S)``."""
    times: np.ndarray
    probe_names: List[str]
    voltages: np.ndarray
    source_names: List[str]
    source_currents: np.ndarray
    mtj_names: List[str]
    mtj_peak: np.ndarray
    failed: np.ndarray
    fail_time: np.ndarray

    def result(self, k: int, supply_name: str = "vdd") -> TransientResult:
        return TransientResult(
            times=self.times, node_names=list(self.probe_names), voltages=self.voltages[k],
            source_currents={n: self.source_currents[k, :, j]
                             for j, n in enumerate(self.source_names)},
            mtj_peak_current={n: float(self.mtj_peak[k, j]) for j, n in enumerate(self.mtj_names)},
            supply_name=supply_name)


def transient_batch(circuit: FlatCircuit, cfg: SolverConfig,
                    initial: Optional[Mapping[str, float]] = None,
                    mtj_tox: Optional[np.ndarray] = None,
                    vth_shift: Optional[np.ndarray] = None,
                    probes: Optional[Sequence[str]] = None,
                    batch: int = 1,
                    peak_window: Optional[Tuple[float, float]] = None) -> BatchTransient:
    """Backward-Euler transient of a batch of parameter variants of ``circuit``.

    Instances that fail to converge are reported in ``failed`` (with the step
    time in ``fail_time``) instead of raising; their waveforms are NaN from the
    failing step on.
    """
    cc = CompiledCircuit(circuit, cfg.gmin)
    bs = BatchSystem(cc, cfg, mtj_tox, vth_shift, batch)
    nb = bs.batch
    names = circuit.node_names
    if probes is None:
        probes = names
    probe_cols = np.array([cc.ix(names.index(p.lower())) if p.lower() in names else -1
                           for p in probes])
    if np.any(probe_cols < 0):
        missing = [p for p, c in zip(probes, probe_cols) if c < 0]
        raise KeyError(f"unknown probe node(s) {missing}")

    steps = cfg.steps
    times = np.arange(steps + 1) * cfg.dt
    times[-1] = cfg.t_stop
    volts = np.full((nb, steps + 1, len(probes)), np.nan)
    src_cols = cc.n_nodes + np.arange(len(cc.source_names))
    currents = np.full((nb, steps + 1, len(src_cols)), np.nan)
    peak = np.zeros((nb, len(cc.mtj_names)))
    failed = np.zeros(nb, dtype=bool)
    fail_time = np.full(nb, np.nan)

    rows = np.arange(nb)
    x, ok = _solve_dc(bs, rows)
    failed |= ~ok
    fail_time[~ok] = 0.0
    init = dict(circuit.initial)
    init.update({k.lower(): v for k, v in (initial or {}).items()})
    for node, value in init.items():
        i = names.index(node.lower()) if node.lower() in names else None
        if i is None:
            raise KeyError(f"initial condition for unknown node {node!r}")
        if i != 0:
            x[:, cc.ix(i)] = value

    lo, hi = peak_window if peak_window is not None else (-np.inf, np.inf)

    def record(k, xs, idx):
        volts[idx, k] = xs[:, probe_cols]
        currents[idx, k] = -xs[:, src_cols]
        if lo <= times[k] <= hi:
            peak[idx] = np.maximum(peak[idx], np.abs(bs.mtj_currents(xs, idx)))

    live = np.flatnonzero(~failed)
    record(0, x[live], live)
    for k in range(1, steps + 1):
        if live.size == 0:
            break
        t0, t1 = times[k - 1], times[k]
        xs, good = _advance(bs, live, x[live], t0, t1, 0)
        x[live] = xs
        if not good.all():
            bad = live[~good]
            failed[bad] = True
            fail_time[bad] = t1
            for j in bad:
                log.warning("instance %d: Newton failed at t=%.4g s after %d dt halvings",
                            j, t1, MAX_DT_HALVINGS)
            live = live[good]
            xs = xs[good]
        if live.size:
            peak_rows = live
            record(k, xs, peak_rows)
    return BatchTransient(times, list(probes), volts, list(cc.source_names), currents,
                          list(cc.mtj_names), peak, failed, fail_time)


def _advance(bs: BatchSystem, rows: np.ndarray, x: np.ndarray, t0: float, t1: float,
             depth: int) -> Tuple[np.ndarray, np.ndarray]:
    """One backward-Euler step t0 -> t1; failures retry as two half steps."""
    dt = t1 - t0
    b = bs.cc.source_vector(t1)
    xn, ok = bs.newton(rows, x, b, dt, x)
    if ok.all() or depth >= MAX_DT_HALVINGS:
        return xn, ok
    fail = np.flatnonzero(~ok)
    tm = 0.5 * (t0 + t1)
    xm, ok1 = _advance(bs, rows[fail], x[fail], t0, tm, depth + 1)
    xe, ok2 = _advance(bs, rows[fail], xm, tm, t1, depth + 1)
    xn[fail] = xe
    ok[fail] = ok1 & ok2
    return xn, ok


def transient_analysis(circuit: FlatCircuit, cfg: SolverConfig = SolverConfig(),
                       initial: Optional[Mapping[str, float]] = None,
                       supply_name: str = "vdd") -> TransientResult:
    """Single transient run recording every node; raises on non-convergence."""
    out = transient_batch(circuit, cfg, initial)
    if out.failed[0]:
        t = float(out.fail_time[0])
        raise ConvergenceError(f"transient failed to converge at t={t:.6g} s", t)
    return out.result(0, supply_name)
