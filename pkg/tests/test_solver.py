import math
import time

import numpy as np
import pytest

from mramsim.netlist import flatten_hierarchy, parse_netlist
from mramsim.solver import (OperatingPoint, SolverConfig, dc_operating_point, stamp_system,
                            transient_analysis, transient_batch)


def circuit(text):
    return flatten_hierarchy(parse_netlist("test\n" + text))


def zero_guess(fc):
    return OperatingPoint(np.zeros(fc.node_count), {}, list(fc.node_names))


def rc_error(dt, t_stop=250e-12):
    fc = circuit("R1 a 0 1k\nC1 a 0 50f\n")
    tr = transient_analysis(fc, SolverConfig(dt=dt, t_stop=t_stop), initial={"a": 1.0})
    exact = np.exp(-tr.times / 50e-12)
    return np.max(np.abs(tr.v("a") - exact)), tr


def test_resistor_stamp():
    cfg = SolverConfig()
    fc = circuit("R1 a 0 1k\n")
    a, _ = stamp_system(fc, zero_guess(fc), cfg=cfg)
    assert a[0, 0] == pytest.approx(1e-3 + cfg.gmin, rel=1e-15)


def test_capacitor_open_in_dc():
    cfg = SolverConfig()
    fc = circuit("C1 a 0 50f\n")
    a, rhs = stamp_system(fc, zero_guess(fc), cfg=cfg)
    assert a[0, 0] == pytest.approx(cfg.gmin)
    assert rhs[0] == 0.0


def test_backward_euler_companion():
    cfg = SolverConfig()
    fc = circuit("C1 a 0 50f\n")
    prev = OperatingPoint(np.array([0.0, 0.7]), {}, list(fc.node_names))
    a, rhs = stamp_system(fc, zero_guess(fc), dt=1e-12, prev=prev, cfg=cfg)
    assert a[0, 0] == pytest.approx(50e-15 / 1e-12 + cfg.gmin)
    assert rhs[0] == pytest.approx(50e-15 / 1e-12 * 0.7)


def test_divider_midpoint():
    op = dc_operating_point(circuit("V1 in 0 DC 1\nR1 in mid 1k\nR2 mid 0 1k\n"))
    assert op.v("mid") == pytest.approx(0.5, abs=1e-9)
    assert op.source_currents["V1"] == pytest.approx(0.5e-3, rel=1e-6)


def test_diode_connected_nmos():
    op = dc_operating_point(circuit("V1 vdd 0 DC 1\nR1 vdd d 1k\n"
                                    "M1 d d 0 0 nmos W=2u L=1u lambda=0\n"))
    # 200u*(v-0.4)^2 = (1-v)/1k  ->  0.2 v^2 + 0.84 v - 0.968 = 0
    a, b, c = 0.2, 0.84, -0.968
    v = (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
    assert v == pytest.approx(0.94138, abs=1e-5)
    assert op.v("d") == pytest.approx(v, abs=1e-6)


def test_capacitor_only_node_is_weak():
    op = dc_operating_point(circuit("V1 a 0 DC 1\nR1 a 0 1k\nC1 a x 1f\n"))
    assert math.isfinite(op.v("x"))
    assert [d.code for d in op.diagnostics] == ["weakly-connected"]
    assert op.diagnostics[0].subject == "x"


def test_rc_discharge_value():
    _, tr = rc_error(1e-12)
    # 0.5 % of the 1 V step
    assert tr.at("a", 50e-12) == pytest.approx(math.exp(-1), abs=0.005)


def test_rc_first_order_convergence():
    e1, _ = rc_error(1e-12)
    e2, _ = rc_error(0.5e-12)
    assert e1 < 0.005
    assert 1.8 <= e1 / e2 <= 2.2


def test_result_shape():
    _, tr = rc_error(1e-12)
    assert tr.times[0] == 0.0 and tr.times[-1] == 250e-12
    assert np.all(np.diff(tr.times) > 0)
    assert tr.voltages.shape == (len(tr.times), 2)


def test_dc_equilibrium_is_flat():
    fc = circuit("V1 in 0 DC 1\nR1 in mid 1k\nR2 mid 0 2k\nC1 mid 0 10f\n")
    tr = transient_analysis(fc, SolverConfig(t_stop=100e-12))
    assert np.ptp(tr.v("mid")) < 1e-9
    assert tr.v("mid")[0] == pytest.approx(2 / 3, abs=1e-9)


def test_charge_conservation():
    fc = circuit("C1 a b 1f\nC2 b 0 2f\nC3 a 0 1f\n")
    tr = transient_analysis(fc, SolverConfig(t_stop=2e-9), initial={"a": 1.0, "b": 0.3})
    va, vb = tr.v("a"), tr.v("b")
    # net charge on the floating island {a, b}
    q = 1e-15 * va + 2e-15 * vb
    assert abs(q[-1] - q[0]) / abs(q[0]) < 1e-3


def test_deterministic():
    fc = circuit("V1 in 0 PWL(0 0 10p 1)\nR1 in a 1k\nC1 a 0 50f\n"
                 "M1 b a 0 0 nmos W=1u L=60n\nR2 in b 5k\n")
    cfg = SolverConfig(t_stop=200e-12)
    a = transient_analysis(fc, cfg, supply_name="v1")
    b = transient_analysis(fc, cfg, supply_name="v1")
    assert np.array_equal(a.voltages, b.voltages)
    assert np.array_equal(a.supply_current, b.supply_current)


LATCH = """V1 vdd 0 DC 1
M1 o1 o2 0 0 nmos W=400n L=60n
M2 o2 o1 0 0 nmos W=400n L=60n
M3 o1 o2 vdd vdd pmos W=400n L=60n
M4 o2 o1 vdd vdd pmos W=400n L=60n
C1 o1 0 5f
C2 o2 0 5f
"""


def _latch_oracle(v1, v2, t_stop, h=0.05e-12):
    """Independent RK4 integration of the two-node latch ODE."""
    def ids(vgs, vds, vth, k, lam):
        if vgs <= vth:
            return 0.0
        vov = vgs - vth
        core = k * (vov * vds - vds * vds / 2) if vds < vov else k / 2 * vov * vov
        return core * (1 + lam * vds)

    kn, kp = 200e-6 * 400 / 60, 80e-6 * 400 / 60

    def f(y):
        a, b = y
        ia = ids(1 - b, 1 - a, 0.42, kp, 0.1) - ids(b, a, 0.4, kn, 0.1)
        ib = ids(1 - a, 1 - b, 0.42, kp, 0.1) - ids(a, b, 0.4, kn, 0.1)
        return np.array([ia, ib]) / 5e-15

    y = np.array([v1, v2])
    for _ in range(int(round(t_stop / h))):
        k1 = f(y)
        k2 = f(y + h / 2 * k1)
        k3 = f(y + h / 2 * k2)
        k4 = f(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def test_latch_regenerates():
    fc = circuit(LATCH)
    v0 = 0.5
    tr = transient_analysis(fc, SolverConfig(t_stop=1e-9), initial={"o1": v0 + 0.0005,
                                                                   "o2": v0 - 0.0005},
                            supply_name="v1")
    d = tr.v("o1") - tr.v("o2")
    assert np.all(np.diff(d) >= -1e-9)
    assert d[-1] >= 0.9
    oracle = _latch_oracle(v0 + 0.0005, v0 - 0.0005, 1e-9)
    assert tr.v("o1")[-1] == pytest.approx(oracle[0], abs=0.02)
    assert tr.v("o2")[-1] == pytest.approx(oracle[1], abs=0.02)


def test_batch_rows_match_single_runs():
    fc = circuit("V1 in 0 PWL(0 0 10p 1)\nR1 in a 1k\nC1 a 0 50f\nJ1 a b state=P area=1600n2 tox=1n\n"
                 "M1 b in 0 0 nmos W=1u L=60n\n")
    cfg = SolverConfig(t_stop=100e-12)
    tox = np.array([[1.0e-9], [1.02e-9], [0.97e-9]])
    shift = np.array([[0.0], [0.01], [-0.02]])
    both = transient_batch(fc, cfg, mtj_tox=tox, vth_shift=shift, batch=3)
    for k in range(3):
        one = transient_batch(fc, cfg, mtj_tox=tox[k:k + 1], vth_shift=shift[k:k + 1])
        assert np.array_equal(both.voltages[k], one.voltages[0])


def test_rc_runtime():
    t = time.perf_counter()
    rc_error(1e-12)
    rc_error(0.5e-12)
    assert time.perf_counter() - t < 1.0
