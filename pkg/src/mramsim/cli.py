"""Command-line front end: ``mramsim simulate|montecarlo|sweep|histogram``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .devices import MtjState
from .metrics import MetricError, extract_metrics, read_current_window
from .netlist import NetlistError, flatten_hierarchy, parse_netlist, validate_circuit
from .senseamps import DESIGNS, SenseAmpParams, build_by_id, default_timing
from .solver import ConvergenceError, SolverConfig, transient_batch
from .variation import EnsembleResult, SampleOutcome, VariationSpec, resistance_samples, run_ensemble

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
FAILURE_LIMIT = 0.10  # fraction of non-converged samples that aborts a Monte Carlo run
SAMPLE_COLUMNS = ["index", "decision", "delay_s", "power_w", "sense_margin_v", "i_rd_peak_a",
                  "failed"]
SWEEP_COLUMNS = ["design", "state", "power_uw", "delay_ps", "errors"]
SUMMARY_FIELDS = {"delay_s": "delay", "power_w": "power", "sense_margin_v": "sense_margin"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# reports


def summarize(values: Iterable[float]) -> Dict[str, float]:
    """Mean and sample standard deviation over the finite values."""
    v = [float(x) for x in values if math.isfinite(x)]
    n = len(v)
    if n == 0:
        return {"n": 0, "mean": None, "std": None}
    mean = math.fsum(v) / n
    std = math.sqrt(math.fsum((x - mean) ** 2 for x in v) / (n - 1)) if n > 1 else 0.0
    return {"n": n, "mean": mean, "std": std}


@dataclass
class RunReport:
    design_id: str
    data_state: str
    seed: int
    samples: int
    sigma_tox_rel: float
    sigma_vth: float
    error_count: int
    failure_count: int
    rows: List[SampleOutcome] = field(default_factory=list)

    @classmethod
    def from_ensemble(cls, ens: EnsembleResult) -> "RunReport":
        s = ens.spec
        return cls(ens.design_id, ens.data_state.value, s.seed, len(ens.per_sample),
                   s.sigma_tox_rel, s.sigma_vth, ens.error_count, ens.failure_count,
                   list(ens.per_sample))

    def summary(self) -> dict:
        out = {"design_id": self.design_id, "data_state": self.data_state, "seed": self.seed,
               "samples": self.samples, "sigma_tox_rel": self.sigma_tox_rel,
               "sigma_vth": self.sigma_vth, "error_count": self.error_count,
               "failure_count": self.failure_count}
        for key, attr in SUMMARY_FIELDS.items():
            out[key] = summarize(getattr(r, attr) for r in self.rows)
        return out

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        for r in self.rows:
            w.writerow([r.index, r.decision.value, repr(r.delay), repr(r.power),
                        repr(r.sense_margin), repr(r.i_rd_peak), int(r.failed)])
        return buf.getvalue()

    def json_text(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def write_atomic(path: str, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# argument handling


def _spec(args, samples: Optional[int] = None) -> VariationSpec:
    try:
        return VariationSpec(sigma_tox_rel=args.sigma_tox_rel, sigma_vth=args.sigma_vth,
                             seed=args.seed, samples=samples if samples is not None else args.samples)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _cfg(args) -> SolverConfig:
    try:
        return SolverConfig(dt=args.dt, t_stop=args.tstop)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _design(design: str) -> str:
    if design not in DESIGNS:
        raise UsageError(f"unknown design {design!r}; valid ids: {', '.join(DESIGNS)}")
    return design


def _fmt(x: Optional[float], scale: float = 1.0, digits: int = 1) -> str:
    if x is None or not math.isfinite(x):
        return "nan"
    return f"{x * scale:.{digits}f}"


def _dump_waves(path: str, times: np.ndarray, names: Sequence[str], volts: np.ndarray) -> None:
    keep = [i for i, n in enumerate(names) if n != "0"]  # ground is not a waveform
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *(names[i] for i in keep)])
    for k, t in enumerate(times):
        w.writerow([repr(float(t)), *(repr(float(volts[k, i])) for i in keep)])
    write_atomic(path, buf.getvalue())


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = _cfg(args)
    if args.netlist:
        try:
            with open(args.netlist) as fh:
                net = parse_netlist(fh.read())
            circuit = flatten_hierarchy(net)
        except OSError as exc:
            raise UsageError(f"cannot read netlist: {exc}") from None
        except NetlistError as exc:
            raise UsageError(f"{args.netlist}: {exc}") from None
        tran = net.tran()
        if tran is not None and args.dt_default and args.tstop_default:
            cfg = SolverConfig(dt=tran[0], t_stop=tran[1])
        for d in validate_circuit(circuit):
            print(f"warning: {d}", file=sys.stderr)
        out = transient_batch(circuit, cfg)
        if out.failed[0]:
            raise ConvergenceError(f"transient failed to converge at t={out.fail_time[0]:.6g} s")
        tr = out.result(0)
        print(f"netlist: {args.netlist}")
        print(f"nodes: {len(tr.node_names)}  steps: {len(tr.times) - 1}")
        for name in tr.node_names[1:]:
            print(f"  v({name}) final = {tr.v(name)[-1]:.6g} V")
        if args.dump_waves:
            _dump_waves(args.dump_waves, tr.times, tr.node_names, tr.voltages)
        return EXIT_OK

    design = _design(args.design)
    state = MtjState(args.state)
    timing = default_timing()
    circuit = flatten_hierarchy(build_by_id(design, state, SenseAmpParams(), timing))
    out = transient_batch(circuit, cfg, peak_window=read_current_window(timing))
    if out.failed[0]:
        raise ConvergenceError(f"transient failed to converge at t={out.fail_time[0]:.6g} s")
    tr = out.result(0)
    try:
        m = extract_metrics(tr, timing)
    except MetricError as exc:
        raise UsageError(f"cannot extract metrics: {exc}") from None
    print(f"design: {design}  state: {state.value}")
    print(f"decision: {m.decision.value}")
    print(f"delay_ps: {_fmt(m.delay, 1e12)}")
    print(f"power_uw: {_fmt(m.power_avg, 1e6, 4)}")
    print(f"sense_margin_mv: {_fmt(m.sense_margin, 1e3, 2)}")
    print(f"i_rd_peak_ua: {_fmt(m.i_rd_peak, 1e6, 3)}")
    if args.dump_waves:
        _dump_waves(args.dump_waves, tr.times, tr.node_names, tr.voltages)
    return EXIT_OK


def _write_report(report: RunReport, stem: str, fmt: str) -> List[str]:
    paths = []
    if fmt in ("csv", "both"):
        paths.append(stem + ".csv")
        write_atomic(paths[-1], report.csv_text())
    if fmt in ("json", "both"):
        paths.append(stem + ".json")
        write_atomic(paths[-1], report.json_text())
    return paths


def cmd_montecarlo(args) -> int:
    if args.netlist:
        raise UsageError("montecarlo runs the built-in designs only; use --design")
    design = _design(args.design)
    spec = _spec(args)
    ens = run_ensemble(design, MtjState(args.state), spec, cfg=_cfg(args))
    report = RunReport.from_ensemble(ens)
    stem = args.out or f"{design}_{args.state}"
    for p in _write_report(report, stem, args.format):
        print(f"wrote {p}")
    print(f"error_count: {report.error_count} / {report.samples}")
    if report.failure_count > FAILURE_LIMIT * report.samples:
        print(f"error: {report.failure_count} of {report.samples} samples failed to converge",
              file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = _spec(args)
    cfg = _cfg(args)
    rows = []
    for design in DESIGNS:
        for state in (MtjState.P, MtjState.AP):
            try:
                ens = run_ensemble(design, state, spec, cfg=cfg)
            except ConvergenceError as exc:
                logging.getLogger(__name__).warning("%s %s: %s", design, state.value, exc)
                rows.append([design, state.value, "FAIL", "FAIL", "FAIL"])
                continue
            if ens.failure_count > FAILURE_LIMIT * len(ens.per_sample):
                rows.append([design, state.value, "FAIL", "FAIL", "FAIL"])
                continue
            power = summarize(s.power for s in ens.per_sample)["mean"]
            delay = summarize(s.delay for s in ens.per_sample)["mean"]
            rows.append([design, state.value, _fmt(power, 1e6, 4), _fmt(delay, 1e12, 1),
                         str(ens.error_count)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    w.writerows(rows)
    if args.out:
        write_atomic(args.out + ".csv", buf.getvalue())
        print(f"wrote {args.out}.csv")
    widths = [max(len(str(r[i])) for r in [SWEEP_COLUMNS] + rows) for i in range(len(SWEEP_COLUMNS))]
    for r in [SWEEP_COLUMNS] + rows:
        print("  ".join(str(c).ljust(wd) for c, wd in zip(r, widths)).rstrip())
    return EXIT_OK


QUANTITY_COLUMN = {"margin": "sense_margin_v", "delay": "delay_s", "power": "power_w"}
QUANTITY_LABEL = {"resistance": "resistance (ohm)", "margin": "sense margin (V)",
                  "delay": "readout delay (s)", "power": "power (W)"}


def _histogram_values(args) -> (np.ndarray, str):
    if args.input:
        column = args.column or QUANTITY_COLUMN.get(args.quantity or "margin")
        try:
            with open(args.input, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames is None or column not in reader.fieldnames:
                    raise UsageError(f"{args.input} has no column {column!r}")
                vals = [float(r[column]) for r in reader]
        except OSError as exc:
            raise UsageError(f"cannot read {args.input}: {exc}") from None
        except ValueError as exc:
            raise UsageError(f"{args.input}: {exc}") from None
        return np.array([v for v in vals if math.isfinite(v)]), column
    quantity = args.quantity or "resistance"
    spec = _spec(args)
    state = MtjState(args.state)
    if quantity == "resistance":
        return resistance_samples(spec, state), QUANTITY_LABEL[quantity]
    ens = run_ensemble(_design(args.design), state, spec, cfg=_cfg(args))
    attr = {"margin": "sense_margin", "delay": "delay", "power": "power"}[quantity]
    vals = np.array([getattr(s, attr) for s in ens.per_sample], dtype=float)
    return vals[np.isfinite(vals)], QUANTITY_LABEL[quantity]


def histogram_svg(values: np.ndarray, bins: int = 40, label: str = "value",
                  title: str = "") -> str:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise UsageError("no values to plot")
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        pad = abs(lo) * 1e-6 or 0.5
        lo, hi = lo - pad, hi + pad
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    width, height, ml, mr, mt, mb = 640, 400, 70, 20, 40, 60
    pw, ph = width - ml - mr, height - mt - mb
    top = max(int(counts.max()), 1)
    bw = pw / bins
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>']
    for i, c in enumerate(counts):
        h = ph * c / top
        parts.append(f'<rect class="bin" x="{ml + i * bw:.2f}" y="{mt + ph - h:.2f}" '
                     f'width="{bw:.2f}" height="{h:.2f}" fill="#4a78b0" stroke="white" '
                     f'stroke-width="0.5" data-count="{int(c)}"/>')
    parts += [f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
              f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    for frac in (0.0, 0.5, 1.0):
        x = ml + frac * pw
        parts.append(f'<text x="{x:.1f}" y="{mt + ph + 18}" text-anchor="middle" '
                     f'font-size="11">{lo + frac * (hi - lo):.4g}</text>')
    parts.append(f'<text x="{ml - 6}" y="{mt + 4}" text-anchor="end" font-size="11">{top}</text>')
    parts.append(f'<text x="{ml - 6}" y="{mt + ph}" text-anchor="end" font-size="11">0</text>')
    parts.append(f'<text class="xlabel" x="{ml + pw / 2:.1f}" y="{height - 14}" '
                 f'text-anchor="middle" font-size="13">{label}</text>')
    parts.append(f'<text class="ylabel" x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                 f'font-size="13" transform="rotate(-90 16 {mt + ph / 2:.1f})">count</text>')
    parts.append(f'<text class="count" x="{ml + pw - 4}" y="{mt + 14}" text-anchor="end" '
                 f'font-size="12">n = {values.size}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_histogram(args) -> int:
    values, label = _histogram_values(args)
    if values.size == 0:
        raise UsageError("histogram input is empty")
    if args.bins < 1:
        raise UsageError("--bins must be >= 1")
    title = f"{label}, {values.size} samples"
    path = args.out or "histogram.svg"
    if not path.endswith(".svg"):
        path += ".svg"
    write_atomic(path, histogram_svg(values, args.bins, label, title))
    print(f"wrote {path}")
    print(f"n={values.size} mean={values.mean():.6g} std={values.std(ddof=1) if values.size > 1 else 0.0:.6g}")
    return EXIT_OK


def _common(p: argparse.ArgumentParser, samples: int) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--design", default="nvsa-1ref", help="built-in design: " + ", ".join(DESIGNS))
    src.add_argument("--netlist", help="SPICE-style netlist file")
    p.add_argument("--state", choices=["P", "AP"], default="P", help="data cell state")
    p.add_argument("--samples", type=int, default=samples)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-tox-rel", type=float, default=VariationSpec.sigma_tox_rel,
                   help="1-sigma relative tox variation")
    p.add_argument("--sigma-vth", type=float, default=None,
                   help="1-sigma threshold-voltage variation in volts (default 0.010)")
    p.add_argument("--matched-spread", action="store_true",
                   help="2%% 3-sigma threshold variation instead of the 10 mV default")
    p.add_argument("--out", help="output path stem")
    p.add_argument("--format", choices=["csv", "json", "both"], default="both")
    p.add_argument("--dt", type=float, default=None, help="time step in seconds (default 1e-12)")
    p.add_argument("--tstop", type=float, default=None, help="stop time in seconds (default 2e-9)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mramsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="one nominal transient")
    _common(p, 1)
    p.add_argument("--dump-waves", help="write node waveforms to this CSV file")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("montecarlo", help="Monte Carlo ensemble of one design")
    _common(p, 1000)
    p.set_defaults(func=cmd_montecarlo)
    p = sub.add_parser("sweep", help="all designs and both states")
    _common(p, 100)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("histogram", help="SVG histogram of a quantity or CSV column")
    _common(p, 10000)
    p.add_argument("--quantity", choices=["resistance", "margin", "delay", "power"])
    p.add_argument("--input", help="per-sample CSV written by montecarlo")
    p.add_argument("--column", help="CSV column to plot")
    p.add_argument("--bins", type=int, default=40)
    p.set_defaults(func=cmd_histogram)
    return parser


def _resolve_defaults(args) -> None:
    args.dt_default = args.dt is None
    args.tstop_default = args.tstop is None
    args.dt = 1e-12 if args.dt is None else args.dt
    args.tstop = 2e-9 if args.tstop is None else args.tstop
    if args.sigma_vth is None:
        matched = VariationSpec.matched_spread()
        args.sigma_vth = matched.sigma_vth if args.matched_spread else VariationSpec.sigma_vth
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _resolve_defaults(args)
        return args.func(args)
    except UsageError as exc:
        print(f"mramsim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"mramsim {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
