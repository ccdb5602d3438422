import csv
import json
import math
import re

import numpy as np
import pytest

from mramsim import cli
from mramsim.cli import (EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, SAMPLE_COLUMNS, SWEEP_COLUMNS,
                         histogram_svg, main, summarize)
from mramsim.senseamps import DESIGNS

RC = "rc step\nR1 a 0 1k\nC1 a 0 50f ic=1\n.tran 1p 200p\n"


def bins(svg):
    return [int(c) for c in re.findall(r'class="bin"[^>]*data-count="(\d+)"', svg)]


def test_simulate_design(capsys):
    assert main(["simulate", "--design", "nvsa-1ref", "--state", "P"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "decision: P" in out
    assert re.search(r"delay_ps: \d+\.\d", out)


def test_simulate_bad_design(capsys):
    assert main(["simulate", "--design", "bogus"]) == EXIT_USAGE
    err = capsys.readouterr().err
    for d in DESIGNS:
        assert d in err


def test_simulate_netlist_dumps_waves(tmp_path):
    net = tmp_path / "rc.sp"
    net.write_text(RC)
    waves = tmp_path / "w.csv"
    assert main(["simulate", "--netlist", str(net), "--dump-waves", str(waves)]) == EXIT_OK
    with open(waves, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "a"]
    assert len(rows) == 202
    t, v = float(rows[51][0]), float(rows[51][1])
    assert t == pytest.approx(50e-12)
    assert v == pytest.approx(math.exp(-1), abs=0.005)


def test_simulate_missing_netlist(tmp_path):
    assert main(["simulate", "--netlist", str(tmp_path / "nope.sp")]) == EXIT_USAGE


def test_solver_failure_exits_3(tmp_path, monkeypatch):
    real = cli.transient_batch

    def failing(*args, **kwargs):
        out = real(*args, **kwargs)
        out.failed[0] = True
        out.fail_time[0] = 1e-10
        return out

    monkeypatch.setattr(cli, "transient_batch", failing)
    net = tmp_path / "rc.sp"
    net.write_text(RC)
    assert main(["simulate", "--netlist", str(net)]) == EXIT_NUMERIC


def test_usage_errors():
    assert main(["montecarlo", "--samples", "0"]) == EXIT_USAGE
    assert main(["montecarlo", "--sigma-vth", "-1"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["montecarlo", "--state", "X"])
    assert info.value.code == EXIT_USAGE


def test_montecarlo_outputs(tmp_path, capsys):
    stem = str(tmp_path / "csa_p")
    args = ["montecarlo", "--design", "csa-1ref", "--state", "P", "--samples", "12",
            "--seed", "7", "--out", stem]
    assert main(args) == EXIT_OK
    first = (open(stem + ".csv", "rb").read(), open(stem + ".json", "rb").read())
    assert "error_count:" in capsys.readouterr().out
    assert main(args) == EXIT_OK
    assert (open(stem + ".csv", "rb").read(), open(stem + ".json", "rb").read()) == first

    with open(stem + ".csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(SAMPLE_COLUMNS)
    assert [int(r["index"]) for r in rows] == list(range(12))
    summary = json.loads(first[1])
    assert summary["samples"] == 12 and summary["seed"] == 7
    assert summary["error_count"] == sum(r["decision"] != "P" for r in rows)
    # summary statistics are recomputable from the rows
    delays = [float(r["delay_s"]) for r in rows]
    assert summary["delay_s"] == summarize(delays)
    assert not list(tmp_path.glob("*.tmp*"))


def test_montecarlo_format_choice(tmp_path):
    stem = str(tmp_path / "only")
    assert main(["montecarlo", "--design", "vsa-1ref", "--samples", "2", "--format", "json",
                 "--out", stem]) == EXIT_OK
    assert (tmp_path / "only.json").exists() and not (tmp_path / "only.csv").exists()


def test_summarize():
    s = summarize([1.0, 2.0, 3.0, math.nan])
    assert s == {"n": 3, "mean": 2.0, "std": 1.0}
    assert summarize([]) == {"n": 0, "mean": None, "std": None}


def test_histogram_svg_structure():
    svg = histogram_svg(np.arange(100.0), bins=10, label="x")
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    counts = bins(svg)
    assert len(counts) == 10 and sum(counts) == 100
    assert 'class="xlabel"' in svg and 'class="ylabel"' in svg
    assert "n = 100" in svg


def test_histogram_zero_variance():
    counts = bins(histogram_svg(np.full(50, 3.0), bins=40))
    assert sum(1 for c in counts if c) == 1


def test_resistance_histograms(tmp_path, capsys):
    stats = {}
    for state in ("P", "AP"):
        path = tmp_path / f"r_{state}.svg"
        assert main(["histogram", "--quantity", "resistance", "--state", state,
                     "--samples", "10000", "--out", str(path)]) == EXIT_OK
        svg = path.read_text()
        counts = bins(svg)
        assert len(counts) == 40 and sum(counts) == 10000
        # unimodal: counts rise to one peak and then fall, allowing sampling noise
        k = int(np.argmax(counts))
        smooth = np.convolve(counts, np.ones(5) / 5, mode="same")
        assert np.all(np.diff(smooth[2:k - 1]) > -40) and np.all(np.diff(smooth[k + 1:-2]) < 40)
        m = re.search(r"mean=(\S+) std=(\S+)", capsys.readouterr().out)
        stats[state] = float(m.group(1)), float(m.group(2))
    assert stats["P"][0] == pytest.approx(742.0, rel=0.01)
    cv = {s: sd / mean for s, (mean, sd) in stats.items()}
    assert cv["AP"] / cv["P"] == pytest.approx(1.0, rel=0.10)


def test_histogram_from_csv(tmp_path):
    stem = str(tmp_path / "mc")
    assert main(["montecarlo", "--design", "vsa-1ref", "--samples", "6", "--out", stem]) == 0
    svg = tmp_path / "h.svg"
    assert main(["histogram", "--input", stem + ".csv", "--column", "power_w",
                 "--out", str(svg)]) == EXIT_OK
    assert sum(bins(svg.read_text())) == 6


def test_histogram_empty_input(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text(",".join(SAMPLE_COLUMNS) + "\n")
    assert main(["histogram", "--input", str(empty), "--column", "power_w",
                 "--out", str(tmp_path / "e.svg")]) == EXIT_USAGE


def test_sweep_table(tmp_path, capsys):
    stem = str(tmp_path / "sweep")
    assert main(["sweep", "--samples", "1", "--sigma-tox-rel", "0", "--sigma-vth", "0",
                 "--out", stem]) == EXIT_OK
    with open(stem + ".csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(SWEEP_COLUMNS)
    assert len(rows) == 11
    assert {(r[0], r[1]) for r in rows[1:]} == {(d, s) for d in DESIGNS for s in ("P", "AP")}
    assert all(r[4] == "0" for r in rows[1:])
    table = capsys.readouterr().out.splitlines()
    assert table[-11].split() == list(SWEEP_COLUMNS)
