import json
import struct

import numpy as np
import pytest

from dvs_nullhop.aer_stream import read_events
from dvs_nullhop.cli import main
from dvs_nullhop.histogram import EventHistogram, read_histogram, write_histogram
from dvs_nullhop.normalizer import normalize_float, read_normalized
from dvs_nullhop.nullhop import roshambo_network, save_network


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_deterministic_and_rate(tmp_path, capsys):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    for p in (a, b):
        assert run(capsys, "gen", "-o", p, "--rate", 100000, "--duration-us", 200000, "--seed", 5)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert abs(len(read_events(a)) - 20000) <= 1000
    empty = tmp_path / "e.csv"
    assert run(capsys, "gen", "-o", empty, "--duration-us", 0)[0] == 0
    assert empty.read_text() == "timestamp_us,x,y,polarity\n"


def test_frames_counts(tmp_path, capsys):
    ev = tmp_path / "ev.bin"
    run(capsys, "gen", "-o", ev, "--rate", 600000, "--duration-us", 10000, "--seed", 1)
    out = tmp_path / "frames"
    code, text, _ = run(capsys, "frames", ev, "-o", out)
    assert code == 0
    files = sorted(out.glob("*.hst"))
    assert len(files) == 3
    assert all(int(read_histogram(f).counts.sum()) == 2000 for f in files)
    short = tmp_path / "short.csv"
    run(capsys, "gen", "-o", short, "--rate", 199900, "--duration-us", 10000)
    code, _, _ = run(capsys, "frames", short, "-o", tmp_path / "none")
    assert code == 0 and not list((tmp_path / "none").glob("*.hst"))


@pytest.mark.parametrize("mode", ["float", "fixed"])
def test_normalize_fixture(tmp_path, capsys, mode):
    hst = tmp_path / "fx.hst"
    write_histogram(EventHistogram.from_counts([[0, 2], [4, 6]]), hst)
    nrm = tmp_path / "fx.nrm"
    code, out, _ = run(capsys, "normalize", hst, "-o", nrm, "--mode", mode)
    assert code == 0 and "S=12 c=3" in out and "mean raw=262144 real=4.000000" in out
    got = read_normalized(nrm).raw / 256
    assert np.abs(got - normalize_float([[0, 2], [4, 6]]).values).max() <= 2 ** -7


def test_encode_decode_roundtrip(tmp_path, capsys):
    t = np.zeros((2, 5, 6), np.int32)
    t[0, 1, 2], t[1, 4, 5] = 99, -3
    src = tmp_path / "t.npy"
    np.save(src, t)
    cfm, back = tmp_path / "t.cfm", tmp_path / "back.npy"
    assert run(capsys, "encode", src, "-o", cfm)[0] == 0
    assert run(capsys, "decode", cfm, "-o", back)[0] == 0
    assert back.read_bytes() == src.read_bytes()


def test_encode_with_mask(tmp_path, capsys):
    hst, nrm, cfm = tmp_path / "h.hst", tmp_path / "n.nrm", tmp_path / "c.cfm"
    write_histogram(EventHistogram.from_counts([[0, 2], [4, 6]]), hst)
    run(capsys, "normalize", hst, "-o", nrm)
    code, out, _ = run(capsys, "encode", nrm, "-o", cfm, "--mask", hst)
    assert code == 0 and "nnz=3" in out
    code, out, _ = run(capsys, "encode", nrm, "-o", cfm)
    assert "nnz=4" in out


def test_infer(tmp_path, capsys):
    net = tmp_path / "net.json"
    save_network(roshambo_network(1), net)
    t = np.zeros((1, 64, 64), np.int32)
    t[0, 20:40, 10:30] = 200
    np.save(tmp_path / "x.npy", t)
    run(capsys, "encode", tmp_path / "x.npy", "-o", tmp_path / "x.cfm")
    code, out, _ = run(capsys, "infer", tmp_path / "x.cfm", "--network", net, "-o", tmp_path / "s.json")
    assert code == 0 and "label=" in out
    doc = json.loads((tmp_path / "s.json").read_text())
    assert len(doc["scores_raw"]) == 4 and doc["label"] in doc["labels"]


def test_pipeline_outputs_and_speedup(tmp_path, capsys):
    out = tmp_path / "run"
    code, text, _ = run(capsys, "pipeline", "--duration-us", 24000, "--seed", 3, "-o", out)
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["speedup"] == pytest.approx(0.667, abs=0.005)
    assert summary["pipelined"]["fps"] >= 160
    assert (out / "classifications.csv").read_text().count("\n") == 1 + 4
    assert "speedup=0.66" in text


def test_pipeline_byte_identical_runs(tmp_path, capsys):
    for name in ("a", "b"):
        run(capsys, "pipeline", "--duration-us", 12000, "--seed", 8, "-o", tmp_path / name)
    run(capsys, "pipeline", "--duration-us", 12000, "--seed", 8, "--threaded", "-o", tmp_path / "c")
    for f in ("classifications.csv", "trace.csv", "summary.json"):
        ref = (tmp_path / "a" / f).read_bytes()
        assert (tmp_path / "b" / f).read_bytes() == ref
        assert (tmp_path / "c" / f).read_bytes() == ref


def test_chained_commands_equal_pipeline(tmp_path, capsys):
    ev = tmp_path / "ev.bin"
    run(capsys, "gen", "-o", ev, "--duration-us", 12000, "--seed", 2)
    net = tmp_path / "net.json"
    save_network(roshambo_network(0), net)
    run(capsys, "pipeline", "--events", ev, "--network", net, "-o", tmp_path / "pipe")
    labels = [line.split(",")[2] for line in
              (tmp_path / "pipe" / "classifications.csv").read_text().splitlines()[1:]]
    run(capsys, "frames", ev, "-o", tmp_path / "frames")
    chained = []
    for hst in sorted((tmp_path / "frames").glob("*.hst")):
        nrm, cfm = hst.with_suffix(".nrm"), hst.with_suffix(".cfm")
        run(capsys, "normalize", hst, "-o", nrm)
        run(capsys, "encode", nrm, "--mask", hst, "-o", cfm)
        _, out, _ = run(capsys, "infer", cfm, "--network", net)
        chained.append(out.strip().splitlines()[-1].split("label=")[1])
    assert chained == labels and len(labels) == 2


def test_bench(capsys, tmp_path):
    code, out, _ = run(capsys, "bench", "--frames", 10, "-o", tmp_path / "b.json")
    assert code == 0 and "norm_cycles=4142" in out
    assert json.loads((tmp_path / "b.json").read_text())["speedup"] == pytest.approx(2 / 3)


def test_errors_are_one_line(tmp_path, capsys):
    code, out, err = run(capsys, "normalize", tmp_path / "missing.hst", "-o", tmp_path / "x")
    assert code == 1 and err.count("\n") == 1 and err.startswith("error: FileNotFoundError:")
    code, _, err = run(capsys, "bench", "--timing", "bogus=1")
    assert code == 1 and err.startswith("error: ValueError:")
    with pytest.raises(SystemExit):
        main(["frames"])
