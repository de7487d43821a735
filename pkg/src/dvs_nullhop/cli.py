"""Command-line front end: ``python -m dvs_nullhop <command>``.

Commands exchange plain files (EVT1/CSV events, HST1 histograms, NRM1
normalized frames, CFM1 compressed maps, JSON+WGT1 networks), so every
stage can be run, inspected and diffed on its own.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import aer_stream, histogram, normalizer, nullhop, pipeline, sparsity
from .fixed_point import Q16_8, Q24_16, from_real

TIMING_KEYS = {"cnn_ms", "sw_ms", "clock_mhz", "lanes", "lane_latency", "lane_interval", "rate_eps"}


def _wxh(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("dimensions must be positive")
    return w, h


def _timing(pairs: list[str]) -> dict:
    out = {}
    for item in pairs or []:
        for pair in item.split(","):
            key, sep, val = pair.partition("=")
            key = key.strip()
            if not sep or key not in TIMING_KEYS:
                raise ValueError(f"bad timing entry {pair!r}; keys: {', '.join(sorted(TIMING_KEYS))}")
            out[key] = float(val)
    return out


def _qfmt(raw: int, frac_bits: int) -> str:
    return f"raw={raw} real={raw / (1 << frac_bits):.6f}"


def _read_events(args, path):
    if Path(path).suffix.lower() in (".bin", ".evt"):
        return aer_stream.read_events(path), aer_stream.read_bin_geometry(path)
    geom = aer_stream.SensorGeometry(*args.sensor)
    return aer_stream.read_events(path, geometry=geom), geom


def _network(args) -> nullhop.NetworkConfig:
    if args.network:
        return nullhop.load_network(args.network)
    w, h = args.resolution
    return nullhop.roshambo_network(args.random_net, (1, h, w))


def _stages(args, timing: dict) -> tuple[list, list]:
    w, h = args.resolution
    cnn_s = timing.get("cnn_ms", pipeline.CNN_FRAME_S * 1e3) * 1e-3
    lanes = int(timing.get("lanes", normalizer.NORM_LANES))
    fpga = pipeline.fpga_stages(
        args.k_events, w * h, cnn_s, timing.get("clock_mhz", pipeline.NORM_CLOCK_HZ / 1e6) * 1e6,
        lanes, int(timing.get("lane_latency", normalizer.NORM_LANE_LATENCY_CYCLES)),
        int(timing.get("lane_interval", lanes)))
    base = pipeline.software_baseline_stages(
        cnn_s, timing.get("sw_ms", pipeline.SOFTWARE_OVERHEAD_S * 1e3) * 1e-3)
    return base, fpga


# -- commands ----------------------------------------------------------------

def cmd_gen(args) -> int:
    geom = aer_stream.SensorGeometry(*args.sensor)
    if args.pattern == "edge":
        ev = aer_stream.gen_moving_edge(geom, args.speed, args.rate, args.duration_us, args.seed)
    else:
        ev = aer_stream.gen_uniform_noise(geom, args.rate, args.duration_us, args.seed)
    aer_stream.write_events(ev, args.out, args.format, geom)
    print(f"events={len(ev)} sensor={geom.width}x{geom.height} out={args.out}")
    return 0


def cmd_frames(args) -> int:
    ev, geom = _read_events(args, args.events)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for h in histogram.collect_frames(ev, args.k_events, args.resolution, geom, args.polarity_mode):
        histogram.write_histogram(h, out / f"frame_{h.frame_seq:06d}.hst")
        print(f"frame={h.frame_seq} events_in={h.events_in} nonzero={int(h.nz_mask.sum())} "
              f"saturated={int(h.saturated)}")
        n += 1
    print(f"frames={n} out_dir={out}")
    return 0


def cmd_normalize(args) -> int:
    h = histogram.read_histogram(args.hist)
    variant = normalizer.NormVariant.from_name(args.norm_variant)
    nf = (normalizer.normalize_fixed if args.mode == "fixed" else normalizer.normalize_float)(h, variant)
    normalizer.write_normalized(nf, args.out)
    st = nf.stats
    print(f"frame={nf.frame_seq} mode={args.mode} degenerate={nf.degenerate.name}")
    if st is not None:
        mean_raw = st.mean_raw if st.mean_raw is not None else from_real(st.mean, Q24_16).raw
        sigma_raw = st.sigma_raw if st.sigma_raw is not None else from_real(st.sigma, Q24_16).raw
        print(f"S={int(st.S)} c={st.c}")
        print(f"mean {_qfmt(mean_raw, 16)}")
        print(f"sigma {_qfmt(sigma_raw, 16)}")
    raw = nf.q16_8()
    print(f"min {_qfmt(int(raw.min()), 8)}")
    print(f"max {_qfmt(int(raw.max()), 8)}")
    print(f"out={args.out}")
    return 0


def _load_tensor(path) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        t = np.load(p)
        return t[None] if t.ndim == 2 else t
    return normalizer.read_normalized(p).q16_8()[None]


def cmd_encode(args) -> int:
    t = _load_tensor(args.input)
    if args.mask:
        mask = histogram.read_histogram(args.mask).nz_mask
        t = np.where(mask[None], t, 0).astype(np.int32)
    c = sparsity.encode(t)
    sparsity.write_cfm(c, args.out)
    print(f"dims={c.height}x{c.width}x{c.channels} nnz={c.nnz} "
          f"bits={sparsity.compressed_size_bits(c)} ratio={sparsity.compression_ratio(c):.6f}")
    return 0


def cmd_decode(args) -> int:
    t = sparsity.decode(sparsity.read_cfm(args.cfm), strict=not args.lenient)
    np.save(args.out, t)
    print(f"shape={'x'.join(map(str, t.shape))} nnz={int(np.count_nonzero(t))} out={args.out}")
    return 0


def cmd_infer(args) -> int:
    net = _network(args)
    scores, stats = nullhop.run_network(sparsity.read_cfm(args.cfm), net)
    idx = nullhop.predict(scores)
    for label, s in zip(net.labels, scores.tolist()):
        print(f"score {label} {_qfmt(s, 8)}")
    for i, s in enumerate(stats):
        print(f"layer={i} macs={s.macs_performed} dense={s.macs_dense_equivalent} "
              f"saved={s.savings_ratio:.4f}")
    print(f"class={idx} label={net.labels[idx]}")
    if args.out:
        Path(args.out).write_text(json.dumps(
            {"labels": list(net.labels), "scores_raw": [int(s) for s in scores],
             "class_index": idx, "label": net.labels[idx]}, indent=2) + "\n")
    return 0


def _pipeline_events(args):
    if args.events:
        return _read_events(args, args.events)
    geom = aer_stream.SensorGeometry(*args.sensor)
    return aer_stream.gen_moving_edge(geom, args.speed, args.rate, args.duration_us, args.seed), geom


def _timing_summary(args, n_frames: int, rate: float, timing: dict) -> dict:
    base, fpga = _stages(args, timing)
    seq = pipeline.simulate(base, n_frames, pipeline.Mode.SEQUENTIAL, rate)
    pip = pipeline.simulate(fpga, n_frames, pipeline.Mode.PIPELINED, rate)
    return {"baseline": seq.summary(), "pipelined": pip.summary(),
            "speedup": pipeline.speedup(seq, pip), "event_rate_eps": rate}


def _print_summary(summary: dict) -> None:
    b, p = summary["baseline"], summary["pipelined"]
    print(f"baseline period_ms={b['period_ms']:.6f} fps={b['fps']:.3f}")
    print(f"pipelined period_ms={p['period_ms']:.6f} fps={p['fps']:.3f} "
          f"latency_ms={p['latency_ms']:.6f} binding={p['binding_stage']}")
    print(f"speedup={summary['speedup']:.6f} ({summary['speedup'] * 100:.1f}%)")


def cmd_pipeline(args) -> int:
    timing = _timing(args.timing)
    ev, geom = _pipeline_events(args)
    net = _network(args)
    _, fpga = _stages(args, timing)
    variant = normalizer.NormVariant.from_name(args.norm_variant)
    res = pipeline.end_to_end(ev, net, fpga, k_events=args.k_events, resolution=args.resolution,
                              geometry=geom, polarity_mode=args.polarity_mode, variant=variant,
                              masked=not args.dense, threaded=args.threaded,
                              collection=args.collection, event_rate_eps=timing.get("rate_eps"))
    for c in res.classifications:
        print(f"frame={c.frame_seq} class={c.class_index} label={c.label}")
    print(f"frames={len(res.classifications)}")
    if res.trace is None:
        return 0
    base, _ = _stages(args, timing)
    seq = pipeline.simulate(base, res.trace.n_frames, pipeline.Mode.SEQUENTIAL)
    summary = {"baseline": seq.summary(), "pipelined": res.trace.summary(),
               "speedup": pipeline.speedup(seq, res.trace),
               "macs_performed": res.mac_stats.macs_performed,
               "macs_dense_equivalent": res.mac_stats.macs_dense_equivalent}
    _print_summary(summary)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "classifications.csv").write_text(res.classifications_csv())
        (out / "trace.csv").write_text(res.trace.to_csv())
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_bench(args) -> int:
    timing = _timing(args.timing)
    rate = timing.get("rate_eps", args.rate)
    summary = _timing_summary(args, args.frames, rate, timing)
    w, h = args.resolution
    norm_cycles = int(_stages(args, timing)[1][1].value)
    print(f"norm_cycles={norm_cycles} pixels={w * h}")
    _print_summary(summary)
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--k-events", type=int, default=histogram.DEFAULT_K_EVENTS)
    common.add_argument("--resolution", type=_wxh, default=histogram.DEFAULT_RESOLUTION)
    common.add_argument("--sensor", type=_wxh, default=(240, 180),
                        help="sensor geometry for CSV inputs and generators")
    common.add_argument("--polarity-mode", choices=("count", "signed"), default="count")
    common.add_argument("--norm-variant", choices=("literal", "subtract-mean", "nz-variance"),
                        default="literal")
    common.add_argument("--mode", choices=("float", "fixed"), default="fixed")
    common.add_argument("--timing", action="append", metavar="KEY=VALUE",
                        help=f"stage timing overrides ({', '.join(sorted(TIMING_KEYS))})")
    common.add_argument("--seed", type=int, default=0)

    gen_opts = argparse.ArgumentParser(add_help=False)
    gen_opts.add_argument("--pattern", choices=("edge", "noise"), default="edge")
    gen_opts.add_argument("--rate", type=float, default=pipeline.PEAK_RATE_EPS, help="events/s")
    gen_opts.add_argument("--duration-us", type=int, default=60_000)
    gen_opts.add_argument("--speed", type=float, default=2000.0, help="edge speed, px/s")

    net_opts = argparse.ArgumentParser(add_help=False)
    net_opts.add_argument("--network", help="network JSON (with .wgt sidecar)")
    net_opts.add_argument("--random-net", type=int, default=0, metavar="SEED",
                          help="seed for a random Roshambo-shaped network when --network is absent")

    p = argparse.ArgumentParser(prog="dvs_nullhop", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", parents=[common, gen_opts], help="generate a synthetic event stream")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--format", choices=("csv", "bin"))
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("frames", parents=[common], help="collect HST1 histograms")
    s.add_argument("events")
    s.add_argument("-o", "--out-dir", required=True)
    s.set_defaults(func=cmd_frames)

    s = sub.add_parser("normalize", parents=[common], help="normalize an HST1 histogram")
    s.add_argument("hist")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_normalize)

    s = sub.add_parser("encode", parents=[common], help="compress NRM1 or .npy to CFM1")
    s.add_argument("input")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--mask", metavar="HST", help="keep only pixels non-zero in this histogram")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", parents=[common], help="expand CFM1 to a dense .npy")
    s.add_argument("cfm")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--lenient", action="store_true", help="tolerate zeros in the value list")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("infer", parents=[common, net_opts], help="run the network on a CFM1 map")
    s.add_argument("cfm")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("pipeline", parents=[common, gen_opts, net_opts],
                       help="events -> classifications plus timing trace")
    s.add_argument("--events", help="event file; generated from --rate/--duration-us if absent")
    s.add_argument("--threaded", action="store_true")
    s.add_argument("--dense", action="store_true", help="do not mask by the histogram support")
    s.add_argument("--collection", choices=("rate", "timestamps"), default="rate")
    s.add_argument("-o", "--out-dir")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("bench", parents=[common], help="timing model summary")
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--rate", type=float, default=pipeline.PEAK_RATE_EPS)
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
