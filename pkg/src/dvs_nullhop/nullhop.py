"""Functional model of the NullHop compute path.

Input pixels arrive as (row, col, channel, value) tuples decoded from the
sparsity map, so zero pixels never reach a MAC. Each non-zero pixel is
scattered into every output position it influences. A gather-style dense
convolution is kept alongside as the reference the scatter path must match
exactly.

All products are Q16.8 x Q16.8, accumulated in 64-bit integers (Python ints
when the bound could overflow) and rounded once, half-to-even, back to Q16.8.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fixed_point import Q16_8, round_shift_array
from .sparsity import CompressedFeatureMap, decode, encode, nonzero_coords

MAC_UNITS = 128
VALID_KERNEL_SIZES = (1, 3, 5, 7)
ROSHAMBO_LABELS = ("rock", "paper", "scissors", "background")

WGT_MAGIC = b"WGT1"
_WGT_HEADER = struct.Struct("<4sII")


@dataclass
class ConvLayerConfig:
    kernel_size: int
    in_channels: int
    out_channels: int
    kernels: np.ndarray  # (out, in, k, k) Q16.8 raw
    padding: Optional[int] = None
    relu: bool = True
    pool: bool = False
    bias: Optional[np.ndarray] = None  # (out,) Q16.8 raw

    def __post_init__(self):
        k = self.kernel_size
        if k not in VALID_KERNEL_SIZES:
            raise ValueError(f"kernel_size must be one of {VALID_KERNEL_SIZES}, got {k}")
        if self.padding is None:
            self.padding = (k - 1) // 2
        self.kernels = np.asarray(self.kernels, dtype=np.int64)
        want = (self.out_channels, self.in_channels, k, k)
        if self.kernels.shape != want:
            raise ValueError(f"kernels have shape {self.kernels.shape}, expected {want}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.int64)
            if self.bias.shape != (self.out_channels,):
                raise ValueError("bias must have one entry per output channel")

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        ho = h + 2 * self.padding - self.kernel_size + 1
        wo = w + 2 * self.padding - self.kernel_size + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"{h}x{w} input too small for k={self.kernel_size}, pad={self.padding}")
        return ho, wo

    def output_shape(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        ch, h, w = in_shape
        if ch != self.in_channels:
            raise ValueError(f"layer expects {self.in_channels} input channels, got {ch}")
        ho, wo = self.output_hw(h, w)
        if self.pool:
            ho, wo = ho // 2, wo // 2
            if ho < 1 or wo < 1:
                raise ValueError("max-pool input smaller than 2x2")
        return self.out_channels, ho, wo


@dataclass
class MacStats:
    macs_performed: int = 0
    macs_dense_equivalent: int = 0
    zero_skipped: int = 0      # zero input pixels never fed to the MAC array
    nonzero_inputs: int = 0

    @property
    def macs_skipped(self) -> int:
        return self.macs_dense_equivalent - self.macs_performed

    @property
    def savings_ratio(self) -> float:
        return self.macs_skipped / self.macs_dense_equivalent if self.macs_dense_equivalent else 0.0

    def mac_array_cycles(self, mac_units: int = MAC_UNITS) -> int:
        """Lower bound on compute cycles with every MAC unit busy."""
        return -(-self.macs_performed // mac_units)

    def __add__(self, other: MacStats) -> MacStats:
        return MacStats(self.macs_performed + other.macs_performed,
                        self.macs_dense_equivalent + other.macs_dense_equivalent,
                        self.zero_skipped + other.zero_skipped,
                        self.nonzero_inputs + other.nonzero_inputs)


def _acc_dtype(max_in: int, cfg: ConvLayerConfig):
    max_k = int(np.abs(cfg.kernels).max()) if cfg.kernels.size else 0
    bound = max_in * max_k * cfg.kernel_size ** 2 * cfg.in_channels
    if cfg.bias is not None and cfg.bias.size:
        bound += int(np.abs(cfg.bias).max()) << Q16_8.frac_bits
    return np.int64 if bound < 2 ** 62 else object


def _finish(acc: np.ndarray, cfg: ConvLayerConfig) -> np.ndarray:
    if cfg.bias is not None:
        acc = acc + (cfg.bias.astype(acc.dtype) << Q16_8.frac_bits)[:, None, None]
    out = round_shift_array(acc, Q16_8.frac_bits)
    return np.clip(out, Q16_8.raw_min, Q16_8.raw_max).astype(np.int32)


def conv_dense_oracle(x: np.ndarray, cfg: ConvLayerConfig) -> np.ndarray:
    """Textbook cross-correlation with zero padding; no ReLU or pooling."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != cfg.in_channels:
        raise ValueError(f"input shape {x.shape} does not match {cfg.in_channels} channels")
    cfg.output_hw(x.shape[1], x.shape[2])
    dt = _acc_dtype(int(np.abs(x).max()) if x.size else 0, cfg)
    p, k = cfg.padding, cfg.kernel_size
    xp = np.pad(x.astype(dt), ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (in, ho, wo, k, k)
    acc = np.tensordot(cfg.kernels.astype(dt), win, axes=([1, 2, 3], [0, 3, 4]))
    return _finish(acc, cfg)


def _valid_taps(n: int, n_out: int, k: int, pad: int) -> np.ndarray:
    """For each input coordinate, how many kernel offsets land inside the output."""
    pos = np.arange(n)[:, None] - np.arange(k)[None, :] + pad
    return ((pos >= 0) & (pos < n_out)).sum(axis=1)


def conv_zero_skip(c: CompressedFeatureMap, cfg: ConvLayerConfig) -> tuple[np.ndarray, MacStats]:
    """Scatter convolution over the non-zero pixels of a compressed map."""
    if c.channels != cfg.in_channels:
        raise ValueError(f"input has {c.channels} channels, layer expects {cfg.in_channels}")
    ho, wo = cfg.output_hw(c.height, c.width)
    k, p, n_out = cfg.kernel_size, cfg.padding, cfg.out_channels
    row, col, ch, val = nonzero_coords(c)
    dt = _acc_dtype(int(np.abs(val).max()) if len(val) else 0, cfg)
    acc = np.zeros((n_out, ho, wo), dtype=dt)
    kern = cfg.kernels.astype(dt)
    performed = 0
    for ic in range(cfg.in_channels):
        sel = ch == ic
        if not sel.any():
            continue
        r, cc, v = row[sel], col[sel], val[sel].astype(dt)
        for i in range(k):
            orow = r - i + p
            rok = (orow >= 0) & (orow < ho)
            for j in range(k):
                ocol = cc - j + p
                ok = rok & (ocol >= 0) & (ocol < wo)
                n = int(ok.sum())
                if not n:
                    continue
                # positions are distinct within one (channel, tap) pair
                acc[:, orow[ok], ocol[ok]] += kern[:, ic, i, j][:, None] * v[ok][None, :]
                performed += n * n_out
    taps_r = _valid_taps(c.height, ho, k, p)
    taps_c = _valid_taps(c.width, wo, k, p)
    dense = int(cfg.in_channels * taps_r.sum() * taps_c.sum() * n_out)
    stats = MacStats(performed, dense, c.n_elements - c.nnz, c.nnz)
    return _finish(acc, cfg), stats


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0)


def maxpool2(t: np.ndarray) -> np.ndarray:
    """2x2 / stride-2 max-pool; an odd trailing row or column is dropped."""
    ch, h, w = t.shape
    if h < 2 or w < 2:
        raise ValueError(f"cannot max-pool a {h}x{w} map")
    h2, w2 = h // 2, w // 2
    return t[:, :2 * h2, :2 * w2].reshape(ch, h2, 2, w2, 2).max(axis=(2, 4))


def _post(t: np.ndarray, cfg: ConvLayerConfig) -> np.ndarray:
    if cfg.relu:
        t = relu(t)
    if cfg.pool:
        t = maxpool2(t)
    return t


def run_layer(c: CompressedFeatureMap, cfg: ConvLayerConfig) -> tuple[CompressedFeatureMap, MacStats]:
    """conv -> optional ReLU -> optional max-pool -> re-compression."""
    out, stats = conv_zero_skip(c, cfg)
    return encode(_post(out, cfg)), stats


def layer_reference(x: np.ndarray, cfg: ConvLayerConfig) -> np.ndarray:
    return _post(conv_dense_oracle(x, cfg), cfg)


# -- networks ----------------------------------------------------------------

@dataclass
class NetworkConfig:
    layers: list[ConvLayerConfig]
    fc_weights: np.ndarray  # (classes, flattened last output) Q16.8 raw
    labels: Sequence[str] = ROSHAMBO_LABELS
    input_shape: Optional[tuple[int, int, int]] = None

    def __post_init__(self):
        self.fc_weights = np.asarray(self.fc_weights, dtype=np.int64)
        if self.fc_weights.ndim != 2:
            raise ValueError("fc_weights must be a 2D matrix")
        if len(self.labels) != self.fc_weights.shape[0]:
            raise ValueError(f"{len(self.labels)} labels for {self.fc_weights.shape[0]} fc rows")
        if self.input_shape is not None:
            self.validate(self.input_shape)

    def validate(self, input_shape: tuple[int, int, int]) -> list[tuple[int, int, int]]:
        shapes = [tuple(input_shape)]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        flat = int(np.prod(shapes[-1]))
        if self.fc_weights.shape[1] != flat:
            raise ValueError(f"fc expects {self.fc_weights.shape[1]} inputs, last layer gives {flat}")
        return shapes


def fully_connected(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Host-side FC layer. Scores are Q.8 raw, rounded but not saturated."""
    flat = np.asarray(x).reshape(-1)
    bound = (int(np.abs(flat).max()) if flat.size else 0) * (int(np.abs(w).max()) if w.size else 0) * flat.size
    dt = np.int64 if bound < 2 ** 62 else object
    acc = w.astype(dt) @ flat.astype(dt)
    return round_shift_array(np.asarray(acc), Q16_8.frac_bits).astype(np.int64)


def run_network(c: CompressedFeatureMap, net: NetworkConfig) -> tuple[np.ndarray, list[MacStats]]:
    net.validate(c.shape)
    stats = []
    for layer in net.layers:
        c, s = run_layer(c, layer)
        stats.append(s)
    return fully_connected(decode(c), net.fc_weights), stats


def network_reference(x: np.ndarray, net: NetworkConfig) -> np.ndarray:
    """Dense end-to-end reference for :func:`run_network`."""
    for layer in net.layers:
        x = layer_reference(x, layer)
    return fully_connected(x, net.fc_weights)


def predict(scores: np.ndarray) -> int:
    return int(np.argmax(scores))


def random_layer(rng: np.random.Generator, k: int, in_ch: int, out_ch: int,
                 relu: bool = True, pool: bool = False, scale: float = 1.0) -> ConvLayerConfig:
    std = scale * np.sqrt(2.0 / (in_ch * k * k))
    w = np.rint(rng.normal(0.0, std, (out_ch, in_ch, k, k)) * Q16_8.one).astype(np.int64)
    return ConvLayerConfig(k, in_ch, out_ch, w, relu=relu, pool=pool)


ROSHAMBO_LAYERS = ((5, 16), (3, 32), (3, 64), (3, 128), (1, 128))


def roshambo_network(seed: int = 0, input_shape=(1, 64, 64),
                     layers=ROSHAMBO_LAYERS, labels=ROSHAMBO_LABELS) -> NetworkConfig:
    """Roshambo-shaped net with random weights: each conv halves the map,
    64x64 -> 2x2, then a fully-connected classifier."""
    rng = np.random.default_rng(seed)
    convs, ch = [], input_shape[0]
    for k, out_ch in layers:
        convs.append(random_layer(rng, k, ch, out_ch, relu=True, pool=True))
        ch = out_ch
    probe = NetworkConfig(convs, np.zeros((len(labels), 1)), labels)
    shapes = [tuple(input_shape)]
    for layer in probe.layers:
        shapes.append(layer.output_shape(shapes[-1]))
    n_in = int(np.prod(shapes[-1]))
    fc = np.rint(rng.normal(0.0, 1.0 / np.sqrt(n_in), (len(labels), n_in)) * Q16_8.one)
    return NetworkConfig(convs, fc.astype(np.int64), labels, tuple(input_shape))


# -- network files -----------------------------------------------------------

def save_network(net: NetworkConfig, path) -> Path:
    """Write ``<name>.json`` plus a ``<name>.wgt`` sidecar of raw weights."""
    path = Path(path)
    wpath = path.with_suffix(".wgt")
    tensors, desc = [], []
    for layer in net.layers:
        desc.append({"k": layer.kernel_size, "in_ch": layer.in_channels,
                     "out_ch": layer.out_channels, "padding": layer.padding,
                     "relu": layer.relu, "pool": layer.pool, "bias": layer.bias is not None})
        tensors.append(layer.kernels)
        if layer.bias is not None:
            tensors.append(layer.bias)
    tensors.append(net.fc_weights)
    doc = {"format": "dvs_nullhop.network/1",
           "input_shape": list(net.input_shape) if net.input_shape else None,
           "layers": desc,
           "fc": {"rows": int(net.fc_weights.shape[0]), "cols": int(net.fc_weights.shape[1]),
                  "labels": list(net.labels)},
           "weights": wpath.name}
    flat = np.concatenate([np.asarray(t).reshape(-1) for t in tensors])
    if np.any(flat > np.iinfo(np.int32).max) or np.any(flat < np.iinfo(np.int32).min):
        raise ValueError("weights do not fit in 32-bit containers")
    with open(wpath, "wb") as f:
        f.write(_WGT_HEADER.pack(WGT_MAGIC, len(tensors), len(flat)))
        f.write(flat.astype("<i4").tobytes())
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return wpath


def load_network(path) -> NetworkConfig:
    path = Path(path)
    doc = json.loads(path.read_text())
    data = (path.parent / doc["weights"]).read_bytes()
    magic, n_tensors, n_values = _WGT_HEADER.unpack_from(data)
    if magic != WGT_MAGIC:
        raise ValueError(f"bad weight magic {magic!r}")
    flat = np.frombuffer(data[_WGT_HEADER.size:], "<i4").astype(np.int64)
    if len(flat) != n_values:
        raise ValueError(f"weight file holds {len(flat)} values, header says {n_values}")
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        if pos + n > len(flat):
            raise ValueError("weight file too short for the described network")
        out = flat[pos:pos + n].reshape(shape)
        pos += n
        return out

    layers = []
    for d in doc["layers"]:
        k, i, o = d["k"], d["in_ch"], d["out_ch"]
        w = take((o, i, k, k))
        b = take((o,)) if d.get("bias") else None
        layers.append(ConvLayerConfig(k, i, o, w, d.get("padding"), d.get("relu", True),
                                      d.get("pool", False), b))
    fc = take((doc["fc"]["rows"], doc["fc"]["cols"]))
    if pos != len(flat):
        raise ValueError(f"{len(flat) - pos} unused values in weight file")
    shape = tuple(doc["input_shape"]) if doc.get("input_shape") else None
    return NetworkConfig(layers, fc, tuple(doc["fc"]["labels"]), shape)
