"""Bit-exact functional simulation of the streaming network plus its
cycle-accounting models (throughput cascade, op counts, latency estimates).

Conv and Dense blocks accumulate exact wide integer sums; the following
ScaleShift block scales by the fused constant, adds the shift, saturates back
to the activation format and applies the activation. A Conv/Dense output that
feeds anything other than a ScaleShift is saturated to the activation format
directly. Flattening (at a Mux block) is pixel-raster major with channels
minor, and convolution patches are laid out (window row, window column,
channel), matching the column order of the weight matrices.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

import numpy as np

from .fixedpoint import (
    ACT_FORMAT,
    SCALE_FORMAT,
    FixedPointFormat,
    SaturationCounter,
    quantize,
    shift_right_round,
)
from .matrices import TernaryMatrix
from .network import LayerSpec, NetworkSpec, ScaleShiftParams


class ImageFormatError(ValueError):
    """An image file violates the img format."""


@dataclass(frozen=True)
class ImageStream:
    """A raster-ordered image of raw fixed-point channel vectors."""

    data: np.ndarray = field(repr=False)  # (height, width, channels) int32 raw
    frac_bits: int = 4

    def __post_init__(self) -> None:
        a = np.asarray(self.data, dtype=np.int64)
        if a.ndim != 3:
            raise ValueError(f"image must be HxWxD, got shape {a.shape}")
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "data", a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> Iterator[np.ndarray]:
        """Pixels in raster order (left-to-right, top-to-bottom)."""
        for i in range(self.height):
            for j in range(self.width):
                yield self.data[i, j]

    def flatten(self) -> np.ndarray:
        """Raster-major, channel-minor vector of all values."""
        return self.data.reshape(-1).copy()


class WindowBuffer:
    """Line-buffer and shift-register model of the streaming patch generator.

    One pixel enters per push; kernel-1 line buffers delay previous rows by
    the image width so the same column of the previous rows appears together
    with the incoming pixel. After the warm-up of floor(N/2) rows plus
    floor(N/2) pixels, one patch per push leaves in raster order; border taps
    are switched to zero based on the centre coordinate.
    """

    def __init__(self, width: int, height: int, channels: int, kernel: int) -> None:
        if kernel % 2 == 0:
            raise ValueError(f"window kernel must be odd, got {kernel}")
        if kernel > width or kernel > height:
            raise ValueError(f"kernel {kernel} exceeds image {width}x{height}")
        self.width, self.height, self.channels, self.kernel = width, height, channels, kernel
        self.pad = kernel // 2
        self._lines: list[deque] = [deque() for _ in range(kernel - 1)]
        self._window: deque = deque(maxlen=kernel)  # columns, newest right
        self._pushes = 0
        self.last_column_taps: tuple | None = None

    def push(self, px: np.ndarray) -> np.ndarray | None:
        """Feed one pixel (or a zero flush pixel); maybe emit a patch."""
        zero = np.zeros(self.channels, dtype=np.int64)
        taps = [np.asarray(px, dtype=np.int64)]
        cur = taps[0]
        for line in self._lines:
            line.append(cur)
            cur = line.popleft() if len(line) > self.width else zero
            taps.append(cur)
        self.last_column_taps = tuple(taps)
        self._window.append(tuple(reversed(taps)))  # column, top row first
        n = self._pushes
        self._pushes += 1
        c = n - (self.pad * self.width + self.pad)
        if c < 0 or c >= self.width * self.height:
            return None
        i, j = divmod(c, self.width)
        patch = np.zeros((self.kernel, self.kernel, self.channels), dtype=np.int64)
        for q in range(self.kernel):
            for r in range(self.kernel):
                src_i = i + q - self.pad
                src_j = j + r - self.pad
                if 0 <= src_i < self.height and 0 <= src_j < self.width:
                    patch[q, r] = self._window[r][q]
        return patch.reshape(-1)

    def total_pushes(self) -> int:
        """Pushes needed to emit every patch: the image plus the warm-up."""
        return self.width * self.height + self.pad * self.width + self.pad


def window_stream(img: ImageStream, kernel: int) -> Iterator[np.ndarray]:
    """All H*W zero-padded patches of the image in raster order."""
    buf = WindowBuffer(img.width, img.height, img.channels, kernel)
    zero = np.zeros(img.channels, dtype=np.int64)
    pixels = img.pixels()
    for n in range(buf.total_pushes()):
        px = next(pixels) if n < img.width * img.height else zero
        patch = buf.push(px)
        if patch is not None:
            yield patch


def patch_matrix(img: ImageStream, kernel: int) -> np.ndarray:
    """(H*W, kernel*kernel*channels) matrix of all patches."""
    return np.stack(list(window_stream(img, kernel)))


def max_pool(img: ImageStream, k: int, n: int) -> ImageStream:
    """Per-channel max over k x k windows anchored at stride n."""
    if k < 1 or n < 1:
        raise ValueError("pool kernel and stride must be >= 1")
    if img.width % n or img.height % n:
        raise ValueError(f"image {img.width}x{img.height} not divisible by stride {n}")
    oh, ow = img.height // n, img.width // n
    out = np.zeros((oh, ow, img.channels), dtype=np.int64)
    for i in range(oh):
        for j in range(ow):
            win = img.data[i * n : min(i * n + k, img.height), j * n : min(j * n + k, img.width)]
            out[i, j] = win.reshape(-1, img.channels).max(axis=0)
    return ImageStream(out, img.frac_bits)


def quantize_params(
    params: ScaleShiftParams,
    scale_fmt: FixedPointFormat = SCALE_FORMAT,
    act_fmt: FixedPointFormat = ACT_FORMAT,
    counter: SaturationCounter | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Raw scale constants in the scale format, shifts pre-aligned to the
    activation format."""
    c = np.array([quantize(v, scale_fmt, counter).raw for v in params.c], dtype=np.int64)
    b = np.array([quantize(v, act_fmt, counter).raw for v in params.b], dtype=np.int64)
    return c, b


def scale_shift(
    x,
    params: ScaleShiftParams,
    act: str = "None",
    scale_fmt: FixedPointFormat = SCALE_FORMAT,
    act_fmt: FixedPointFormat = ACT_FORMAT,
    counter: SaturationCounter | None = None,
) -> np.ndarray:
    """Fused per-channel y = act(sat(round((c*x) >> scale_frac) + b)).

    ``x`` is a raw integer channel vector (or an array whose last axis is
    channels); it need not fit the activation format on entry, the result
    always does.
    """
    x = np.asarray(x, dtype=np.int64)
    c_raw, b_raw = quantize_params(params, scale_fmt, act_fmt)
    if x.shape[-1] != len(params.c):
        raise ValueError(f"expected {len(params.c)} channels, got {x.shape[-1]}")
    prod = x * c_raw
    half = 1 << (scale_fmt.frac_bits - 1)
    shifted = np.sign(prod) * ((np.abs(prod) + half) >> scale_fmt.frac_bits)
    t = shifted + b_raw
    y = np.clip(t, act_fmt.raw_min, act_fmt.raw_max)
    if counter is not None:
        counter.hit(int((t != y).sum()))
    if act == "ReLU":
        y = np.maximum(y, 0)
    return y


def mux_layer(bursts, m: int) -> list[list[int]]:
    """Re-emit bursts of D values every M cycles as D/M values per cycle.

    Order is preserved exactly: concatenating the output chunks reproduces
    the concatenated input bursts.
    """
    if m < 1:
        raise ValueError(f"mux interval must be >= 1, got {m}")
    out: list[list[int]] = []
    for burst in bursts:
        vals = list(burst)
        if len(vals) % m:
            raise ValueError(f"mux interval {m} does not divide burst size {len(vals)}")
        lane = len(vals) // m
        for k in range(m):
            out.append(vals[k * lane : (k + 1) * lane])
    return out


@dataclass(frozen=True)
class DenseMemoryReport:
    """Weight-memory model of a dense layer at a given input lane count."""

    storage_bits: int
    lanes: int
    bandwidth_bits_per_cycle: int
    bram_equivalents: int


def dense_memory(t: TernaryMatrix, lanes: int, bram_kbits: int = 64) -> DenseMemoryReport:
    storage = t.rows * t.cols * 2
    bandwidth = lanes * t.rows * 2
    brams = -(-storage // (bram_kbits * 1024))
    return DenseMemoryReport(storage, lanes, bandwidth, brams)


def dense(
    x,
    t: TernaryMatrix,
    params: ScaleShiftParams,
    act: str = "None",
    scale_fmt: FixedPointFormat = SCALE_FORMAT,
    act_fmt: FixedPointFormat = ACT_FORMAT,
    counter: SaturationCounter | None = None,
) -> np.ndarray:
    """Multiply-accumulate dense layer: y = scale_shift(t @ x).

    Ternary weights add, skip or subtract each input; accumulators are wide
    enough to be overflow-free.
    """
    x = np.asarray(x, dtype=np.int64)
    if x.shape[0] != t.cols:
        raise ValueError(f"dense expects {t.cols} inputs, got {x.shape[0]}")
    acc = t.matvec(x)
    return scale_shift(acc, params, act, scale_fmt, act_fmt, counter)


# ---------------------------------------------------------------------------
# Whole-network simulation


@dataclass(frozen=True)
class SimulationResult:
    scores: tuple[int, ...]
    argmax: int
    saturations: int


def _conv_image(img: ImageStream, t: TernaryMatrix, layer: LayerSpec) -> np.ndarray:
    patches = patch_matrix(img, layer.kernel)
    expect = layer.kernel * layer.kernel * layer.in_channels
    if t.cols != expect:
        raise ValueError(f"conv weights have {t.cols} columns, layer needs {expect}")
    if t.rows != layer.filters:
        raise ValueError(f"conv weights have {t.rows} rows, layer has {layer.filters} filters")
    out = patches @ t.entries.astype(np.int64).T
    return out.reshape(img.height, img.width, layer.filters)


def simulate(
    net: NetworkSpec,
    weights: dict[int, TernaryMatrix | ScaleShiftParams],
    img: ImageStream,
    counter: SaturationCounter | None = None,
) -> SimulationResult:
    """Run the block sequence functionally and bit-exactly.

    ``weights`` maps layer index to a TernaryMatrix (Conv/Dense) or
    ScaleShiftParams (ScaleShift). Classification is the argmax of the final
    output, lowest index on ties.
    """
    net.validate()
    if counter is None:
        counter = SaturationCounter()
    if (img.width, img.height, img.channels) != (net.input_width, net.input_width, net.input_channels):
        raise ValueError(
            f"image {img.width}x{img.height}x{img.channels} does not match network input "
            f"{net.input_width}x{net.input_width}x{net.input_channels}"
        )
    cur: object = img  # ImageStream on the image side, 1-D np vector after Mux
    for idx, layer in enumerate(net.layers):
        nxt = net.layers[idx + 1] if idx + 1 < len(net.layers) else None
        if layer.kind in ("Buffer", "Fifo"):
            continue
        if layer.kind == "Conv":
            assert isinstance(cur, ImageStream)
            t = weights.get(idx)
            if not isinstance(t, TernaryMatrix):
                raise ValueError(f"layer {idx}: Conv needs a TernaryMatrix weight")
            data = _conv_image(cur, t, layer)
            if not (isinstance(nxt, LayerSpec) and nxt.kind == "ScaleShift"):
                lo, hi = net.act_format.raw_min, net.act_format.raw_max
                clipped = np.clip(data, lo, hi)
                counter.hit(int((clipped != data).sum()))
                data = clipped
            cur = ImageStream(data, net.act_format.frac_bits)
        elif layer.kind == "ScaleShift":
            p = weights.get(idx)
            if not isinstance(p, ScaleShiftParams):
                raise ValueError(f"layer {idx}: ScaleShift needs ScaleShiftParams")
            if isinstance(cur, ImageStream):
                data = scale_shift(
                    cur.data, p, layer.activation, net.scale_format, net.act_format, counter
                )
                cur = ImageStream(data, net.act_format.frac_bits)
            else:
                cur = scale_shift(
                    cur, p, layer.activation, net.scale_format, net.act_format, counter
                )
        elif layer.kind == "MaxPool":
            assert isinstance(cur, ImageStream)
            cur = max_pool(cur, layer.kernel, layer.stride)
        elif layer.kind == "Mux":
            if isinstance(cur, ImageStream):
                cur = cur.flatten()
            # vector side: ordering is already steady, nothing to reorder
        elif layer.kind == "Dense":
            t = weights.get(idx)
            if not isinstance(t, TernaryMatrix):
                raise ValueError(f"layer {idx}: Dense needs a TernaryMatrix weight")
            vec = cur.flatten() if isinstance(cur, ImageStream) else np.asarray(cur)
            if vec.shape[0] != t.cols:
                raise ValueError(
                    f"layer {idx}: dense weights have {t.cols} columns, input has {vec.shape[0]}"
                )
            data = t.matvec(vec)
            if not (isinstance(nxt, LayerSpec) and nxt.kind == "ScaleShift"):
                lo, hi = net.act_format.raw_min, net.act_format.raw_max
                clipped = np.clip(data, lo, hi)
                counter.hit(int((clipped != data).sum()))
                data = clipped
            cur = data
        else:  # pragma: no cover
            raise ValueError(f"layer {idx}: unhandled kind {layer.kind}")
    if isinstance(cur, ImageStream):
        scores = [int(v) for v in cur.flatten()]
    else:
        scores = [int(v) for v in np.asarray(cur).reshape(-1)]
    best = min(range(len(scores)), key=lambda k: (-scores[k], k))
    return SimulationResult(tuple(scores), best, counter.count)


# ---------------------------------------------------------------------------
# Throughput, latency and op-count models


@dataclass(frozen=True)
class BlockRate:
    """Output shape of one block: ``values`` values every ``cycles`` cycles."""

    index: int
    kind: str
    out_width: int
    out_channels: int
    values: int
    cycles: int

    @property
    def rate(self) -> Fraction:
        return Fraction(self.values, self.cycles)


@dataclass(frozen=True)
class ThroughputReport:
    blocks: tuple[BlockRate, ...]
    fps_exact: Fraction
    frames_per_sec: int
    latency_cycles: int
    fifo_high_water: dict[int, int]


def throughput_model(net: NetworkSpec) -> ThroughputReport:
    """Per-block rate cascade, frames/sec and a labeled latency estimate.

    Frames/sec is exactly clock / W^2 for a single-pixel-per-cycle input.
    The latency estimate sums per-block warm-ups and pipeline depths; it is
    an analytic estimate, not a measured figure.
    """
    net.validate()
    width = net.input_width
    chans = net.input_channels
    interval = 1  # cycles between pixels
    image_period = width * width  # cycles per frame at p = 1
    blocks: list[BlockRate] = []
    latency = 0
    fifo_hw: dict[int, int] = {}
    vector_side = False
    vec_values = 0
    vec_cycles = 1
    for idx, layer in enumerate(net.layers):
        kind = layer.kind
        if not vector_side:
            if kind == "Buffer":
                pad = layer.kernel // 2
                latency += (pad * width + pad) * interval
                out = (width, chans, chans, interval)
            elif kind == "Conv":
                chans = layer.filters
                digits = min(interval, net.act_format.total_bits)
                depth = _tree_depth_estimate(layer)
                latency += depth + digits - 1
                out = (width, chans, chans, interval)
            elif kind == "ScaleShift":
                latency += 2
                out = (width, chans, chans, interval)
            elif kind == "MaxPool":
                width //= layer.stride
                interval *= layer.stride * layer.stride
                latency += max(1, (layer.kernel * layer.kernel - 1).bit_length())
                out = (width, chans, chans, interval)
            elif kind == "Fifo":
                latency += 1
                fifo_hw[idx] = width * chans
                out = (width, chans, chans, interval)
            elif kind == "Mux":
                vec_values = width * width * chans
                if chans % interval == 0:
                    out = (1, vec_values, chans // interval, 1)
                elif interval % chans == 0:
                    out = (1, vec_values, 1, interval // chans)
                else:
                    out = (1, vec_values, chans, interval)
                latency += interval
                vector_side = True
                vec_cycles = image_period
            elif kind == "Dense":
                vec_values = layer.filters
                vector_side = True
                vec_cycles = image_period
                latency += layer.in_channels + 1
                out = (1, layer.filters, layer.filters, image_period)
            else:  # pragma: no cover
                raise ValueError(kind)
        else:
            if kind == "Dense":
                vec_values = layer.filters
                lanes = blocks[-1].values if blocks[-1].cycles == 1 else 1
                latency += -(-layer.in_channels // lanes) + 1
                out = (1, layer.filters, layer.filters, vec_cycles)
            elif kind == "ScaleShift":
                latency += 2
                out = (1, vec_values, blocks[-1].values, blocks[-1].cycles)
            elif kind == "Mux":
                d, m = blocks[-1].values, blocks[-1].cycles
                if d % m == 0:
                    out = (1, vec_values, d // m, 1)
                elif m % d == 0:
                    out = (1, vec_values, 1, m // d)
                else:
                    out = (1, vec_values, d, m)
                latency += min(m, image_period)
            elif kind == "Fifo":
                latency += 1
                fifo_hw[idx] = vec_values
                out = (1, vec_values, blocks[-1].values, blocks[-1].cycles)
            elif kind == "Buffer":
                latency += 1
                out = (1, vec_values, blocks[-1].values, blocks[-1].cycles)
            else:
                raise ValueError(f"layer {idx}: {kind} after the flattening Mux")
        w, c, values, cycles = out
        blocks.append(BlockRate(idx, kind, w, c, values, cycles))
    fps = Fraction(int(net.clock_hz), net.input_width**2)
    return ThroughputReport(tuple(blocks), fps, int(fps), latency, fifo_hw)


def _tree_depth_estimate(layer: LayerSpec) -> int:
    terms = layer.kernel * layer.kernel * layer.in_channels
    depth = 0
    while terms > 1:
        terms = -(-terms // 2)
        depth += 1
    return depth


@dataclass(frozen=True)
class OpCountRow:
    name: str
    formula: str
    dense_macs: int
    sparse_macs: int | None
    cse_ops: int | None


@dataclass(frozen=True)
class OpCountTable:
    rows: tuple[OpCountRow, ...]
    total_dense: int
    total_sparse: int | None
    total_cse: int | None


def op_count(
    net: NetworkSpec,
    weights: dict[int, TernaryMatrix] | None = None,
    cse_costs: dict[int, int] | None = None,
) -> OpCountTable:
    """Per-layer multiply-accumulate accounting.

    The dense column is W_out^2 * N^2 * D * F for convolutions and in*out for
    dense layers, computable from the network description alone. With weight
    matrices the sparsity column scales each convolution by its nonzero
    fraction; with per-layer post-extraction adder costs (``cse_costs`` maps
    layer index to Adds+Regs) the final column charges that many adds per
    output pixel. Dense-layer entries count one MAC as two ops in the final
    column and do not exploit sparsity.
    """
    rows: list[OpCountRow] = []
    conv_no = 0
    dense_no = 0
    for idx, layer in enumerate(net.layers):
        if layer.kind == "Conv":
            conv_no += 1
            w = layer.in_width
            n, d, f = layer.kernel, layer.in_channels, layer.filters
            macs = w * w * n * n * d * f
            formula = f"{w}*{w}*{n}*{n}*{d}*{f}"
            sparse = None
            cse = None
            if weights is not None and idx in weights:
                t = weights[idx]
                sparse = w * w * int(np.count_nonzero(t.entries))
            if cse_costs is not None and idx in cse_costs:
                cse = w * w * cse_costs[idx]
            rows.append(OpCountRow(f"Conv{conv_no}", formula, macs, sparse, cse))
        elif layer.kind == "Dense":
            dense_no += 1
            macs = layer.in_channels * layer.filters
            formula = f"{layer.in_channels}*{layer.filters}"
            name = f"Dense{dense_no}"
            rows.append(OpCountRow(name, formula, macs, macs, 2 * macs))
    total_dense = sum(r.dense_macs for r in rows)
    have_sparse = all(r.sparse_macs is not None for r in rows)
    have_cse = all(r.cse_ops is not None for r in rows)
    return OpCountTable(
        tuple(rows),
        total_dense,
        sum(r.sparse_macs for r in rows) if have_sparse else None,
        sum(r.cse_ops for r in rows) if have_cse else None,
    )


# ---------------------------------------------------------------------------
# Image file format


def format_img(img: ImageStream, binary: bool = False) -> bytes:
    head = f"img {img.width} {img.height} {img.channels} {img.frac_bits}\n"
    flat = img.data.reshape(-1)
    if binary:
        lo, hi = -(1 << 15), (1 << 15) - 1
        if flat.min() < lo or flat.max() > hi:
            raise ImageFormatError("binary img payload requires 16-bit raw values")
        return head.encode("ascii") + struct.pack(f"<{flat.size}h", *[int(v) for v in flat])
    body = "\n".join(
        " ".join(str(int(v)) for v in img.data[i].reshape(-1)) for i in range(img.height)
    )
    return (head + body + "\n").encode("ascii")


def parse_img(blob: bytes) -> ImageStream:
    """Parse the img format: a header line, then either ASCII raw values or a
    raw 16-bit little-endian raster of exactly W*H*D samples."""
    nl = blob.find(b"\n")
    if nl < 0:
        raise ImageFormatError("missing img header line")
    head = blob[:nl].decode("ascii", errors="replace").split()
    if len(head) != 5 or head[0] != "img":
        raise ImageFormatError("header must be 'img <W> <H> <D> <frac_bits>'")
    try:
        w, h, d, frac = (int(t) for t in head[1:])
    except ValueError as e:
        raise ImageFormatError(f"bad header field: {e}") from e
    if w < 1 or h < 1 or d < 1 or frac < 0:
        raise ImageFormatError("header dimensions must be positive")
    body = blob[nl + 1 :]
    count = w * h * d
    if len(body) == 2 * count and not _looks_textual(body, count):
        vals = struct.unpack(f"<{count}h", body)
        data = np.array(vals, dtype=np.int64).reshape(h, w, d)
        return ImageStream(data, frac)
    try:
        tokens = body.decode("ascii").split()
        vals = [int(t) for t in tokens]
    except (UnicodeDecodeError, ValueError) as e:
        raise ImageFormatError(f"image body is neither text samples nor a 16-bit raster: {e}") from e
    if len(vals) != count:
        raise ImageFormatError(f"expected {count} samples, found {len(vals)}")
    return ImageStream(np.array(vals, dtype=np.int64).reshape(h, w, d), frac)


def _looks_textual(body: bytes, count: int) -> bool:
    # A pure ASCII digit/whitespace payload of exactly 2*count bytes is read
    # as text; anything else of that length is the binary raster.
    try:
        text = body.decode("ascii")
    except UnicodeDecodeError:
        return False
    if not all(ch.isdigit() or ch.isspace() or ch == "-" for ch in text):
        return False
    return len(text.split()) == count


def load_img(path: str) -> ImageStream:
    with open(path, "rb") as f:
        return parse_img(f.read())


def dump_img(img: ImageStream, path: str, binary: bool = False) -> None:
    with open(path, "wb") as f:
        f.write(format_img(img, binary))
