"""Reference forward executor over float64 numpy arrays.

Semantics of the elementary ops, where not obvious:

* Softmax normalizes along the last (W) axis.
* MaxPool2d is kernel 3, stride 1; border windows take the max over
  in-bounds neighbors only, so the shape is preserved without injecting
  padding values.
* Mask zeroes every position with |h - w| > 5 (square spatial maps only).
* Matmul1 produces out[(h1,h2),(w1,w2)] = sum_c x[c,h1,w1] y[c,h2,w2] / sqrt(C)
  with the H^2 axis indexing (h1,h2) and the W^2 axis indexing (w1,w2);
  Matmul2 contracts out[c,h,w] = sum_{h~,w~} a[(h,h~),(w,w~)] y[c,h~,w~].
* Dropout is the identity in deterministic mode; stochastic mode drops
  with p = 0.5 and scales survivors by 2.
* BatchNorm uses current-batch statistics over (N, H, W); nothing is
  trained so there are no running averages.  LayerNorm normalizes over
  channels at each position.
* UpSample broadcasts (C,1,1) back to the spatial size recorded from its
  coupled GlobalAvg's input during the same execution.

Parameter initialization: conv weights ~ N(0, 2/fan_in), biases zero,
norm scales one, shifts zero, relative-position tables zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf, expit

from .errors import ShapeMismatch
from .graph import BlockGraph, INPUT, OUTPUT, in_adjacency, infer_shapes, topo_order
from .network import ExecutablePlan
from .ops import OpKind, Shape, rel_pos_bias_table
from .rng import Rng

_BN_EPS = 1e-5
_LN_EPS = 1e-5


@dataclass
class EvalContext:
    mode: str = "deterministic"
    rng: Optional[Rng] = None
    batch: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "stochastic" and self.rng is None:
            raise ValueError("stochastic mode needs an rng")


@dataclass
class ParamStore:
    tensors: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)

    def scalar_count(self) -> int:
        return sum(int(a.size) for node in self.tensors.values() for a in node.values())


def _he_weight(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(shape, std=math.sqrt(2.0 / fan_in))


def init_params(block: BlockGraph, rng: Rng, entry_in_channels: Optional[int] = None) -> ParamStore:
    """Deterministic parameters for every parameterized node of the block.

    entry_in_channels overrides the input channel count of the block's
    first node when a stage projection has been fused into it.
    """
    shapes = infer_shapes(block)
    first = block.first_interior()
    store = ParamStore()
    for v in topo_order(block):
        op = block.ops[v]
        s = shapes[v].in_shapes[0] if shapes[v].in_shapes else None
        c_in = s.c if s else 0
        if v == first and entry_in_channels is not None:
            c_in = entry_in_channels
        node_rng = rng.child(v)
        p: dict[str, np.ndarray] = {}
        if op is OpKind.CONV1:
            p["weight"] = _he_weight(node_rng, (s.c, c_in, 1, 1), c_in)
            p["bias"] = np.zeros(s.c)
        elif op is OpKind.CONV3:
            p["weight"] = _he_weight(node_rng, (s.c, c_in, 3, 3), 9 * c_in)
            p["bias"] = np.zeros(s.c)
        elif op is OpKind.CONV_DEPTH3:
            p["weight"] = _he_weight(node_rng, (s.c, 3, 3), 9)
        elif op is OpKind.CONV_DEPTH5:
            p["weight"] = _he_weight(node_rng, (s.c, 5, 5), 25)
        elif op in (OpKind.BATCH_NORM, OpKind.LAYER_NORM):
            p["scale"] = np.ones(s.c)
            p["shift"] = np.zeros(s.c)
        elif op is OpKind.REL_POS_BIAS:
            p["table"] = np.zeros(rel_pos_bias_table(s.h, s.w))
        elif op is OpKind.CONV_CHUNK3:
            p["weight"] = _he_weight(node_rng, (3 * s.c, c_in, 1, 1), c_in)
            p["bias"] = np.zeros(3 * s.c)
        elif op in (OpKind.CONV_EXP4, OpKind.CONV_RED4):
            p["weight"] = _he_weight(node_rng, (4 * s.c, c_in, 1, 1), c_in)
            p["bias"] = np.zeros(4 * s.c)
        if p:
            store.tensors[v] = p
    return store


def conv2d(x, w, b=None, stride=1, padding=0):
    n, cin, h, win = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeMismatch("conv", f"C_in={cin_w}", f"C_in={cin}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hout = (h + 2 * padding - kh) // stride + 1
    wout = (win + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, hout, wout))
    for dy in range(kh):
        for dx in range(kw):
            xs = xp[:, :, dy:dy + stride * hout:stride, dx:dx + stride * wout:stride]
            out += np.einsum("oc,nchw->nohw", w[:, :, dy, dx], xs, optimize=True)
    if b is not None:
        out += b[None, :, None, None]
    return out


def depthwise_conv2d(x, w, padding):
    n, c, h, win = x.shape
    k = w.shape[-1]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros_like(x)
    for dy in range(k):
        for dx in range(k):
            out += xp[:, :, dy:dy + h, dx:dx + win] * w[None, :, dy, dx, None, None]
    return out


def maxpool2d(x, kernel=3, stride=1, padding=1):
    n, c, h, w = x.shape
    xp = np.pad(
        x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        constant_values=-np.inf,
    )
    hout = (h + 2 * padding - kernel) // stride + 1
    wout = (w + 2 * padding - kernel) // stride + 1
    out = np.full((n, c, hout, wout), -np.inf)
    for dy in range(kernel):
        for dx in range(kernel):
            np.maximum(out, xp[:, :, dy:dy + stride * hout:stride, dx:dx + stride * wout:stride], out=out)
    return out


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _softmax_last(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def _rel_pos_add(x, table):
    # The H^2 axis flattens (h1, h2) and the W^2 axis flattens (w1, w2);
    # the bias depends on the relative offsets (h1 - h2, w1 - w2).
    n, c, hh, ww = x.shape
    u, v = math.isqrt(hh), math.isqrt(ww)
    a = np.arange(hh)
    b = np.arange(ww)
    dh = a // u - a % u
    dw = b // v - b % v
    bias = table[dh[:, None] + (u - 1), dw[None, :] + (v - 1)]
    return x + bias[None, None, :, :]


def matmul1(x, y):
    c = x.shape[1]
    out = np.einsum("ncab,ncde->nadbe", x, y, optimize=True) / math.sqrt(c)
    n, h, _, w, _ = out.shape
    return out.reshape(n, 1, h * h, w * w)


def matmul2(a, y):
    n, c, h, w = y.shape
    av = a.reshape(n, h, h, w, w)
    return np.einsum("nabcd,nebd->neac", av, y, optimize=True)


def _exec_node(op, node, ins, params, ctx):
    x = ins[0]
    if op is OpKind.SOFTMAX:
        return [_softmax_last(x)]
    if op is OpKind.DROPOUT:
        if ctx.mode == "deterministic":
            return [x]
        keep = (ctx.rng.uniform01(x.size).reshape(x.shape) >= 0.5)
        return [x * keep * 2.0]
    if op is OpKind.MAXPOOL:
        return [maxpool2d(x)]
    if op is OpKind.MASK:
        h = x.shape[2]
        hh, ww = np.ogrid[:h, :h]
        return [x * (np.abs(hh - ww) <= 5)[None, None, :, :]]
    if op is OpKind.SIGMOID:
        return [expit(x)]
    if op is OpKind.GELU:
        return [gelu(x)]
    if op in (OpKind.CONV1, OpKind.CONV3):
        pad = 1 if op is OpKind.CONV3 else 0
        return [conv2d(x, params["weight"], params["bias"], padding=pad)]
    if op is OpKind.CONV_DEPTH3:
        return [depthwise_conv2d(x, params["weight"], padding=1)]
    if op is OpKind.CONV_DEPTH5:
        return [depthwise_conv2d(x, params["weight"], padding=2)]
    if op is OpKind.BATCH_NORM:
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        var = x.var(axis=(0, 2, 3), keepdims=True)
        xn = (x - mu) / np.sqrt(var + _BN_EPS)
        return [xn * params["scale"][None, :, None, None] + params["shift"][None, :, None, None]]
    if op is OpKind.LAYER_NORM:
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        xn = (x - mu) / np.sqrt(var + _LN_EPS)
        return [xn * params["scale"][None, :, None, None] + params["shift"][None, :, None, None]]
    if op is OpKind.REL_POS_BIAS:
        return [_rel_pos_add(x, params["table"])]
    if op is OpKind.CHUNK2:
        c = x.shape[1] // 2
        return [x[:, :c], x[:, c:]]
    if op is OpKind.CHUNK3:
        c = x.shape[1] // 3
        return [x[:, :c], x[:, c:2 * c], x[:, 2 * c:]]
    if op is OpKind.COPY:
        return [x, x.copy()]
    if op in (OpKind.CONCAT2, OpKind.CONCAT3):
        return [np.concatenate(ins, axis=1)]
    if op is OpKind.ADD:
        return [ins[0] + ins[1]]
    if op is OpKind.MULTIPLY:
        return [ins[0] * ins[1]]
    if op is OpKind.CONV_CHUNK3:
        y = conv2d(x, params["weight"], params["bias"])
        c = y.shape[1] // 3
        return [y[:, :c], y[:, c:2 * c], y[:, 2 * c:]]
    if op is OpKind.CONV_EXP4:
        return [conv2d(x, params["weight"], params["bias"])]
    if op is OpKind.CONV_RED4:
        y = conv2d(x, params["weight"], params["bias"])
        n, c4, h, w = y.shape
        return [y.reshape(n, c4 // 16, 16, h, w).mean(axis=2)]
    if op is OpKind.MATMUL1:
        return [matmul1(ins[0], ins[1])]
    if op is OpKind.MATMUL2:
        return [matmul2(ins[0], ins[1])]
    if op is OpKind.GLOBAL_AVG:
        return [x.mean(axis=(2, 3), keepdims=True)]
    raise AssertionError(op)


def forward(
    block: BlockGraph,
    params: ParamStore,
    x: np.ndarray,
    ctx: Optional[EvalContext] = None,
    entry_in_channels: Optional[int] = None,
) -> np.ndarray:
    """Run the block on a (N,C,H,W) or (C,H,W) array; returns same rank as given."""
    ctx = ctx or EvalContext()
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    want_c = entry_in_channels if entry_in_channels is not None else block.input_shape.c
    want = (want_c, block.input_shape.h, block.input_shape.w)
    if tuple(x.shape[1:]) != want:
        raise ShapeMismatch(INPUT, want, tuple(x.shape[1:]))

    produced: dict[tuple[int, int], np.ndarray] = {(INPUT, 0): x}
    gavg_spatial: dict[int, tuple[int, int]] = {}
    in_adj = in_adjacency(block)
    for v in topo_order(block):
        op = block.ops[v]
        ins = [produced[(e.src, e.src_port)] for e in in_adj.get(v, ())]
        if op is OpKind.GLOBAL_AVG:
            gavg_spatial[v] = ins[0].shape[2:]
        if op is OpKind.UP_SAMPLE:
            partners = block.couples.get(v, ())
            gavg = next(p for p in partners if block.ops.get(p) is OpKind.GLOBAL_AVG)
            th, tw = gavg_spatial[gavg]
            outs = [np.broadcast_to(ins[0], (*ins[0].shape[:2], th, tw)).copy()]
        else:
            outs = _exec_node(op, v, ins, params.tensors.get(v, {}), ctx)
        for port, arr in enumerate(outs):
            produced[(v, port)] = arr
    out_edge = in_adj[OUTPUT][0]
    out = produced[(out_edge.src, out_edge.src_port)]
    return out[0] if squeeze else out


@dataclass
class NetworkParams:
    stem: tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
    projections: tuple[Optional[tuple[np.ndarray, np.ndarray]], ...]
    blocks: tuple[ParamStore, ...]
    head: tuple[np.ndarray, np.ndarray]

    def scalar_count(self) -> int:
        n = sum(w.size + b.size for w, b in self.stem)
        n += sum(w.size + b.size for p in self.projections if p is not None for w, b in [p])
        n += sum(s.scalar_count() for s in self.blocks)
        n += self.head[0].size + self.head[1].size
        return int(n)


def init_network_params(plan: ExecutablePlan, rng: Rng) -> NetworkParams:
    spec = plan.spec
    s = spec.stem_out_channels
    stem = (
        (_he_weight(rng.child(0, 0), (s, spec.in_channels, 3, 3), 9 * spec.in_channels), np.zeros(s)),
        (_he_weight(rng.child(0, 1), (s, s, 3, 3), 9 * s), np.zeros(s)),
    )
    projections = []
    for si, tp in enumerate(plan.transitions):
        if tp.fused:
            projections.append(None)
        else:
            w = _he_weight(rng.child(1, si), (tp.out_channels, tp.in_channels, 1, 1), tp.in_channels)
            projections.append((w, np.zeros(tp.out_channels)))
    blocks = tuple(
        init_params(b, rng.child(2, i), entry_in_channels=plan.fused_entry[i])
        for i, b in enumerate(spec.blocks)
    )
    c_last = spec.stages[-1].channels
    head_w = _he_weight(rng.child(3), (spec.num_classes, c_last), c_last)
    return NetworkParams(stem, tuple(projections), blocks, (head_w, np.zeros(spec.num_classes)))


def forward_network(
    plan: ExecutablePlan,
    params: NetworkParams,
    x: np.ndarray,
    ctx: Optional[EvalContext] = None,
) -> np.ndarray:
    """Stem -> stages (pool, projection, blocks) -> head; returns (N, num_classes)."""
    ctx = ctx or EvalContext()
    spec = plan.spec
    if x.ndim == 3:
        x = x[None]
    if tuple(x.shape[1:]) != (spec.in_channels, *spec.input_resolution):
        raise ShapeMismatch("stem", (spec.in_channels, *spec.input_resolution), tuple(x.shape[1:]))
    for w, b in params.stem:
        x = gelu(conv2d(x, w, b, stride=2, padding=1))
    pos = 0
    for si, st in enumerate(spec.stages):
        x = maxpool2d(x, kernel=3, stride=2, padding=1)
        proj = params.projections[si]
        if proj is not None:
            x = conv2d(x, proj[0], proj[1])
        for _ in range(st.n_blocks):
            x = forward(spec.blocks[pos], params.blocks[pos], x, ctx,
                        entry_in_channels=plan.fused_entry[pos])
            pos += 1
    x = x.mean(axis=(2, 3))
    return x @ params.head[0].T + params.head[1]
