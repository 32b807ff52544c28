"""Feasibility-preserving node addition and coupled elimination.

One search step: pick a random block and node, then either eliminate the
node (together with its coupled counterpart and everything on paths
between them) or insert a template after it.  Either way the result is
accepted only if the network stays inside the [min, max] Params/FLOPs
budget; after n_try failed attempts the step is a no-op.

Insertion templates are the minimal shape-restoring closures of their
head node, so a template can be spliced into any edge of matching shape:

* single shape-preserving ops (Softmax ... RelPosBias) insert alone;
* Chunk2/Chunk3 insert with Concat2/Concat3 wired straight across;
* Copy inserts with Add or Multiply (two parallel empty branches);
* ConvExp4 with ConvRed4; GlobalAvg with UpSample;
* ConvChunk3 with the attention merge Matmul1 -> Softmax -> Matmul2.

Dimension-changing or multi-output ops never enter a graph alone, which
is what keeps every intermediate network valid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .cost import (
    Budget,
    block_cost,
    head_cost,
    pool_cost,
    position_adjustment,
    stem_cost,
)
from .errors import InfeasibleEdit, StaleEdit
from .graph import (
    BlockGraph,
    Edge,
    INPUT,
    NodeShapes,
    OUTPUT,
    bfs_reachable,
    infer_shapes,
    predecessor_map,
    successor_map,
)
from .network import NetworkSpec
from .ops import COUPLED_ONLY, OP_INFO, Cost, OpKind, Shape, ZERO_COST, op_cost
from .rng import Rng

_SINGLE_TEMPLATES = (
    ("softmax", OpKind.SOFTMAX),
    ("dropout", OpKind.DROPOUT),
    ("maxpool", OpKind.MAXPOOL),
    ("mask", OpKind.MASK),
    ("sigmoid", OpKind.SIGMOID),
    ("gelu", OpKind.GELU),
    ("conv1", OpKind.CONV1),
    ("conv3", OpKind.CONV3),
    ("convdepth3", OpKind.CONV_DEPTH3),
    ("convdepth5", OpKind.CONV_DEPTH5),
    ("batchnorm", OpKind.BATCH_NORM),
    ("layernorm", OpKind.LAYER_NORM),
    ("relposbias", OpKind.REL_POS_BIAS),
)
_SINGLE_BY_NAME = dict(_SINGLE_TEMPLATES)

_COUPLED_TEMPLATES = (
    "chunk2_concat2",
    "chunk3_concat3",
    "copy_add",
    "copy_multiply",
    "convexp4_convred4",
    "globalavg_upsample",
    "attention",
)

TEMPLATE_NAMES = tuple(name for name, _ in _SINGLE_TEMPLATES) + _COUPLED_TEMPLATES


def template_size(name: str) -> int:
    if name in _SINGLE_BY_NAME:
        return 1
    return 4 if name == "attention" else 2


def template_head_op(name: str) -> OpKind:
    if name in _SINGLE_BY_NAME:
        return _SINGLE_BY_NAME[name]
    return {
        "chunk2_concat2": OpKind.CHUNK2,
        "chunk3_concat3": OpKind.CHUNK3,
        "copy_add": OpKind.COPY,
        "copy_multiply": OpKind.COPY,
        "convexp4_convred4": OpKind.CONV_EXP4,
        "globalavg_upsample": OpKind.GLOBAL_AVG,
        "attention": OpKind.CONV_CHUNK3,
    }[name]


def template_feasible(name: str, shape: Shape) -> bool:
    """Shape-level feasibility of splicing the template into an edge of `shape`."""
    import math

    c, h, w = shape
    if name == "mask":
        return h == w
    if name == "relposbias":
        return math.isqrt(h) ** 2 == h and math.isqrt(w) ** 2 == w
    if name == "chunk2_concat2":
        return c % 2 == 0
    if name == "chunk3_concat3":
        return c % 3 == 0
    return True


def _template_parts(name: str, ids: tuple[int, ...]):
    """ops, internal edges, entry (node, port), exit (node, port), couples."""
    if name in _SINGLE_BY_NAME:
        (a,) = ids
        return {a: _SINGLE_BY_NAME[name]}, [], (a, 0), (a, 0), {}
    if name in ("chunk2_concat2", "chunk3_concat3"):
        a, b = ids
        n = 2 if name == "chunk2_concat2" else 3
        ops = {a: OpKind.CHUNK2 if n == 2 else OpKind.CHUNK3,
               b: OpKind.CONCAT2 if n == 2 else OpKind.CONCAT3}
        edges = [Edge(a, p, b, p) for p in range(n)]
        return ops, edges, (a, 0), (b, 0), {a: (b,), b: (a,)}
    if name in ("copy_add", "copy_multiply"):
        a, b = ids
        ops = {a: OpKind.COPY, b: OpKind.ADD if name == "copy_add" else OpKind.MULTIPLY}
        edges = [Edge(a, 0, b, 0), Edge(a, 1, b, 1)]
        return ops, edges, (a, 0), (b, 0), {a: (b,), b: (a,)}
    if name == "convexp4_convred4":
        a, b = ids
        return ({a: OpKind.CONV_EXP4, b: OpKind.CONV_RED4}, [Edge(a, 0, b, 0)],
                (a, 0), (b, 0), {a: (b,), b: (a,)})
    if name == "globalavg_upsample":
        a, b = ids
        return ({a: OpKind.GLOBAL_AVG, b: OpKind.UP_SAMPLE}, [Edge(a, 0, b, 0)],
                (a, 0), (b, 0), {a: (b,), b: (a,)})
    if name == "attention":
        q, m1, sm, m2 = ids
        ops = {q: OpKind.CONV_CHUNK3, m1: OpKind.MATMUL1, sm: OpKind.SOFTMAX, m2: OpKind.MATMUL2}
        edges = [Edge(q, 0, m1, 0), Edge(q, 1, m1, 1), Edge(m1, 0, sm, 0),
                 Edge(sm, 0, m2, 0), Edge(q, 2, m2, 1)]
        couples = {q: (m1, m2), m1: (q, m2), m2: (q, m1)}
        return ops, edges, (q, 0), (m2, 0), couples
    raise ValueError(f"unknown template {name!r}")


@dataclass(frozen=True)
class Edit:
    kind: str                    # "add" | "eliminate"
    block_index: int
    anchor: int
    block_digest: str
    template: Optional[str] = None
    cut_edge: Optional[Edge] = None
    new_ids: tuple[int, ...] = ()
    doomed: tuple[int, ...] = ()
    bridge: Optional[Edge] = None

    def to_json(self) -> dict:
        d = {"kind": self.kind, "block": self.block_index, "anchor": self.anchor,
             "digest": self.block_digest}
        if self.kind == "add":
            d["template"] = self.template
            d["cut_edge"] = list(self.cut_edge)
            d["new_ids"] = list(self.new_ids)
        else:
            d["doomed"] = list(self.doomed)
            d["bridge"] = list(self.bridge)
        return d

    @staticmethod
    def from_json(d: dict) -> "Edit":
        if d["kind"] == "add":
            return Edit("add", d["block"], d["anchor"], d["digest"], template=d["template"],
                        cut_edge=Edge(*d["cut_edge"]), new_ids=tuple(d["new_ids"]))
        return Edit("eliminate", d["block"], d["anchor"], d["digest"],
                    doomed=tuple(d["doomed"]), bridge=Edge(*d["bridge"]))


def block_digest(block: BlockGraph) -> str:
    return block.digest


@dataclass(frozen=True)
class SearchStepConfig:
    budget: Budget
    rng: Rng
    p_eliminate: float = 0.3
    n_try: int = 10

    def __post_init__(self):
        if not 0.0 <= self.p_eliminate <= 1.0:
            raise ValueError("p_eliminate must be in [0, 1]")
        if self.n_try < 1:
            raise ValueError("n_try must be >= 1")


def minimal_coupled_subgraph(block: BlockGraph, v: int) -> frozenset[int]:
    """The doomed node set for eliminating v.

    A lone shape-preserving node dooms only itself.  A coupled node dooms
    its whole couple group plus every node on any directed path between
    group members, iterated to a fixpoint so nested couples stay intact.
    """
    if v not in block.ops:
        raise InfeasibleEdit(f"node {v} is not an interior node")
    if v not in block.couples:
        if not OP_INFO[block.ops[v]].preserves_shape:
            raise InfeasibleEdit(f"node {v} ({block.ops[v].value}) changes shape but has no couple")
        return frozenset({v})
    succs = successor_map(block)
    preds = predecessor_map(block)
    doomed = {v, *block.couples[v]}
    while True:
        grown = set(doomed)
        for u in doomed:
            grown |= set(block.couples.get(u, ()))
        for a in list(grown):
            desc_a = bfs_reachable(succs, a)
            for b in list(grown):
                if a != b and b in desc_a:
                    grown |= desc_a & bfs_reachable(preds, b)
        if grown == doomed:
            return frozenset(doomed)
        doomed = grown


def _excise_boundary(block: BlockGraph, doomed: frozenset[int]) -> tuple[Edge, Edge]:
    """Unique entry and exit edges of the doomed set; InfeasibleEdit otherwise."""
    entries = [e for e in block.edges if e.src not in doomed and e.dst in doomed]
    exits = [e for e in block.edges if e.src in doomed and e.dst not in doomed]
    if len(entries) != 1 or len(exits) != 1:
        raise InfeasibleEdit(
            f"doomed set has {len(entries)} entry / {len(exits)} exit edges (want 1/1)"
        )
    return entries[0], exits[0]


def apply_block_edit(block: BlockGraph, edit: Edit) -> BlockGraph:
    if edit.block_digest != block.digest:
        raise StaleEdit("edit was proposed against a different block state")
    if edit.kind == "add":
        if edit.cut_edge not in block.edges:
            raise InfeasibleEdit(f"cut edge {edit.cut_edge} not present")
        for i in edit.new_ids:
            if i in block.ops or i in (INPUT, OUTPUT):
                raise InfeasibleEdit(f"node id {i} already in use")
        ops, internal, entry, exit_, couples = _template_parts(edit.template, edit.new_ids)
        e = edit.cut_edge
        edges = [x for x in block.edges if x != e]
        edges.append(Edge(e.src, e.src_port, entry[0], entry[1]))
        edges.extend(internal)
        edges.append(Edge(exit_[0], exit_[1], e.dst, e.dst_port))
        new_ops = dict(block.ops)
        new_ops.update(ops)
        new_couples = dict(block.couples)
        new_couples.update(couples)
        next_id = max(block.next_id, max(edit.new_ids) + 1)
        return block.with_edges(edges, ops=new_ops, couples=new_couples, next_id=next_id)

    doomed = frozenset(edit.doomed)
    missing = doomed - set(block.ops)
    if missing:
        raise InfeasibleEdit(f"doomed nodes {sorted(missing)} not present")
    entry, exit_ = _excise_boundary(block, doomed)
    bridge = Edge(entry.src, entry.src_port, exit_.dst, exit_.dst_port)
    if edit.bridge != bridge:
        raise InfeasibleEdit(f"recorded bridge {edit.bridge} does not match {bridge}")
    edges = [e for e in block.edges if e.src not in doomed and e.dst not in doomed]
    edges.append(bridge)
    new_ops = {v: op for v, op in block.ops.items() if v not in doomed}
    new_couples = {}
    for v, partners in block.couples.items():
        if v in doomed:
            continue
        if any(p in doomed for p in partners):
            raise InfeasibleEdit(f"couple of surviving node {v} reaches into the doomed set")
        new_couples[v] = partners
    return block.with_edges(edges, ops=new_ops, couples=new_couples, next_id=block.next_id)


def apply(spec: NetworkSpec, edit: Edit) -> NetworkSpec:
    """New network with the edit applied; the original is untouched."""
    return spec.with_block(edit.block_index, apply_block_edit(spec.blocks[edit.block_index], edit))


def template_node_shapes(name: str, shape: Shape, ids: tuple[int, ...]) -> dict[int, NodeShapes]:
    """Inferred shapes of the template's nodes when spliced into an edge of `shape`."""
    scratch = BlockGraph.identity(shape)
    edit = Edit("add", 0, INPUT, scratch.digest, template=name,
                cut_edge=Edge(INPUT, 0, OUTPUT, 0), new_ids=ids)
    spliced = apply_block_edit(scratch, edit)
    shapes = infer_shapes(spliced)
    return {v: shapes[v] for v in ids}


def template_node_costs(name: str, shape: Shape) -> list[tuple[OpKind, Cost]]:
    """Cost of each template node when spliced into an edge of `shape`."""
    ids = tuple(range(2, 2 + template_size(name)))
    shapes = template_node_shapes(name, shape, ids)
    ops, _, _, _, _ = _template_parts(name, ids)
    return [(ops[v], op_cost(ops[v], shapes[v].in_shapes, shapes[v].out_shapes)) for v in ids]


def delta_cost(
    block: BlockGraph,
    edit: Edit,
    shapes: Optional[dict[int, NodeShapes]] = None,
) -> Cost:
    """Signed block-level cost change of the edit, without applying it."""
    if edit.kind == "add":
        if shapes is None:
            shapes = infer_shapes(block)
        e = edit.cut_edge
        shape = shapes[e.src].out_shapes[e.src_port]
        total = ZERO_COST
        for _, cost in template_node_costs(edit.template, shape):
            total = total + cost
        return total
    if shapes is None:
        shapes = infer_shapes(block)
    total = ZERO_COST
    for v in edit.doomed:
        ns = shapes[v]
        total = total + op_cost(block.ops[v], ns.in_shapes, ns.out_shapes)
    return -total


@dataclass
class CostState:
    """Incremental network cost bookkeeping for search drivers."""

    spec: NetworkSpec
    shapes: list[dict[int, NodeShapes]]
    block_totals: list[Cost]
    block_op_flops: list[dict[OpKind, int]]
    fixed_overhead: Cost            # stem + pools + head
    stage_terms: list[Cost]         # projection or fusion adjustment per stage

    @staticmethod
    def from_spec(spec: NetworkSpec) -> "CostState":
        shapes, totals, opflops = [], [], []
        for b in spec.blocks:
            s = infer_shapes(b)
            shapes.append(s)
            rep = block_cost(b, s)
            totals.append(rep.total)
            opflops.append(rep.per_op_flops())
        fixed = ZERO_COST
        for _, c in stem_cost(spec.in_channels, spec.stem_out_channels, spec.input_resolution):
            fixed = fixed + c
        c_prev = spec.stem_out_channels
        terms = []
        firsts = spec.stage_first_positions()
        for si, st in enumerate(spec.stages):
            fixed = fixed + pool_cost(c_prev, st.spatial)
            terms.append(CostState._stage_term(spec, si, c_prev))
            c_prev = st.channels
        for _, c in head_cost(spec.stages[-1].channels, spec.num_classes, spec.stages[-1].spatial):
            fixed = fixed + c
        return CostState(spec, shapes, totals, opflops, fixed, terms)

    @staticmethod
    def _stage_term(spec: NetworkSpec, si: int, c_prev: int) -> Cost:
        lead = spec.blocks[spec.stage_first_positions()[si]]
        first = lead.first_interior()
        first_op = None if first is None else lead.ops[first]
        st = spec.stages[si]
        return position_adjustment(first_op, c_prev, Shape(st.channels, *st.spatial))[0]

    def stage_prev_channels(self, si: int) -> int:
        return self.spec.stem_out_channels if si == 0 else self.spec.stages[si - 1].channels

    @property
    def total(self) -> Cost:
        t = self.fixed_overhead
        for c in self.stage_terms:
            t = t + c
        for c in self.block_totals:
            t = t + c
        return t

    def network_op_flops(self) -> dict[OpKind, int]:
        acc: dict[OpKind, int] = {}
        for per in self.block_op_flops:
            for op, f in per.items():
                acc[op] = acc.get(op, 0) + f
        return acc

    def after_edit(self, new_spec: NetworkSpec, edit: Edit) -> "CostState":
        """State for new_spec, patching only the edit's footprint.

        Sound because templates restore the cut edge's shape and bridged
        eliminations preserve every surviving node's shapes, so only the
        touched nodes' entries change.
        """
        bi = edit.block_index
        old_block = self.spec.blocks[bi]
        shapes = list(self.shapes)
        totals = list(self.block_totals)
        opflops = list(self.block_op_flops)
        block_shapes = dict(shapes[bi])
        per_op = dict(opflops[bi])
        delta = ZERO_COST
        if edit.kind == "add":
            e = edit.cut_edge
            cut_shape = block_shapes[e.src].out_shapes[e.src_port]
            new_shapes = template_node_shapes(edit.template, cut_shape, edit.new_ids)
            ops, _, _, _, _ = _template_parts(edit.template, edit.new_ids)
            block_shapes.update(new_shapes)
            for v in edit.new_ids:
                c = op_cost(ops[v], new_shapes[v].in_shapes, new_shapes[v].out_shapes)
                delta = delta + c
                per_op[ops[v]] = per_op.get(ops[v], 0) + c.flops
        else:
            for v in edit.doomed:
                ns = block_shapes.pop(v)
                op = old_block.ops[v]
                c = op_cost(op, ns.in_shapes, ns.out_shapes)
                delta = delta - c
                per_op[op] -= c.flops
        shapes[bi] = block_shapes
        totals[bi] = totals[bi] + delta
        opflops[bi] = per_op
        terms = list(self.stage_terms)
        si = new_spec.block_stage(bi)
        if new_spec.stage_first_positions()[si] == bi:
            terms[si] = CostState._stage_term(new_spec, si, self.stage_prev_channels(si))
        return CostState(new_spec, shapes, totals, opflops, self.fixed_overhead, terms)


def _fusion_delta(state: CostState, bi: int,
                  old_first: Optional[OpKind], new_first: Optional[OpKind]) -> Cost:
    spec = state.spec
    si = spec.block_stage(bi)
    if spec.stage_first_positions()[si] != bi or old_first == new_first:
        return ZERO_COST
    st = spec.stages[si]
    shape = Shape(st.channels, *st.spatial)
    c_prev = state.stage_prev_channels(si)
    old_term = position_adjustment(old_first, c_prev, shape)[0]
    new_term = position_adjustment(new_first, c_prev, shape)[0]
    return new_term - old_term


def network_delta(state: CostState, edit: Edit) -> Cost:
    """Signed network-total change of the edit (block delta + fusion effects)."""
    spec = state.spec
    block = spec.blocks[edit.block_index]
    shapes = state.shapes[edit.block_index]
    d = delta_cost(block, edit, shapes)
    first = block.first_interior()
    old_first = None if first is None else block.ops[first]
    if edit.kind == "add":
        if edit.cut_edge.src == INPUT:
            d = d + _fusion_delta(state, edit.block_index, old_first, template_head_op(edit.template))
    else:
        if first is not None and first in edit.doomed:
            new_first = None if edit.bridge.dst == OUTPUT else block.ops.get(edit.bridge.dst)
            d = d + _fusion_delta(state, edit.block_index, old_first, new_first)
    return d


def propose_step(
    spec: NetworkSpec,
    cfg: SearchStepConfig,
    state: Optional[CostState] = None,
) -> Optional[Edit]:
    """One search step; returns an accepted Edit or None after n_try failures."""
    if state is None:
        state = CostState.from_spec(spec)
    total = state.total
    rng = cfg.rng
    for _ in range(cfg.n_try):
        bi = rng.randbelow(len(spec.blocks))
        block = spec.blocks[bi]
        # Anchor order: virtual input first, then interior nodes in creation
        # order (dict order), deterministic for a given edit history.
        anchors = [INPUT, *block.ops]
        v = anchors[rng.randbelow(len(anchors))]
        u = rng.uniform()
        if u < cfg.p_eliminate:
            if v == INPUT:
                continue
            try:
                doomed = minimal_coupled_subgraph(block, v)
                entry, exit_ = _excise_boundary(block, doomed)
            except InfeasibleEdit:
                continue
            edit = Edit(
                "eliminate", bi, v, block.digest,
                doomed=tuple(sorted(doomed)),
                bridge=Edge(entry.src, entry.src_port, exit_.dst, exit_.dst_port),
            )
            d = network_delta(state, edit)
            after = total + d
            if after.params >= cfg.budget.params_min and after.flops >= cfg.budget.flops_min:
                return edit
        else:
            outs = block.out_edges(v)
            e = outs[rng.randbelow(len(outs))]
            shape = state.shapes[bi][e.src].out_shapes[e.src_port]
            feacible = [t for t in TEMPLATE_NAMES if template_feasible(t, shape)]
            name = feacible[rng.randbelow(len(feacible))]
            edit = Edit(
                "add", bi, v, block.digest, template=name, cut_edge=e,
                new_ids=tuple(range(block.next_id, block.next_id + template_size(name))),
            )
            d = network_delta(state, edit)
            after = total + d
            if after.params <= cfg.budget.params_max and after.flops <= cfg.budget.flops_max:
                return edit
    return None


def rule_violations(
    block: BlockGraph,
    shapes: Optional[dict[int, NodeShapes]] = None,
    nodes=None,
) -> list[str]:
    """Check the four insertion feasibility rules on a concrete block.

    (a) RelPosBias only where sqrt(H) and sqrt(W) are integral, (b) Chunk2/
    Chunk3 only where C is divisible by 2/3, (c) ConvRed4 only where C is
    divisible by 4, (d) dimension-changing / multi-output nodes are coupled.
    Pass `nodes` to restrict the scan (e.g. to freshly inserted ids).
    """
    import math

    if shapes is None:
        shapes = infer_shapes(block)
    bad = []
    items = block.ops.items() if nodes is None else [(v, block.ops[v]) for v in nodes]
    for v, op in items:
        s = shapes[v].in_shapes[0]
        if op is OpKind.REL_POS_BIAS and (math.isqrt(s.h) ** 2 != s.h or math.isqrt(s.w) ** 2 != s.w):
            bad.append(f"rule a: node {v} RelPosBias at {s}")
        if op is OpKind.CHUNK2 and s.c % 2:
            bad.append(f"rule b: node {v} Chunk2 at C={s.c}")
        if op is OpKind.CHUNK3 and s.c % 3:
            bad.append(f"rule b: node {v} Chunk3 at C={s.c}")
        if op is OpKind.CONV_RED4 and s.c % 4:
            bad.append(f"rule c: node {v} ConvRed4 at C={s.c}")
        if op in COUPLED_ONLY and v not in block.couples:
            bad.append(f"rule d: node {v} ({op.value}) uncoupled")
    return bad
