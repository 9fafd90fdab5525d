"""Structural netlist text format (.ngl) with a round-trip parser.

Grammar, one record per line:

    netlist   = header newline { nodeline newline }
    header    = "ngl" "inputs" INT "outputs" INT "nodes" INT
                "digits" INT "total" INT "aligned" ("0" | "1") ["name" WORD]
    nodeline  = "node" INT KIND INT INT { SIGNEDREF }
    KIND      = "in" | "add" | "delay" | "out"
    SIGNEDREF = ("+" | "-") INT

The node fields are id, kind, stage and digit width, followed by the signed
operand list. Emission is byte-deterministic: nodes appear in id order, which
is topological by construction.
"""

from __future__ import annotations

from .treegen import IN, KINDS, OUT, AdderGraph, Node, validate_graph


class NetlistParseError(ValueError):
    """A netlist file violates the .ngl grammar or references dangling nodes."""


def emit(g: AdderGraph, name: str = "") -> str:
    """Serialize a validated graph; rejects graphs that fail validation."""
    validate_graph(g)
    label = name or g.name
    head = (
        f"ngl inputs {len(g.inputs)} outputs {len(g.outputs)} nodes {len(g.nodes)} "
        f"digits {g.digits} total {g.total_bits} aligned {1 if g.outputs_aligned else 0}"
    )
    if label:
        head += f" name {label}"
    lines = [head]
    width = g.digit_width
    for n in g.nodes:
        ops = "".join(f" {'+' if s > 0 else '-'}{op}" for op, s in n.operands)
        lines.append(f"node {n.id} {n.kind} {n.stage} {width}{ops}")
    return "\n".join(lines) + "\n"


def _fail(lineno: int, msg: str) -> NetlistParseError:
    return NetlistParseError(f"line {lineno}: {msg}")


def _int(tok: str, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise _fail(lineno, f"expected integer {what}, got {tok!r}") from None


def parse(text: str) -> AdderGraph:
    """Parse an emitted netlist back into a behaviorally identical graph."""
    lines = [l for l in text.splitlines()]
    if not lines or not lines[0].split():
        raise NetlistParseError("line 1: missing ngl header")
    head = lines[0].split()
    if head[0] != "ngl":
        raise _fail(1, f"expected 'ngl' magic, got {head[0]!r}")
    fields: dict[str, str] = {}
    toks = head[1:]
    if len(toks) % 2:
        raise _fail(1, "header fields must be key/value pairs")
    for k, v in zip(toks[::2], toks[1::2]):
        if k in fields:
            raise _fail(1, f"duplicate header field {k!r}")
        fields[k] = v
    required = ("inputs", "outputs", "nodes", "digits", "total", "aligned")
    for k in required:
        if k not in fields:
            raise _fail(1, f"missing header field {k!r}")
    unknown = set(fields) - set(required) - {"name"}
    if unknown:
        raise _fail(1, f"unknown header fields {sorted(unknown)}")
    n_in = _int(fields["inputs"], 1, "inputs")
    n_out = _int(fields["outputs"], 1, "outputs")
    n_nodes = _int(fields["nodes"], 1, "nodes")
    digits = _int(fields["digits"], 1, "digits")
    total = _int(fields["total"], 1, "total")
    if fields["aligned"] not in ("0", "1"):
        raise _fail(1, f"aligned must be 0 or 1, got {fields['aligned']!r}")
    aligned = fields["aligned"] == "1"
    if digits < 1 or total < 1 or total % digits:
        raise _fail(1, f"illegal digit schedule {digits}/{total}")
    width = total // digits

    nodes: list[Node] = []
    inputs: list[int] = []
    outputs: list[int] = []
    body = [(i + 2, l) for i, l in enumerate(lines[1:]) if l.strip()]
    if len(body) != n_nodes:
        raise NetlistParseError(f"header declares {n_nodes} nodes, found {len(body)}")
    for lineno, line in body:
        parts = line.split()
        if parts[0] != "node" or len(parts) < 5:
            raise _fail(lineno, "expected 'node <id> <kind> <stage> <width> ...'")
        nid = _int(parts[1], lineno, "node id")
        if nid != len(nodes):
            raise _fail(lineno, f"node ids must be consecutive, expected {len(nodes)} got {nid}")
        kind = parts[2]
        if kind not in KINDS:
            raise _fail(lineno, f"unknown node kind {kind!r}")
        stage = _int(parts[3], lineno, "stage")
        if stage < 0:
            raise _fail(lineno, f"negative stage {stage}")
        w = _int(parts[4], lineno, "digit width")
        if w != width:
            raise _fail(lineno, f"digit width {w} does not match schedule width {width}")
        operands = []
        for col, tok in enumerate(parts[5:], start=6):
            if not tok or tok[0] not in "+-" or not tok[1:].isdigit():
                raise _fail(lineno, f"field {col}: bad signed operand {tok!r}")
            ref = int(tok[1:])
            if ref >= nid:
                raise _fail(lineno, f"field {col}: dangling reference to node {ref}")
            operands.append((ref, 1 if tok[0] == "+" else -1))
        nodes.append(Node(nid, kind, stage, tuple(operands)))
        if kind == IN:
            inputs.append(nid)
        elif kind == OUT:
            outputs.append(nid)
    if len(inputs) != n_in:
        raise NetlistParseError(f"header declares {n_in} inputs, found {len(inputs)}")
    if len(outputs) != n_out:
        raise NetlistParseError(f"header declares {n_out} outputs, found {len(outputs)}")
    g = AdderGraph(
        tuple(nodes), tuple(inputs), tuple(outputs),
        digits=digits, total_bits=total, outputs_aligned=aligned,
        name=fields.get("name", ""),
    )
    validate_graph(g)
    return g


def load(path: str) -> AdderGraph:
    with open(path, "r", encoding="ascii") as f:
        return parse(f.read())


def dump(g: AdderGraph, path: str, name: str = "") -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(emit(g, name))
