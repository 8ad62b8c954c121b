"""Command-line harness: ``opq <group> <action> [options]``.

Every report is JSON (or CSV for sweeps) carrying the package version and
the fully resolved configuration, so that two runs with the same flags and
seed produce byte-identical files.  Exit codes: 0 when the checked property
holds, 1 when it fails, 2 for usage or input errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import re
import subprocess
import sys
from dataclasses import dataclass
from functools import lru_cache, reduce
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__, blindproto, dqc1, mbqc, qmat, verifyproto
from .dqc1 import BrickworkSpec

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

SEED_ENV = "OPQ_SEED"


class UsageError(ValueError):
    """Bad flags or arguments; reported with exit code 2."""


class PatternFileError(ValueError):
    """A pattern file does not match the schema; names the offending field."""

    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.line = line
        where = f"{field} (line {line})" if line is not None else field
        super().__init__(f"{where}: {message}")


# -- pattern files ------------------------------------------------------------------

_TUPLE_LABEL = re.compile(r"-?\d+(?:,-?\d+)+")
_FIELDS = ("vertices", "edges", "input", "output", "angles", "flow", "levels")


def encode_vertex(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(int(x)) for x in v)
    return str(v)


def decode_vertex(label, field: str):
    if not isinstance(label, str):
        raise PatternFileError(field, f"vertex labels are strings, got {label!r}")
    if _TUPLE_LABEL.fullmatch(label):
        return tuple(int(x) for x in label.split(","))
    return label


def _int_angle(value, field: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        if isinstance(value, float) and float(value).is_integer():
            value = int(value)
        else:
            raise PatternFileError(field, f"angle must be an integer 0..7, got {value!r}")
    if not 0 <= int(value) <= 7:
        raise PatternFileError(field, f"angle {value} is outside 0..7")
    return int(value)


def pattern_document(pattern: mbqc.Pattern) -> dict:
    g = pattern.graph
    doc = {
        "vertices": [encode_vertex(v) for v in g.vertices],
        "edges": [[encode_vertex(a), encode_vertex(b)] for a, b in g.sorted_edges()],
        "input": [encode_vertex(v) for v in g.inputs],
        "output": [encode_vertex(v) for v in g.outputs],
        "angles": {encode_vertex(v): _int_angle(pattern.angles.get(v, 0), "angles") for v in g.non_outputs},
    }
    if pattern.flow is not None:
        doc["flow"] = {encode_vertex(x): encode_vertex(pattern.flow.f[x]) for x in g.non_outputs}
        doc["levels"] = {encode_vertex(v): int(pattern.flow.level[v]) for v in g.vertices}
    return doc


def dump_pattern_json(pattern: mbqc.Pattern) -> str:
    """Canonical text form; stable under load/dump."""
    return json.dumps(pattern_document(pattern), indent=2) + "\n"


@dataclass(frozen=True)
class PatternDoc:
    """Parsed file contents before any flow validation."""

    graph: mbqc.OpenGraph
    angles: dict
    flow: mbqc.Flow | None


def _list_of_vertices(doc: dict, key: str, known: set | None) -> list:
    raw = doc[key]
    if not isinstance(raw, list):
        raise PatternFileError(key, "expected a list")
    out = []
    for k, label in enumerate(raw):
        v = decode_vertex(label, f"{key}[{k}]")
        if known is not None and v not in known:
            raise PatternFileError(f"{key}[{k}]", f"unknown vertex {label!r}")
        out.append(v)
    return out


def parse_pattern_text(text: str) -> PatternDoc:
    """Schema check of a pattern file; flows are parsed but not validated."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PatternFileError("json", exc.msg, exc.lineno) from None
    if not isinstance(doc, dict):
        raise PatternFileError("json", "top level must be an object")
    for key in doc:
        if key not in _FIELDS:
            raise PatternFileError(key, "unknown field")
    for key in ("vertices", "edges", "input", "output", "angles"):
        if key not in doc:
            raise PatternFileError(key, "missing field")
    vertices = _list_of_vertices(doc, "vertices", None)
    if len(set(vertices)) != len(vertices):
        raise PatternFileError("vertices", "duplicate vertex")
    known = set(vertices)
    if not isinstance(doc["edges"], list):
        raise PatternFileError("edges", "expected a list of pairs")
    edges = []
    for k, pair in enumerate(doc["edges"]):
        if not isinstance(pair, list) or len(pair) != 2:
            raise PatternFileError(f"edges[{k}]", "expected a pair of vertex labels")
        a, b = (decode_vertex(x, f"edges[{k}]") for x in pair)
        for v, label in ((a, pair[0]), (b, pair[1])):
            if v not in known:
                raise PatternFileError(f"edges[{k}]", f"unknown vertex {label!r}")
        if a == b:
            raise PatternFileError(f"edges[{k}]", "self-loop")
        edges.append((a, b))
    inputs = _list_of_vertices(doc, "input", known)
    outputs = _list_of_vertices(doc, "output", known)
    try:
        graph = mbqc.OpenGraph(vertices, edges, inputs, outputs)
    except ValueError as exc:
        raise PatternFileError("vertices", str(exc)) from None

    if not isinstance(doc["angles"], dict):
        raise PatternFileError("angles", "expected an object vertex -> angle")
    measured = set(graph.non_outputs)
    angles = {}
    for label, value in doc["angles"].items():
        v = decode_vertex(label, f"angles.{label}")
        if v not in known:
            raise PatternFileError(f"angles.{label}", "unknown vertex")
        if v not in measured:
            raise PatternFileError(f"angles.{label}", "outputs are not measured")
        angles[v] = _int_angle(value, f"angles.{label}")
    missing = [encode_vertex(v) for v in graph.non_outputs if v not in angles]
    if missing:
        raise PatternFileError("angles", f"no angle for {', '.join(missing)}")

    flow = None
    if "levels" in doc and "flow" not in doc:
        raise PatternFileError("levels", "levels given without a flow")
    if "flow" in doc:
        if not isinstance(doc["flow"], dict):
            raise PatternFileError("flow", "expected an object vertex -> vertex")
        f = {}
        for label, target in doc["flow"].items():
            x = decode_vertex(label, f"flow.{label}")
            y = decode_vertex(target, f"flow.{label}")
            if x not in known or y not in known:
                raise PatternFileError(f"flow.{label}", "unknown vertex")
            f[x] = y
        f = {x: f[x] for x in graph.vertices if x in f}
        if "levels" in doc:
            if not isinstance(doc["levels"], dict):
                raise PatternFileError("levels", "expected an object vertex -> integer")
            level = {}
            for label, value in doc["levels"].items():
                v = decode_vertex(label, f"levels.{label}")
                if v not in known:
                    raise PatternFileError(f"levels.{label}", "unknown vertex")
                if isinstance(value, bool) or not isinstance(value, int):
                    raise PatternFileError(f"levels.{label}", "levels are integers")
                level[v] = value
            if set(level) != known:
                raise PatternFileError("levels", "every vertex needs a level")
        else:
            level = mbqc.levels_for(graph, f) if set(f) == measured else None
            if level is None:
                level = {v: 0 for v in graph.vertices}  # left for check_flow to reject
        flow = mbqc.Flow(f, level)
    return PatternDoc(graph, angles, flow)


def _resolve_flow(doc: PatternDoc) -> mbqc.Flow:
    if doc.flow is not None:
        bad = mbqc.check_flow(doc.graph, doc.flow)
        if bad:
            raise PatternFileError("flow", f"{bad[0].rule} fails at {bad[0].where!r}: {bad[0].message}")
        return doc.flow
    if len(doc.graph.vertices) > mbqc.FLOW_SEARCH_LIMIT:
        raise PatternFileError("flow", "graph too large for flow search; give the flow explicitly")
    found = mbqc.find_flow(doc.graph)
    if found is None:
        raise PatternFileError("flow", "the open graph has no flow")
    return found


def pattern_from_text(text: str, with_dependencies: bool = True) -> mbqc.Pattern:
    doc = parse_pattern_text(text)
    flow = _resolve_flow(doc)
    pattern = dqc1.rewrite_with_flow(doc.graph, flow, doc.angles, with_dependencies=with_dependencies)
    if with_dependencies:
        bad = mbqc.check_runnable(pattern)
        if bad:  # pragma: no cover - the rewrite is runnable by construction
            raise PatternFileError("flow", f"rewritten pattern is not runnable: {bad[0]}")
    return pattern


def load_pattern_json(path) -> mbqc.Pattern:
    """Read a pattern file and rewrite it along its flow.

    The flow is taken from the file when present (levels are derived if
    omitted) and searched for otherwise.  Raises PatternFileError naming the
    offending field.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise PatternFileError("path", str(exc)) from None
    return pattern_from_text(text)


# -- adversary strings --------------------------------------------------------------

_FLIP = re.compile(r"flip:(all|\d+)@\((\d+),(\d+)\)")
_PAULI = re.compile(r"pauli:([XYZ])(?::(\d+))?@out\((\d+)\)")
_UNITARY = re.compile(r"unitary:(\d+(?:\.\d*)?|\.\d+)")


def parse_adversary(text: str, spec: BrickworkSpec, seed: int | None = None):
    """Strategy object for one adversary string.

    Grammar: ``honest``, ``flip:all@(row,col)``, ``flip:K@(row,col)``,
    ``pauli:P@out(row)`` (P in X, Y, Z; every round) or ``pauli:P:K@out(row)``
    (round K only), ``unitary:STRENGTH`` with strength in [0, 1].
    """
    text = text.strip().replace(" ", "")
    if not isinstance(spec, BrickworkSpec):
        spec = BrickworkSpec(*spec)
    graph, _ = dqc1.brickwork(spec)
    if text == "honest":
        return verifyproto.Honest()
    m = _FLIP.fullmatch(text)
    if m:
        v = (int(m[2]), int(m[3]))
        if v not in graph.vertices or v in graph.outputs:
            raise UsageError(f"{text}: {v} is not a measured vertex of brickwork{(spec.width, spec.depth)}")
        k = None if m[1] == "all" else int(m[1])
        if k == 0:
            raise UsageError(f"{text}: rounds are numbered from 1")
        return verifyproto.OutcomeFlip(frozenset({(k, v)}))
    m = _PAULI.fullmatch(text)
    if m:
        row = int(m[3])
        if not 1 <= row <= spec.width:
            raise UsageError(f"{text}: row {row} outside 1..{spec.width}")
        k = None if m[2] is None else int(m[2])
        if k == 0:
            raise UsageError(f"{text}: rounds are numbered from 1")
        return verifyproto.LabPauli({(k, (row, spec.depth)): m[1]})
    m = _UNITARY.fullmatch(text)
    if m:
        if seed is None:
            raise UsageError("the unitary adversary needs a seed")
        strength = float(m[1])
        if not 0 <= strength <= 1:
            raise UsageError(f"{text}: strength must lie in [0, 1]")
        return verifyproto.RandomUnitary(int(seed), strength)
    raise UsageError(f"cannot parse adversary {text!r}")


# -- shared helpers -----------------------------------------------------------------


@lru_cache(maxsize=1)
def version_string() -> str:
    """Package version, extended with ``git describe`` when run from a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return __version__
    tag = out.stdout.strip()
    return f"{__version__}+g{tag}" if out.returncode == 0 and tag else __version__


def resolve_seed(args, required: bool) -> int | None:
    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV, "").strip():
        raw = os.environ[SEED_ENV].strip()
        try:
            seed = int(raw)
        except ValueError:
            raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None
    if seed is None and required:
        raise UsageError(f"this command is stochastic: pass --seed or set {SEED_ENV}")
    if seed is not None and seed < 0:
        raise UsageError("seeds are non-negative integers")
    return seed


def parse_int_list(text: str, name: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x != ""]
    except ValueError:
        raise UsageError(f"--{name}: expected comma-separated integers, got {text!r}") from None


def make_spec(args) -> BrickworkSpec:
    try:
        return BrickworkSpec(args.width, args.depth)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def angle_map(args, spec: BrickworkSpec, flag: str = "angles") -> dict:
    raw = getattr(args, flag.replace("-", "_"))
    graph, flow = dqc1.brickwork(spec)
    if raw is None:
        return {v: 0 for v in dqc1.measurement_order(graph, flow)}
    values = parse_int_list(raw, flag)
    try:
        return blindproto.angles_from_list(values, spec)
    except ValueError as exc:
        raise UsageError(f"--{flag}: {exc}") from None


def _plain(value):
    """JSON-safe copy with numpy scalars converted."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def config_of(args) -> dict:
    skip = {"func", "out"}
    return {k: _plain(v) for k, v in sorted(vars(args).items()) if k not in skip}


def report_json(args, body: Mapping, seed=None) -> str:
    config = config_of(args)
    if seed is not None:
        config["seed"] = seed
    doc = {"version": version_string(), "config": config}
    doc.update(_plain(dict(body)))
    return json.dumps(doc, indent=2) + "\n"


def emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def state_json(state: qmat.DensityState) -> dict:
    m = np.round(state.matrix, 12) + 0.0  # normalise -0.0
    return {
        "tags": [encode_vertex(t) if not (isinstance(t, tuple) and t and t[0] == "ref") else f"ref:{encode_vertex(t[1])}" for t in state.tags],
        "real": m.real.tolist(),
        "imag": m.imag.tolist(),
    }


def input_state(kind: str, inputs: Sequence) -> qmat.DensityState:
    if not inputs:
        return qmat.empty_state()
    if kind == "dqc1":
        return dqc1.dqc1_input(inputs)
    if kind == "plus":
        return reduce(qmat.tensor, [qmat.plus_state(v) for v in inputs])
    if kind == "mixed":
        return qmat.maximally_mixed(tuple(inputs))
    raise UsageError(f"unknown input kind {kind!r}")


def _read_pattern(args) -> mbqc.Pattern:
    return load_pattern_json(args.pattern)


# -- subcommands --------------------------------------------------------------------


def cmd_pattern_run(args) -> int:
    sample = args.mode == "sample"
    seed = resolve_seed(args, required=sample)
    pattern = _read_pattern(args)
    state = input_state(args.input, pattern.graph.inputs)
    records = mbqc.execute_pattern(pattern, state, mode=args.mode, seed=seed)
    if isinstance(records, mbqc.BranchRecord):
        records = [records]
        out = records[0].state
    else:
        out = mbqc.averaged_output(records)
    total = sum(r.probability for r in records)
    branches = [
        {"outcomes": {encode_vertex(v): int(b) for v, b in r.outcomes.items()}, "probability": round(r.probability, 12)}
        for r in records
    ]
    body = {
        "branches": branches,
        "probability_total": round(total, 12),
        "output_purity_bits": round(qmat.purity_parameter(out), 12),
        "output": state_json(out),
    }
    emit(args, report_json(args, body, seed))
    return EXIT_OK if sample or abs(total - 1) <= qmat.ATOL else EXIT_FAIL


def cmd_pattern_check(args) -> int:
    try:
        text = Path(args.pattern).read_text()
    except OSError as exc:
        raise PatternFileError("path", str(exc)) from None
    doc = parse_pattern_text(text)
    if doc.flow is not None:
        flow_violations = mbqc.check_flow(doc.graph, doc.flow)
        flow = doc.flow
    else:
        if len(doc.graph.vertices) > mbqc.FLOW_SEARCH_LIMIT:
            raise PatternFileError("flow", "graph too large for flow search; give the flow explicitly")
        flow = mbqc.find_flow(doc.graph)
        flow_violations = [] if flow is not None else [mbqc.Violation("F", None, "no flow exists")]
    body: dict = {
        "flow": [{"rule": v.rule, "where": repr(v.where), "message": v.message} for v in flow_violations],
        "runnable": None,
        "deterministic": None,
    }
    ok = not flow_violations
    if ok:
        pattern = dqc1.rewrite_with_flow(doc.graph, flow, doc.angles, with_dependencies=not args.no_dependencies)
        run_bad = mbqc.check_runnable(pattern)
        body["runnable"] = [{"rule": v.rule, "where": repr(v.where), "message": v.message} for v in run_bad]
        witness = mbqc.check_strong_determinism(pattern)
        body["deterministic"] = witness is None
        if witness is not None:
            body["witness"] = {
                "first": {encode_vertex(k): int(b) for k, b in witness.first.outcomes.items()},
                "second": {encode_vertex(k): int(b) for k, b in witness.second.outcomes.items()},
                "distance": round(witness.distance, 12),
            }
        ok = not run_bad and witness is None
    body["passed"] = ok
    emit(args, report_json(args, body))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_purity_audit(args) -> int:
    if args.pattern is not None:
        if args.width is not None or args.depth is not None:
            raise UsageError("give either a pattern file or --width/--depth, not both")
        pattern = _read_pattern(args)
        graph, flow, angles = pattern.graph, pattern.flow, pattern.angles
    else:
        if args.width is None or args.depth is None:
            raise UsageError("give a pattern file or both --width and --depth")
        spec = make_spec(args)
        graph, flow = dqc1.brickwork(spec)
        angles = angle_map(args, spec)
        pattern = dqc1.rewrite_with_flow(graph, flow, angles)
    if args.upfront:
        pattern = dqc1.upfront_pattern(graph, flow, angles)
    trail = dqc1.audit_purity(pattern, dqc1.dqc1_input(graph.inputs), c=args.c)
    if args.csv:
        Path(args.csv).write_text(trail.to_csv())
    body = {
        "input_purity_bits": round(trail.input_purity, 12),
        "max_excess_bits": round(trail.max_excess, 12),
        "c": trail.c,
        "steps": len(trail.steps),
        "passed": trail.passed,
    }
    emit(args, report_json(args, body))
    return EXIT_OK if trail.passed else EXIT_FAIL


def parse_circuit(text: str) -> list[tuple]:
    """``H:1;CNOT:1:2;T:2`` -> [("H", 1), ("CNOT", 1, 2), ("T", 2)]."""
    gates = []
    for item in filter(None, (x.strip() for x in text.split(";"))):
        name, *wires = item.split(":")
        try:
            gates.append((name.upper(), *(int(q) for q in wires)))
        except ValueError:
            raise UsageError(f"--circuit: bad gate {item!r}") from None
    return gates


def cmd_brickwork_gen(args) -> int:
    spec = make_spec(args)
    graph, flow = dqc1.brickwork(spec)
    if args.circuit is not None:
        if args.angles is not None:
            raise UsageError("give --angles or --circuit, not both")
        try:
            angles = dqc1.gates_to_brick_angles(parse_circuit(args.circuit), spec)
        except ValueError as exc:
            raise UsageError(f"--circuit: {exc}") from None
    else:
        angles = angle_map(args, spec)
    pattern = dqc1.rewrite_with_flow(graph, flow, angles)
    emit(args, dump_pattern_json(pattern))
    return EXIT_OK


def cmd_blind_run(args) -> int:
    seed = resolve_seed(args, required=True)
    spec = make_spec(args)
    angles = angle_map(args, spec)
    transcript = blindproto.run_blind(angles, spec, seed=seed)
    graph, flow = dqc1.brickwork(spec)
    # same seed, Choi input: compare the induced channel with the target unitary
    choi = blindproto.blind_choi(angles, spec, seed=seed)
    target = mbqc.unitary_choi(mbqc.reference_unitary(graph, flow, angles), graph.inputs, graph.outputs)
    distance = qmat.trace_distance(choi, target.reorder(choi.tags))
    passed = distance <= args.tol
    body = {
        "messages": transcript.to_json(),
        "outcomes": {encode_vertex(v): int(b) for v, b in transcript.outcomes.items()},
        "client_output": state_json(transcript.client_output()),
        "channel_distance": float(f"{distance:.3e}"),
        "passed": passed,
    }
    emit(args, report_json(args, body, seed))
    return EXIT_OK if passed else EXIT_FAIL


def cmd_blind_audit(args) -> int:
    spec = make_spec(args)
    a = angle_map(args, spec, "angles-a")
    b = angle_map(args, spec, "angles-b")
    try:
        distance = blindproto.blindness_audit(a, b, spec, use_r=not args.no_r)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    passed = distance <= args.tol
    body = {"distance": float(f"{distance:.3e}"), "passed": passed}
    emit(args, report_json(args, body))
    return EXIT_OK if passed else EXIT_FAIL


def _verify_cell(args, spec, angles, s, adversary_text, seed):
    adversary = parse_adversary(adversary_text, spec, seed)
    return verifyproto.estimate_p_incorrect(
        angles,
        spec,
        s,
        adversary,
        trials=args.trials,
        seed=seed,
        audit_purity=args.audit_purity,
        rule=args.rule,
        jobs=args.jobs,
    )


def _sound(report: verifyproto.VerificationReport) -> bool:
    return report.p_incorrect - 3 * report.stderr <= report.epsilon_bound


def _check_verify_args(args) -> None:
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    if args.jobs < 1:
        raise UsageError("--jobs must be positive")


def cmd_verify_run(args) -> int:
    seed = resolve_seed(args, required=True)
    _check_verify_args(args)
    if args.s < 1:
        raise UsageError("--s must be positive")
    spec = make_spec(args)
    angles = angle_map(args, spec)
    report = _verify_cell(args, spec, angles, args.s, args.adversary, seed)
    passed = _sound(report)
    if args.format == "csv":
        emit(args, _sweep_csv([(args.s, args.adversary, report)]))
    else:
        body = {"report": report.to_json(), "trap_pass": {k: list(v) for k, v in sorted(report.trap_pass.items())}}
        body["stderr"] = report.stderr
        body["max_purity_excess_bits"] = report.max_purity_excess
        body["passed"] = passed
        emit(args, report_json(args, body, seed))
    return EXIT_OK if passed else EXIT_FAIL


_CSV_FIELDS = [
    "s",
    "strategy",
    "m",
    "n",
    "trials",
    "acc_rate",
    "p_incorrect",
    "stderr",
    "ci95_lo",
    "ci95_hi",
    "epsilon_bound",
    "analytic_bound",
    "seed",
    "version",
]


def _sweep_csv(cells) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_FIELDS)
    for s, strategy, rep in cells:
        writer.writerow(
            [
                s,
                strategy,
                rep.m,
                rep.n,
                rep.trials,
                repr(rep.acc_rate),
                repr(rep.p_incorrect),
                repr(rep.stderr),
                repr(rep.ci95[0]),
                repr(rep.ci95[1]),
                repr(rep.epsilon_bound),
                "" if rep.analytic_bound is None else repr(rep.analytic_bound),
                rep.seed,
                version_string(),
            ]
        )
    return buf.getvalue()


def cmd_verify_sweep(args) -> int:
    seed = resolve_seed(args, required=True)
    _check_verify_args(args)
    spec = make_spec(args)
    angles = angle_map(args, spec)
    s_values = parse_int_list(args.s, "s")
    if not s_values or min(s_values) < 1:
        raise UsageError("--s needs positive round counts")
    strategies = args.adversary or ["honest"]
    for text in strategies:
        parse_adversary(text, spec, seed)  # validate before computing
    cells = []
    for text in strategies:
        for s in s_values:
            cells.append((s, text, _verify_cell(args, spec, angles, s, text, seed)))
    if args.format == "json":
        body = {"cells": [{"s": s, "strategy": t, "report": r.to_json()} for s, t, r in cells]}
        emit(args, report_json(args, body, seed))
    else:
        emit(args, _sweep_csv(cells))
    return EXIT_OK if all(_sound(r) for _, _, r in cells) else EXIT_FAIL


# -- argument parsing ---------------------------------------------------------------


def _add_shape(p, required: bool = True) -> None:
    p.add_argument("--width", type=int, required=required, help="brickwork rows")
    p.add_argument("--depth", type=int, required=required, help="brickwork columns")


def _add_common(p, seed: bool = False) -> None:
    p.add_argument("--out", help="write the report here instead of stdout")
    if seed:
        p.add_argument("--seed", type=int, help=f"master seed (falls back to ${SEED_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opq", description="One-pure-qubit MBQC patterns, blind and verified runs.")
    parser.add_argument("--version", action="version", version=f"opq {__version__}")
    groups = parser.add_subparsers(dest="group", required=True, metavar="GROUP")

    pat = groups.add_parser("pattern", help="run or check a pattern file").add_subparsers(
        dest="action", required=True, metavar="ACTION"
    )
    p = pat.add_parser("run", help="execute a pattern file on a chosen input")
    p.add_argument("pattern", help="pattern JSON file")
    p.add_argument("--input", choices=["dqc1", "plus", "mixed"], default="dqc1")
    p.add_argument("--mode", choices=["enumerate", "sample"], default="enumerate")
    _add_common(p, seed=True)
    p.set_defaults(func=cmd_pattern_run)

    p = pat.add_parser("check", help="flow, runnability and determinism of a pattern file")
    p.add_argument("pattern", help="pattern JSON file")
    p.add_argument("--no-dependencies", action="store_true", help="drop the adaptive dependency sets")
    _add_common(p)
    p.set_defaults(func=cmd_pattern_check)

    pur = groups.add_parser("purity", help="purity-parameter audit").add_subparsers(
        dest="action", required=True, metavar="ACTION"
    )
    p = pur.add_parser("audit", help="track the purity parameter after every command")
    p.add_argument("pattern", nargs="?", help="pattern JSON file (or use --width/--depth)")
    _add_shape(p, required=False)
    p.add_argument("--angles", help="comma-separated angles in eighths, measurement order")
    p.add_argument("--c", type=float, default=dqc1.DEFAULT_C, help="allowed excess in bits")
    p.add_argument("--upfront", action="store_true", help="prepare every qubit before any measurement")
    p.add_argument("--csv", help="write the per-step trail as CSV")
    _add_common(p)
    p.set_defaults(func=cmd_purity_audit)

    bw = groups.add_parser("brickwork", help="brickwork pattern files").add_subparsers(
        dest="action", required=True, metavar="ACTION"
    )
    p = bw.add_parser("gen", help="write a brickwork pattern file")
    _add_shape(p)
    p.add_argument("--angles", help="comma-separated angles in eighths, measurement order")
    p.add_argument("--circuit", help="gate list such as 'H:1;CNOT:1:2;T:2'")
    _add_common(p)
    p.set_defaults(func=cmd_brickwork_gen)

    bl = groups.add_parser("blind", help="blind delegated computation").add_subparsers(
        dest="action", required=True, metavar="ACTION"
    )
    p = bl.add_parser("run", help="one honest blind session plus a channel check")
    _add_shape(p)
    p.add_argument("--angles", help="comma-separated angles in eighths, measurement order")
    p.add_argument("--tol", type=float, default=qmat.ATOL)
    _add_common(p, seed=True)
    p.set_defaults(func=cmd_blind_run)

    p = bl.add_parser("audit", help="compare averaged server views of two computations")
    _add_shape(p)
    p.add_argument("--angles-a", required=True)
    p.add_argument("--angles-b", required=True)
    p.add_argument("--exhaustive", action="store_true", help="exact average over all secrets (the only mode)")
    p.add_argument("--no-r", action="store_true", help="switch off the outcome masks")
    p.add_argument("--tol", type=float, default=qmat.ATOL)
    _add_common(p)
    p.set_defaults(func=cmd_blind_audit)

    ver = groups.add_parser("verify", help="trap-based verification").add_subparsers(
        dest="action", required=True, metavar="ACTION"
    )
    for name, helptext in (("run", "Monte Carlo estimate for one adversary"), ("sweep", "grid over s and adversaries")):
        p = ver.add_parser(name, help=helptext)
        _add_shape(p)
        if name == "run":
            p.add_argument("--s", type=int, required=True, help="number of rounds")
            p.add_argument("--adversary", default="honest")
            p.add_argument("--format", choices=["json", "csv"], default="json")
        else:
            p.add_argument("--s", required=True, help="comma-separated round counts")
            p.add_argument("--adversary", action="append", help="repeatable; default honest")
            p.add_argument("--format", choices=["json", "csv"], default="csv")
        p.add_argument("--angles", help="comma-separated angles in eighths, measurement order")
        p.add_argument("--trials", type=int, default=1000)
        p.add_argument("--jobs", type=int, default=1, help="worker processes for the trials")
        p.add_argument("--rule", choices=["vertex", "row"], default="vertex", help="dummy placement")
        p.add_argument("--audit-purity", action="store_true")
        _add_common(p, seed=True)
        p.set_defaults(func=cmd_verify_run if name == "run" else cmd_verify_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: --help exits 0, errors exit 2
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, PatternFileError, dqc1.CircuitFitError) as exc:
        print(f"opq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
