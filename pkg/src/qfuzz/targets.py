"""Synthetic instrumented targets with known coverage topologies.

Each target is a pure function from input bytes to :class:`ExecutionFeedback`
plus a known edge ceiling.  Targets are looked up by name through a small
registry so the CLI and config files can refer to them.
"""

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

from .coverage import ExecutionFeedback
from .mutators import MutatorAction

DEFAULT_SEED_INPUT = b"\n"


@dataclass(frozen=True)
class TargetProgram:
    name: str
    execute: Callable[[bytes], ExecutionFeedback]
    total_edges: int
    seed_input: bytes = DEFAULT_SEED_INPUT
    # operators that can move this target's coverage frontier, if known
    dominant_class: frozenset = frozenset()

    def __call__(self, data):
        return self.execute(data)


def magic_header_target(depth, magic, name="magic_header"):
    """Prefix-matched magic header followed by a cascade of ``depth`` edges.

    Edge ``i`` (``i < len(magic)``) is hit when the first ``i + 1`` bytes match
    the magic; edge ``len(magic)`` is the entry edge.  Once the whole magic
    matches, cascade edge ``j`` is hit for inputs at least ``len(magic) + j``
    bytes long, so coverage plateaus until the header is found and then keeps
    growing.
    """
    magic = bytes(magic)
    if depth < 1 or not magic:
        raise ValueError("magic_header_target needs depth >= 1 and a non-empty magic")
    m = len(magic)
    entry = m
    prefix_fb = [ExecutionFeedback(frozenset([entry, *range(i)])) for i in range(m + 1)]
    cascade_fb = [
        ExecutionFeedback(frozenset([entry, *range(m), *range(m + 1, m + 2 + j)]))
        for j in range(depth)
    ]

    def execute(data):
        matched = 0
        for a, b in zip(data, magic):
            if a != b:
                break
            matched += 1
        if matched < m:
            return prefix_fb[matched]
        return cascade_fb[min(len(data) - m, depth - 1)]

    return TargetProgram(name, execute, m + depth + 1,
                         dominant_class=frozenset({MutatorAction.InsertByte,
                                                   MutatorAction.ChangeByte}))


def compare_gate_target(constants, name="compare_gate"):
    """Chain of 32-bit little-endian comparisons against ``constants``.

    Window ``i`` is ``data[4i:4i+4]``; each comparison performed is reported
    as a TORC event and each one passed grants edge ``i + 1`` (edge 0 is the
    entry).  The chain stops at the first failure or short window.
    """
    consts = [int(c) & 0xFFFFFFFF for c in constants]
    if not consts:
        raise ValueError("compare_gate_target needs at least one constant")
    words = [c.to_bytes(4, "little") for c in consts]

    def execute(data):
        edges = [0]
        events = []
        for i, word in enumerate(words):
            window = data[4 * i:4 * i + 4]
            if len(window) < 4:
                break
            events.append((window, word))
            if window != word:
                break
            edges.append(i + 1)
        return ExecutionFeedback(frozenset(edges), tuple(events))

    return TargetProgram(name, execute, len(consts) + 1,
                         dominant_class=frozenset({MutatorAction.AddWordFromTORC}))


_RUN3 = re.compile(rb"(.)\1\1", re.DOTALL)


def _length_staircase(steps, name):
    # edge k (1..steps) needs len(data) >= k and no byte repeated 3+ times in a row,
    # so the frontier moves one byte per single-byte insertion
    level = lru_cache(maxsize=None)(lambda k: ExecutionFeedback(frozenset(range(k + 1))))
    entry = level(0)
    has_run = _RUN3.search

    def execute(data):
        if has_run(data):
            return entry
        return level(min(len(data), steps))

    return TargetProgram(name, execute, steps + 1,
                         dominant_class=frozenset({MutatorAction.InsertByte,
                                                   MutatorAction.InsertRepeatedBytes}))


def _byte_values(name):
    # single-byte inputs only: one edge per distinct byte value
    entry = ExecutionFeedback(frozenset([0]))
    fbs = [ExecutionFeedback(frozenset([0, v + 1])) for v in range(256)]

    def execute(data):
        if len(data) != 1:
            return entry
        return fbs[data[0]]

    return TargetProgram(name, execute, 257,
                         dominant_class=frozenset({MutatorAction.ChangeByte,
                                                   MutatorAction.ChangeBit}))


def _shrink_staircase(start_len, name):
    # seeded with a long input; edge k (1..start_len-1) needs len(data) <= start_len - k
    @lru_cache(maxsize=None)
    def level(n):
        return ExecutionFeedback(frozenset(range(start_len - n + 1 if n else start_len)))

    def execute(data):
        return level(min(len(data), start_len))

    return TargetProgram(name, execute, start_len, seed_input=b"A" * start_len,
                         dominant_class=frozenset({MutatorAction.EraseBytes,
                                                   MutatorAction.CopyPart}))


def biased_mutator_target(dominant, size=None):
    """A target whose frontier only one operator class can push.

    * ``InsertByte``: edge ``k`` requires ``len(input) >= k`` and no byte
      repeated three or more times in a row.
    * ``ChangeByte``: edges are distinct byte values of single-byte inputs.
    * ``EraseBytes``: starts from a long seed; edges require shorter inputs.
    """
    dominant = MutatorAction(dominant)
    if dominant is MutatorAction.InsertByte:
        return _length_staircase(size or 4096, "insert_staircase")
    if dominant is MutatorAction.ChangeByte:
        return _byte_values("byte_values")
    if dominant is MutatorAction.EraseBytes:
        return _shrink_staircase(size or 256, "erase_staircase")
    raise ValueError(f"no biased target for {dominant.name}")


def crashing_target(inner, trigger, name=None):
    """Wrap ``inner`` so inputs starting with ``trigger`` report a crash verdict."""
    trigger = bytes(trigger)

    def execute(data):
        fb = inner.execute(data)
        if data.startswith(trigger):
            return ExecutionFeedback(fb.edges_hit, fb.torc_events, "crash")
        return fb

    return TargetProgram(name or inner.name + "_crashing", execute, inner.total_edges,
                         inner.seed_input, inner.dominant_class)


_REGISTRY = {
    "magic_header": lambda: magic_header_target(16, b"FUZZ"),
    "compare_gate": lambda: compare_gate_target([0xDEADBEEF, 0x0BADF00D, 0x1337C0DE]),
    "insert_staircase": lambda: biased_mutator_target(MutatorAction.InsertByte),
    "byte_values": lambda: biased_mutator_target(MutatorAction.ChangeByte),
    "erase_staircase": lambda: biased_mutator_target(MutatorAction.EraseBytes),
}


def register_target(name, factory):
    """Make ``factory()`` available under ``name`` (overrides existing entries)."""
    _REGISTRY[name] = factory


def get_target(name):
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown target {name!r}; known: {', '.join(sorted(_REGISTRY))}") from None
    return factory()


def target_names():
    return sorted(_REGISTRY)
