"""The thirteen byte-level mutation operators and their dictionaries.

Inputs are plain ``bytes``; every operator returns a new ``bytes`` object no
longer than ``max_len``.  Operators that need content they cannot find fall
back to ``InsertByte`` (empty input) or ``ChangeByte`` (input too short, or
an empty dictionary), so every ``(action, input)`` pair produces output.
"""

import enum
import logging
import re
from collections import namedtuple

logger = logging.getLogger(__name__)

DEFAULT_MAX_LEN = 4096
REPEAT_MIN = 3
REPEAT_MAX = 128
TEMP_DICT_CAPACITY = 256
PERSIST_DICT_CAPACITY = 4096
TORC_CAPACITY = 64
MAX_WORD_LEN = 64
INT_WIDTHS = (1, 2, 4, 8)

_DIGITS = re.compile(rb"[0-9]+")


class MutatorAction(enum.IntEnum):
    EraseBytes = 0
    InsertByte = 1
    InsertRepeatedBytes = 2
    ChangeBit = 3
    ChangeByte = 4
    ShuffleBytes = 5
    ChangeASCIIInteger = 6
    ChangeBinaryInteger = 7
    CopyPart = 8
    CrossOver = 9
    AddWordPersistAutoDict = 10
    AddWordTempAutoDict = 11
    AddWordFromTORC = 12


N_ACTIONS = len(MutatorAction)

LENGTH_PRESERVING = frozenset({
    MutatorAction.ChangeBit,
    MutatorAction.ChangeByte,
    MutatorAction.ShuffleBytes,
    MutatorAction.ChangeASCIIInteger,
    MutatorAction.ChangeBinaryInteger,
})

DICTIONARY_ACTIONS = frozenset({
    MutatorAction.AddWordPersistAutoDict,
    MutatorAction.AddWordTempAutoDict,
    MutatorAction.AddWordFromTORC,
})

# (output, word inserted or spliced in, action actually applied after fallbacks)
Mutation = namedtuple("Mutation", "data word applied")


class _BoundedWords:
    """Insertion-ordered, deduplicated word list that evicts its oldest entry."""

    def __init__(self, capacity):
        self.capacity = capacity
        self._items = []
        self._seen = set()

    def add(self, item):
        if item in self._seen:
            return False
        if len(self._items) >= self.capacity:
            self._seen.discard(self._items.pop(0))
        self._items.append(item)
        self._seen.add(item)
        return True

    def clear(self):
        self._items.clear()
        self._seen.clear()

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __contains__(self, item):
        return item in self._seen


class DictionaryState:
    """Temporary and persistent auto-dictionaries plus the table of recent compares.

    ``torc`` holds ``(input_operand, other_operand)`` byte pairs; only the
    non-input operand is used for mutation.
    """

    def __init__(self, temp_capacity=TEMP_DICT_CAPACITY,
                 persist_capacity=PERSIST_DICT_CAPACITY,
                 torc_capacity=TORC_CAPACITY, max_word_len=MAX_WORD_LEN):
        if min(temp_capacity, persist_capacity, torc_capacity, max_word_len) < 1:
            raise ValueError("dictionary capacities must be positive")
        self.max_word_len = max_word_len
        self.temp_dict = _BoundedWords(temp_capacity)
        self.persist_dict = _BoundedWords(persist_capacity)
        self.torc = _BoundedWords(torc_capacity)

    def record_compare(self, input_operand, other_operand):
        other = bytes(other_operand)[: self.max_word_len]
        if not other:
            return
        self.torc.add((bytes(input_operand)[: self.max_word_len], other))

    def reset_episode(self):
        """Drop per-episode state; the persistent dictionary survives."""
        self.temp_dict.clear()
        self.torc.clear()

    def copy(self):
        new = DictionaryState(self.temp_dict.capacity, self.persist_dict.capacity,
                              self.torc.capacity, self.max_word_len)
        for w in self.temp_dict:
            new.temp_dict.add(w)
        for w in self.persist_dict:
            new.persist_dict.add(w)
        for pair in self.torc:
            new.torc.add(pair)
        return new


def record_coverage_credit(word, dicts):
    """Credit ``word`` for a coverage gain: it enters both auto-dictionaries."""
    if not word:
        return dicts
    word = bytes(word)
    if len(word) > dicts.max_word_len:
        logger.debug("truncating credited word of %d bytes", len(word))
        word = word[: dicts.max_word_len]
    dicts.temp_dict.add(word)
    dicts.persist_dict.add(word)
    return dicts


def write_dictionary(path, words):
    with open(path, "w") as fh:
        for w in words:
            fh.write(bytes(w).hex() + "\n")


def read_dictionary(path):
    with open(path) as fh:
        return [bytes.fromhex(line.strip()) for line in fh if line.strip()]


# --- individual operators ------------------------------------------------

def insert_byte(data, rng, max_len=DEFAULT_MAX_LEN):
    pos = rng.below(len(data) + 1)
    return (data[:pos] + bytes((rng.byte(),)) + data[pos:])[:max_len]


def erase_bytes(data, rng, max_len=DEFAULT_MAX_LEN):
    pos = rng.below(len(data))
    return data[:pos] + data[pos + 1:]


def insert_repeated_bytes(data, rng, max_len=DEFAULT_MAX_LEN):
    n = rng.between(REPEAT_MIN, REPEAT_MAX)
    n = min(n, max_len - len(data))
    if n <= 0:
        return data[:max_len]
    pos = rng.below(len(data) + 1)
    return data[:pos] + bytes((rng.byte(),)) * n + data[pos:]


def change_bit(data, rng, max_len=DEFAULT_MAX_LEN):
    bit = rng.below(len(data) * 8)
    out = bytearray(data)
    out[bit >> 3] ^= 0x80 >> (bit & 7)
    return bytes(out)


def change_byte(data, rng, max_len=DEFAULT_MAX_LEN):
    pos = rng.below(len(data))
    out = bytearray(data)
    # always a different value
    out[pos] = (out[pos] + 1 + rng.below(255)) & 0xFF
    return bytes(out)


def shuffle_bytes(data, rng, max_len=DEFAULT_MAX_LEN):
    """Fisher-Yates shuffle of a random window of 2..8 bytes."""
    if len(data) < 2:
        return data
    n = min(len(data), rng.between(2, 8))
    start = rng.below(len(data) - n + 1)
    out = bytearray(data)
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        out[start + i], out[start + j] = out[start + j], out[start + i]
    return bytes(out)


def _find_digit_run(data, start):
    m = _DIGITS.search(data, start) or _DIGITS.search(data, 0, start)
    if m is None:
        return None
    lo, hi = m.span()
    while lo > 0 and 0x30 <= data[lo - 1] <= 0x39:
        lo -= 1
    if hi == start:
        # wrapped search stopped at ``start``; the run may continue past it
        while hi < len(data) and 0x30 <= data[hi] <= 0x39:
            hi += 1
    return lo, hi


def change_ascii_integer(data, rng, max_len=DEFAULT_MAX_LEN):
    """Arithmetic on the first decimal run found from a random start.

    The result is saturated to ``[0, 10**run_len - 1]`` and written back
    right-aligned over the original run, so length is preserved.  Returns
    ``None`` when the input holds no digits.
    """
    run = _find_digit_run(data, rng.below(len(data)))
    if run is None:
        return None
    lo, hi = run
    width = hi - lo
    val = int(data[lo:hi])
    op = rng.below(4)
    if op == 0:
        val += rng.between(1, 10)
    elif op == 1:
        val -= rng.between(1, 10)
    elif op == 2:
        val *= rng.between(1, 10)
    else:
        val = rng.below(10 ** min(width, 18))
    val = min(max(val, 0), 10 ** width - 1)
    return data[:lo] + str(val).rjust(width, "0").encode() + data[hi:]


def change_binary_integer(data, rng, max_len=DEFAULT_MAX_LEN, *, width=None,
                          offset=None, op=None, delta=None):
    """Little-endian integer arithmetic (add/sub/negate, wrapping) on one window.

    Keyword overrides pin the otherwise random choices.
    """
    if width is None:
        widths = [w for w in INT_WIDTHS if w <= len(data)]
        width = widths[rng.below(len(widths))]
    if offset is None:
        offset = rng.below(len(data) - width + 1)
    if op is None:
        op = ("add", "sub", "neg")[rng.below(3)]
    if delta is None:
        delta = rng.between(1, 10)
    mask = (1 << (8 * width)) - 1
    val = int.from_bytes(data[offset:offset + width], "little")
    if op == "add":
        val = (val + delta) & mask
    elif op == "sub":
        val = (val - delta) & mask
    elif op == "neg":
        val = -val & mask
    else:
        raise ValueError(f"unknown integer op {op!r}")
    return data[:offset] + val.to_bytes(width, "little") + data[offset + width:]


def copy_part(data, rng, max_len=DEFAULT_MAX_LEN):
    start = rng.below(len(data))
    n = 1 + rng.below(len(data) - start)
    return data[start:start + n]


def cross_over(data, other, rng, max_len=DEFAULT_MAX_LEN):
    """Alternate contiguous slices of ``data`` and ``other``, each read in order.

    Output size is capped at ``max(len(data), len(other))`` so recombination
    never grows inputs beyond what the corpus already holds.
    """
    out_cap = min(max_len, max(len(data), len(other)))
    if out_cap == 0:
        return b""
    out_cap = rng.below(out_cap) + 1
    out = bytearray()
    srcs = (data, other)
    pos = [0, 0]
    cur = 0
    while len(out) < out_cap and (pos[0] < len(data) or pos[1] < len(other)):
        src = srcs[cur]
        if pos[cur] < len(src):
            take = rng.below(min(out_cap - len(out), len(src) - pos[cur])) + 1
            out += src[pos[cur]:pos[cur] + take]
            pos[cur] += take
        cur ^= 1
    return bytes(out)


def spliced_word(other, out, max_word_len=MAX_WORD_LEN):
    """Longest prefix of ``other`` that appears verbatim in a crossover output.

    This is the word credited to the dictionaries when a crossover gains coverage.
    """
    for n in range(min(len(other), max_word_len), 0, -1):
        if other[:n] in out:
            return other[:n]
    return None


def overwrite_word(data, word, rng, max_len=DEFAULT_MAX_LEN):
    """Write ``word`` at a random offset, extending past the end if it overhangs."""
    off = rng.below(len(data))
    return (data[:off] + word + data[off + len(word):])[:max_len]


# --- dispatch -------------------------------------------------------------

_SIMPLE = {
    MutatorAction.EraseBytes: erase_bytes,
    MutatorAction.InsertByte: insert_byte,
    MutatorAction.InsertRepeatedBytes: insert_repeated_bytes,
    MutatorAction.ChangeBit: change_bit,
    MutatorAction.ChangeByte: change_byte,
    MutatorAction.ShuffleBytes: shuffle_bytes,
    MutatorAction.ChangeBinaryInteger: change_binary_integer,
    MutatorAction.CopyPart: copy_part,
}

_NEEDS_CONTENT = frozenset(MutatorAction) - {
    MutatorAction.InsertByte, MutatorAction.InsertRepeatedBytes, MutatorAction.CrossOver,
}


def apply_mutation(action, data, corpus_sample, dicts, rng, max_len=DEFAULT_MAX_LEN):
    """Mutate ``data`` and report which word (if any) was inserted and which
    operator actually ran after fallbacks."""
    action = MutatorAction(action)
    data = bytes(data)
    if not data and action in _NEEDS_CONTENT:
        return Mutation(insert_byte(data, rng, max_len), None, MutatorAction.InsertByte)

    if action is MutatorAction.ChangeASCIIInteger:
        out = change_ascii_integer(data, rng, max_len)
        if out is None:
            return Mutation(change_byte(data, rng, max_len), None, MutatorAction.ChangeByte)
        return Mutation(out, None, action)

    if action is MutatorAction.CrossOver:
        other = data if corpus_sample is None else bytes(corpus_sample)
        out = cross_over(data, other, rng, max_len)
        return Mutation(out, None, action)

    if action in DICTIONARY_ACTIONS:
        if action is MutatorAction.AddWordFromTORC:
            pool = dicts.torc if dicts is not None else ()
        elif action is MutatorAction.AddWordTempAutoDict:
            pool = dicts.temp_dict if dicts is not None else ()
        else:
            pool = dicts.persist_dict if dicts is not None else ()
        if not len(pool):
            return Mutation(change_byte(data, rng, max_len), None, MutatorAction.ChangeByte)
        entry = pool[rng.below(len(pool))]
        word = entry[1] if action is MutatorAction.AddWordFromTORC else entry
        return Mutation(overwrite_word(data, word, rng, max_len), word, action)

    return Mutation(_SIMPLE[action](data, rng, max_len)[:max_len], None, action)


def mutate(action, data, corpus_sample=None, dicts=None, rng=None, max_len=DEFAULT_MAX_LEN):
    """Apply one operator and return the mutated input."""
    if rng is None:
        raise ValueError("mutate() needs an RngStream")
    if len(data) > max_len:
        raise ValueError(f"input of {len(data)} bytes exceeds max_len={max_len}")
    return apply_mutation(action, data, corpus_sample, dicts, rng, max_len).data
