"""Genome text format, parsing, serialization, and mutation.

A genome is a fixed-width 45-character text over a 39-symbol alphabet
(lowercase letters, digits, space, newline, dot).  It fully defines an
organism's mutable parameters and is the string its network must learn
to regenerate.  Canonical layout, one field per line, every line
newline-terminated::

    org1            header            (5 chars incl. newline)
    lr 0.001000     learning rate     (12 chars, 6 decimal places)
    hid 016         cells per layer   (8 chars, zero-padded)
    noi 008         noise inputs      (8 chars, zero-padded)
    aux 008         auxiliary outputs (8 chars, zero-padded)
    end             trailer           (4 chars)

Fixed widths mean mutation can never change the text length, and the
small closed alphabet keeps the regeneration target learnable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

LR_MIN = 0.000001
LR_MAX = 0.999999
HID_MIN, HID_MAX = 4, 999
NOI_MIN, NOI_MAX = 0, 64
AUX_MIN, AUX_MAX = 0, 64

GENOME_TEXT_LEN = 45
GENOME_LINES = 6


class Alphabet:
    """The closed character set of genome texts: a-z, 0-9, space, newline, dot."""

    CHARS = "abcdefghijklmnopqrstuvwxyz0123456789 \n."

    def __init__(self) -> None:
        self._index = {c: i for i, c in enumerate(self.CHARS)}

    @property
    def size(self) -> int:
        return len(self.CHARS)

    def __contains__(self, char: str) -> bool:
        return char in self._index

    def index_of(self, char: str) -> int:
        try:
            return self._index[char]
        except KeyError:
            raise ValueError(f"character {char!r} not in alphabet") from None

    def encode(self, text: str) -> np.ndarray:
        """Text to an int array of character indices."""
        return np.array([self.index_of(c) for c in text], dtype=np.int64)

    def decode(self, indices) -> str:
        """Character indices back to text."""
        return "".join(self.CHARS[int(i)] for i in indices)


ALPHABET = Alphabet()

assert ALPHABET.size == 39


class ParseError(Exception):
    """A genome text is corrupted or non-canonical; the organism must not run."""

    def __init__(self, line: int, reason: str) -> None:
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


def _quantize_lr(value: float) -> float:
    """Snap a learning rate onto the 6-decimal grid the text format can carry."""
    return float(f"{value:.6f}")


@dataclass(frozen=True)
class Genome:
    """The four mutable hyperparameters; the unit of heredity.

    lr is always exactly representable at 6 decimal places so that
    parse(serialize(g)) == g holds byte-exactly.
    """

    lr: float
    hid: int
    noi: int
    aux: int

    def __post_init__(self) -> None:
        if not (LR_MIN <= self.lr <= LR_MAX):
            raise ValueError(f"lr {self.lr} outside [{LR_MIN}, {LR_MAX}]")
        if _quantize_lr(self.lr) != self.lr:
            raise ValueError(f"lr {self.lr!r} not on the 6-decimal grid")
        if not (HID_MIN <= self.hid <= HID_MAX):
            raise ValueError(f"hid {self.hid} outside [{HID_MIN}, {HID_MAX}]")
        if not (NOI_MIN <= self.noi <= NOI_MAX):
            raise ValueError(f"noi {self.noi} outside [{NOI_MIN}, {NOI_MAX}]")
        if not (AUX_MIN <= self.aux <= AUX_MAX):
            raise ValueError(f"aux {self.aux} outside [{AUX_MIN}, {AUX_MAX}]")


def ancestor_genome() -> Genome:
    """The hand-written organism that seeds every population."""
    return Genome(lr=0.001, hid=16, noi=8, aux=8)


_LR_RE = re.compile(r"^lr ([0-9]\.[0-9]{6})$")
_INT_RES = {
    "hid": re.compile(r"^hid ([0-9]{3})$"),
    "noi": re.compile(r"^noi ([0-9]{3})$"),
    "aux": re.compile(r"^aux ([0-9]{3})$"),
}
_INT_BOUNDS = {
    "hid": (HID_MIN, HID_MAX),
    "noi": (NOI_MIN, NOI_MAX),
    "aux": (AUX_MIN, AUX_MAX),
}


def parse_genome(text: str) -> Genome:
    """Decode a canonical genome text, rejecting any deviation.

    Raises ParseError on wrong line count or width, unknown keys,
    characters outside the alphabet, or out-of-range values.
    """
    foreign = _first_foreign_char(text)
    if foreign is not None:
        lineno, char = foreign
        raise ParseError(lineno, f"character {char!r} not in alphabet")
    parts = text.split("\n")
    if len(parts) != GENOME_LINES + 1 or parts[GENOME_LINES] != "":
        raise ParseError(0, "expected exactly 6 newline-terminated lines")
    if parts[0] != "org1":
        raise ParseError(1, f"bad header {parts[0]!r}")
    m = _LR_RE.match(parts[1])
    if m is None:
        raise ParseError(2, f"malformed lr line {parts[1]!r}")
    lr = float(m.group(1))
    if not (LR_MIN <= lr <= LR_MAX):
        raise ParseError(2, f"lr {m.group(1)} out of range")
    values = {}
    for offset, key in enumerate(("hid", "noi", "aux")):
        lineno = 3 + offset
        m = _INT_RES[key].match(parts[lineno - 1])
        if m is None:
            raise ParseError(lineno, f"malformed {key} line {parts[lineno - 1]!r}")
        value = int(m.group(1))
        lo, hi = _INT_BOUNDS[key]
        if not (lo <= value <= hi):
            raise ParseError(lineno, f"{key} {value} out of range [{lo}, {hi}]")
        values[key] = value
    if parts[5] != "end":
        raise ParseError(6, f"bad trailer {parts[5]!r}")
    return Genome(lr=lr, hid=values["hid"], noi=values["noi"], aux=values["aux"])


def _first_foreign_char(text: str) -> tuple[int, str] | None:
    line = 1
    for char in text:
        if char not in ALPHABET:
            return line, char
        if char == "\n":
            line += 1
    return None


def serialize_genome(genome: Genome) -> str:
    """Emit the canonical 45-character text form."""
    return (
        "org1\n"
        f"lr {genome.lr:.6f}\n"
        f"hid {genome.hid:03d}\n"
        f"noi {genome.noi:03d}\n"
        f"aux {genome.aux:03d}\n"
        "end\n"
    )


@dataclass(frozen=True)
class MutationScales:
    """Mutation operator parameters applied at every replication.

    The learning rate takes a zero-centered Gaussian step of scale
    sigma_lr; each integer field independently takes a step drawn from
    the integers -int_span..+int_span (uniformly, or per int_weights).
    int_span=0 together with sigma_lr=0 disables mutation entirely.
    """

    sigma_lr: float = 0.002
    int_span: int = 5
    int_weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.sigma_lr < 0:
            raise ValueError("sigma_lr must be >= 0")
        if self.int_span < 0:
            raise ValueError("int_span must be >= 0")
        if self.int_weights is not None:
            expected = 2 * self.int_span + 1
            if len(self.int_weights) != expected:
                raise ValueError(f"int_weights needs {expected} entries")


def _clamp(value, lo, hi):
    return max(lo, min(hi, value))


def mutate_genome(genome: Genome, rng: np.random.Generator, scales: MutationScales) -> Genome:
    """Return a mutated copy; every call draws fresh randomness.

    The learning rate is perturbed, clamped, and re-quantized onto the
    text grid; integer fields step by a bounded delta and clamp to their
    ranges, so the result is always a legal genome.
    """
    lr = genome.lr + rng.normal(0.0, scales.sigma_lr)
    lr = _quantize_lr(_clamp(lr, LR_MIN, LR_MAX))
    ints = {}
    for key, current in (("hid", genome.hid), ("noi", genome.noi), ("aux", genome.aux)):
        if scales.int_weights is None:
            delta = int(rng.integers(-scales.int_span, scales.int_span + 1))
        else:
            choices = np.arange(-scales.int_span, scales.int_span + 1)
            delta = int(rng.choice(choices, p=scales.int_weights))
        lo, hi = _INT_BOUNDS[key]
        ints[key] = _clamp(current + delta, lo, hi)
    return Genome(lr=lr, hid=ints["hid"], noi=ints["noi"], aux=ints["aux"])
