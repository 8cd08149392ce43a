"""orglab: self-replicating neural programs competing in a finite arena.

Each organism is defined by a 45-character genome text.  It trains a
from-scratch two-layer LSTM until a greedy rollout regenerates that
text byte-exactly, then writes two mutated copies of the text and
executes them.  A capacity-limited arena kills the oldest organism to
make room for each newcomer, so faster-maturing genomes take over the
population without any explicit fitness function.
"""

__version__ = "0.1.0"

from .genome import (  # noqa: F401
    ALPHABET,
    Genome,
    MutationScales,
    ParseError,
    ancestor_genome,
    mutate_genome,
    parse_genome,
    serialize_genome,
)
