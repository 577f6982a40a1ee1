"""Deterministic random-number streams for reproducible simulation.

Every trial draws from counter-based Philox streams keyed by
``(trial_seed, phase)``.  Each simulation phase (entry times, arm
assignment, frailties, pre-crossover event draws, interlude offsets,
post-crossover event draws, dropout) consumes one stream, and values
within a stream are indexed by participant.  A participant's draw is
therefore a pure function of ``(trial_seed, phase, participant index)``,
so neither parallelism nor the order in which phases are evaluated can
reorder draws.

Replicate seeds are derived from the study base seed with the splitmix64
mixing function::

    replicate_seed(base, r) = splitmix64(splitmix64(base) ^ (r + 1))

This derivation is part of the output contract and must not change.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# simulation draw phases, one Philox stream each
PHASE_ENTRY = 1
PHASE_ARM = 2
PHASE_FRAILTY = 3
PHASE_EVENT_PRE = 4
PHASE_XSTART = 5
PHASE_EVENT_POST = 6
PHASE_DROPOUT = 7


def splitmix64(x):
    """One round of the splitmix64 finalizer (public-domain constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def replicate_seed(base_seed, index):
    """64-bit seed for replicate ``index`` of a study with ``base_seed``."""
    if index < 0:
        raise ValueError("replicate index must be >= 0")
    return splitmix64(splitmix64(base_seed & _MASK64) ^ ((index + 1) & _MASK64))


def stream(seed, phase):
    """Counter-based generator for one draw phase of one trial."""
    key = np.array([seed & _MASK64, phase & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
