"""Reproducible random streams.

All randomness flows from a single user seed through named substreams so
that cross-validation folds, bootstrap replicates, and simulation
replications are reproducible independently of scheduling or worker count.
The bit generator is numpy's counter-based Philox, keyed through
SeedSequence([seed, stream_id, *path]).
"""

from __future__ import annotations

import numpy as np

GENERATOR_NAME = "numpy.random.Philox(SeedSequence([seed, stream, *path]))"

# Fixed substream identifiers; never renumber, they are part of the
# reproducibility contract of emitted artifacts.
STREAMS = {
    "fit-init": 0,
    "cv": 1,
    "bootstrap": 2,
    "simulate": 3,
}


def substream(seed: int, stream: str, *path: int) -> np.random.Generator:
    """Generator for the named substream at an integer path (e.g. repeat, fold)."""
    if stream not in STREAMS:
        raise KeyError(f"unknown stream {stream!r}; known: {sorted(STREAMS)}")
    entropy = [int(seed), STREAMS[stream], *[int(p) for p in path]]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
