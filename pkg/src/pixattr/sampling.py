"""Samplers producing binary segment-perturbation matrices.

Row convention: entry (i, s) = 1 means sample i perturbs segment s. The
deterministic samplers place the all-zeros reference row first; attribution
code relies on that row for the unperturbed output Y.
"""

from __future__ import annotations

import hashlib
import itertools
import warnings

import numpy as np

from .core import SampleOrigin, SampleSet


def derive_seed(seed: int, image_id: str) -> int:
    """Stable per-image stream seed: blake2b-64 of "{seed}:{image_id}", little-endian.

    Documented so golden sample files can be reproduced outside this package.
    """
    digest = hashlib.blake2b(f"{seed}:{image_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def sample_only_one(n_segments: int) -> SampleSet:
    """All-zeros reference row, then each single-segment perturbation in index order."""
    if n_segments < 1:
        raise ValueError(f"n_segments must be >= 1, got {n_segments}")
    rows = np.zeros((n_segments + 1, n_segments), dtype=np.uint8)
    rows[1:] = np.eye(n_segments, dtype=np.uint8)
    return SampleSet(n_segments + 1, n_segments, rows, SampleOrigin.ONLY_ONE)


def sample_all_but_one(n_segments: int) -> SampleSet:
    """All-zeros reference row, then each sample keeping exactly one segment intact."""
    if n_segments < 1:
        raise ValueError(f"n_segments must be >= 1, got {n_segments}")
    rows = np.zeros((n_segments + 1, n_segments), dtype=np.uint8)
    rows[1:] = 1 - np.eye(n_segments, dtype=np.uint8)
    return SampleSet(n_segments + 1, n_segments, rows, SampleOrigin.ALL_BUT_ONE)


def sample_random(n_segments: int, n_samples: int, seed: int) -> SampleSet:
    """Each segment perturbed independently with probability 0.5.

    Uses the counter-based Philox generator keyed with the seed, so fixed
    seeds reproduce bit-identical sample sets across platforms. Rows are not
    deduplicated and the all-zeros reference is not forced in; callers get Y
    from a dedicated reference prediction instead.
    """
    if n_segments < 1:
        raise ValueError(f"n_segments must be >= 1, got {n_segments}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    rows = rng.integers(0, 2, size=(n_samples, n_segments), dtype=np.uint8)
    return SampleSet(n_samples, n_segments, rows, SampleOrigin.RANDOM, seed=int(seed))


def sample_entropic(n_segments: int, n_samples: int) -> SampleSet:
    """Deterministic rows in increasing order of perturbation entropy.

    Order: all-zeros, all-ones, then for c = 1, 2, ...: every row with exactly
    c segments perturbed (ascending lexicographic by segment index), then every
    row with exactly c segments unperturbed, skipping the second pass at the
    middle cardinality where it would repeat the first. Asking for more rows
    than the 2^n distinct ones truncates to the full enumeration, with a
    warning and a "truncated" meta flag.
    """
    if n_segments < 1:
        raise ValueError(f"n_segments must be >= 1, got {n_segments}")
    if n_samples < 2:
        raise ValueError(f"n_samples must be >= 2 to cover both anchors, got {n_samples}")
    full = 1 << n_segments
    meta = {}
    if n_samples > full:
        warnings.warn(
            f"entropic sampler asked for {n_samples} of {full} distinct samples; truncating",
            stacklevel=2,
        )
        meta["truncated"] = True
        n_samples = full

    rows = np.zeros((n_samples, n_segments), dtype=np.uint8)
    rows[1] = 1
    count = 2
    c = 1
    while count < n_samples and c <= n_segments - c:
        for combo in itertools.combinations(range(n_segments), c):
            if count >= n_samples:
                break
            rows[count, combo] = 1
            count += 1
        if c != n_segments - c:
            for combo in itertools.combinations(range(n_segments), c):
                if count >= n_samples:
                    break
                rows[count] = 1
                rows[count, combo] = 0
                count += 1
        c += 1
    return SampleSet(n_samples, n_segments, rows, SampleOrigin.ENTROPIC, meta=meta)
