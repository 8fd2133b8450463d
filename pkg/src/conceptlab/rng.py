"""Seed derivation for reproducible parallel sampling.

One root seed drives a whole run.  Every independent consumer (batch
element, resume attempt, verification group, ...) gets its own substream
through ``numpy.random.SeedSequence`` spawn keys: the stream for purpose
``p`` with extras ``(k1, k2, ...)`` and element ``i`` is

    SeedSequence(entropy=root_seed, spawn_key=(p, k1, k2, ..., i))

Two rules keep reruns comparable across code paths:

* the initial latent of batch element ``i`` depends only on
  ``(root_seed, i)``, never on the prompt or the subcommand, so a resumed
  run at switch index 0 reproduces a plain run exactly when no step noise
  is drawn;
* per-step noise mixes in the purpose code (and the switch index for
  resumed runs) so different procedures never share step noise.
"""

from __future__ import annotations

import numpy as np

# Purpose codes (first spawn_key slot).
INIT_LATENT = 0
SAMPLE_STEPS = 1
RESUME_STEPS = 2
SEARCH = 3
VERIFY = 4
SUITE = 5


def substream(root_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (purpose, ..., element) slot."""
    if root_seed < 0:
        raise ValueError("root seed must be non-negative")
    return np.random.default_rng(np.random.SeedSequence(entropy=root_seed, spawn_key=key))


def derive_seed(root_seed: int, *key: int) -> int:
    """Fold a root seed and a key into a fresh non-negative integer seed."""
    if root_seed < 0:
        raise ValueError("root seed must be non-negative")
    state = np.random.SeedSequence(entropy=root_seed, spawn_key=key).generate_state(2, np.uint64)
    return int(state[0] ^ state[1])


def initial_latents(root_seed: int, n: int, dim: int) -> np.ndarray:
    """x_T draws for a batch, one substream per element; shape (n, dim)."""
    out = np.empty((n, dim))
    for i in range(n):
        out[i] = substream(root_seed, INIT_LATENT, i).standard_normal(dim)
    return out


def step_noise(root_seed: int, purpose: int, extras: tuple[int, ...],
               n: int, steps: int, dim: int) -> np.ndarray:
    """Per-step Gaussian noise for a batch; shape (steps, n, dim).

    Element i draws its whole noise path from one substream, so the same
    (root, purpose, extras) always replays identically regardless of batch
    evaluation order.
    """
    out = np.empty((steps, n, dim))
    for i in range(n):
        gen = substream(root_seed, purpose, *extras, i)
        out[:, i, :] = gen.standard_normal((steps, dim))
    return out
