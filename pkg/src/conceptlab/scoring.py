"""Concept fidelity scoring and disparity.

The analytic scorer replaces learned image-text metrics with the exact
posterior under the unbiased data mixture: the fidelity of a sample for a
tag set is the probability that the sample came from a component carrying
one of those tags.  Three layers build on it:

* concept score          s_c(x, tags)   in [0, 1]
* coordination score     s(x, c) = max(s_c on primary, s_c on description)
* disparity              d(x, a, b) = s(x, a) - s(x, b)   in [-1, 1]

The coordination max lets a concept's richer description rescue samples
where the bare tag set misses, and the signed disparity of a batch is the
control signal for the switch-step search.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .diffusion import Mixture
from .errors import BadParameter, EmptyBatch
from .worlds import ConceptLike, ConceptSpec, ConceptWorld, resolve_concept


def _tag_posterior(world: ConceptWorld, x: np.ndarray, tags: frozenset) -> np.ndarray:
    r = Mixture.from_world(world).responsibilities(np.atleast_2d(np.asarray(x, dtype=float)))
    match = np.array([bool(c.tags & tags) for c in world.components])
    return r[match].sum(axis=0) if match.any() else np.zeros(r.shape[1])


def concept_score(world: ConceptWorld, x: np.ndarray, tags: Iterable) -> np.ndarray | float:
    """Posterior mass of components sharing a tag with ``tags``.

    Accepts a single point (d,) or a batch (n, d); returns 0 when no
    component matches.
    """
    tagset = frozenset(tags)
    if not tagset:
        raise BadParameter("tags must be nonempty")
    arr = np.asarray(x, dtype=float)
    out = _tag_posterior(world, arr, tagset)
    return float(out[0]) if arr.ndim == 1 else out


def coordination_score(world: ConceptWorld, x: np.ndarray, concept: ConceptLike) -> np.ndarray | float:
    """Best of the concept's own score and its description's score."""
    spec = resolve_concept(world, concept)
    arr = np.asarray(x, dtype=float)
    primary = _tag_posterior(world, arr, spec.primary_tags)
    if spec.description_tags == spec.primary_tags:
        out = primary
    else:
        out = np.maximum(primary, _tag_posterior(world, arr, spec.description_tags))
    return float(out[0]) if arr.ndim == 1 else out


def disparity(world: ConceptWorld, x: np.ndarray, a: ConceptLike, b: ConceptLike) -> np.ndarray | float:
    """Signed coordination-score difference, antisymmetric in (a, b)."""
    arr = np.asarray(x, dtype=float)
    out = np.asarray(coordination_score(world, arr, a)) - np.asarray(coordination_score(world, arr, b))
    return float(out) if arr.ndim == 1 else out


@dataclass(frozen=True)
class DisparityReport:
    per_sample_d: np.ndarray
    mean_d: float
    s_a: float
    s_b: float
    n: int

    @property
    def mean_abs_d(self) -> float:
        """Mean of |per-sample disparity|; the benchmark-table metric."""
        return float(np.mean(np.abs(self.per_sample_d)))


def batch_disparity(world: ConceptWorld, samples: np.ndarray, a: ConceptLike, b: ConceptLike) -> DisparityReport:
    """Per-sample disparities plus batch means (mean_d == s_a - s_b)."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise EmptyBatch("batch_disparity needs a nonempty (n, d) batch")
    sa = np.asarray(coordination_score(world, arr, a))
    sb = np.asarray(coordination_score(world, arr, b))
    d = sa - sb
    return DisparityReport(
        per_sample_d=d, mean_d=float(d.mean()), s_a=float(sa.mean()), s_b=float(sb.mean()), n=arr.shape[0]
    )


# ---------------------------------------------------------------------------
# scorer adapter slot
# ---------------------------------------------------------------------------

class AnalyticScorer:
    """Default scorer: exact posterior under the unbiased world."""

    def __init__(self, world: ConceptWorld):
        self.world = world

    def evaluate(self, sample: np.ndarray, tags: Iterable) -> float:
        return float(concept_score(self.world, np.asarray(sample, dtype=float), tags))


_SCORERS: dict[str, Callable[[ConceptWorld], object]] = {"analytic": AnalyticScorer}


def register_scorer(name: str, factory: Callable[[ConceptWorld], object]) -> None:
    """Register a scorer factory under a config-addressable name."""
    _SCORERS[name] = factory


def make_scorer(name: str, world: ConceptWorld):
    try:
        factory = _SCORERS[name]
    except KeyError:
        raise BadParameter(f"unknown scorer {name!r}; registered: {sorted(_SCORERS)}") from None
    return factory(world)
