"""Synthetic concept universes.

A world is a Gaussian mixture whose components carry concept tags.  The
weights encode the co-occurrence bias of a pretend training distribution:
a content tag may sit almost exclusively next to some latent companion tag
(e.g. a drink that nearly always appears in glassware), with only a sliver
of mass on the combination a prompt actually asks for.

Prompt conditioning is an exponential tilt: components sharing no tag with
the prompt are dropped, and the survivors are reweighted by
``exp(lambda * overlap)`` where ``overlap`` counts shared tags.  Exact
Bayesian restriction could never lose a requested concept, so the tilt is
what lets the lab reproduce the dropout failure; ``lambda`` controls how
literal the conditioning is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    BadParameter,
    EmptySupport,
    NonPositiveWeight,
    NonSPDCovariance,
    UnknownConcept,
    UnknownTagInConcept,
)

MAX_MEAN_NORM = 10.0          # keeps the fully-noised marginal near N(0, I)
WEIGHT_SUM_TOL = 1e-6


class ConceptClass(str, Enum):
    CONTENT = "Content"
    CONTAINER = "Container"
    BACKGROUND = "Background"
    LOCATION = "Location"
    STORAGE = "Storage"
    OTHER = "Other"


# Classes that a painter lays down before the other concept.
DRAW_FIRST_CLASSES = frozenset(
    {ConceptClass.CONTAINER, ConceptClass.BACKGROUND, ConceptClass.LOCATION, ConceptClass.STORAGE}
)


@dataclass(frozen=True)
class ConceptId:
    name: str
    concept_class: ConceptClass


@dataclass(frozen=True)
class ConceptSpec:
    id: ConceptId
    primary_tags: frozenset
    description_tags: frozenset
    description_text: str = ""

    @property
    def name(self) -> str:
        return self.id.name


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray
    tags: frozenset

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))


@dataclass(frozen=True)
class ConceptWorld:
    dim: int
    components: tuple
    concepts: Mapping[str, ConceptSpec]
    lambda_default: float = 1.0

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @property
    def covs(self) -> np.ndarray:
        return np.stack([c.cov for c in self.components])

    def concept(self, name: str) -> ConceptSpec:
        try:
            return self.concepts[name]
        except KeyError:
            raise UnknownConcept(f"concept {name!r} is not registered in this world") from None


ConceptLike = Union[str, ConceptId, ConceptSpec]


def _concept_name(c: ConceptLike) -> str:
    if isinstance(c, ConceptSpec):
        return c.id.name
    if isinstance(c, ConceptId):
        return c.name
    return c


def resolve_concept(world: ConceptWorld, c: ConceptLike) -> ConceptSpec:
    return world.concept(_concept_name(c))


# ---------------------------------------------------------------------------
# construction & validation
# ---------------------------------------------------------------------------

def _as_cov(raw, dim: int) -> np.ndarray:
    """Accept a scalar, a diagonal, or a full row-major matrix."""
    if np.isscalar(raw):
        return float(raw) * np.eye(dim)
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (dim,):
            raise BadParameter(f"diagonal covariance must have length {dim}")
        return np.diag(arr)
    if arr.shape != (dim, dim):
        raise BadParameter(f"covariance must be {dim}x{dim}, got {arr.shape}")
    return arr


def _check_spd(cov: np.ndarray, index: int) -> None:
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise NonSPDCovariance(f"component {index}: covariance is not symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NonSPDCovariance(f"component {index}: covariance is not positive definite") from None


def build_world(config: Mapping) -> ConceptWorld:
    """Validate a world description and return an immutable world.

    ``config`` carries ``dim``, ``components`` (weight, mean, cov, tags),
    ``concepts`` and ``lambda_default``.  Weights must sum to 1 within
    1e-6 and are renormalized exactly; looser sums are rejected rather
    than silently fixed.
    """
    dim = int(config["dim"])
    if dim < 1:
        raise BadParameter("dim must be >= 1")
    lam = float(config.get("lambda_default", 1.0))
    if not math.isfinite(lam) or lam < 0:
        raise BadParameter("lambda_default must be finite and >= 0")

    raw_components = config["components"]
    if not raw_components:
        raise BadParameter("world needs at least one component")

    weights = []
    comps = []
    for i, rc in enumerate(raw_components):
        w = float(rc["weight"])
        if w <= 0:
            raise NonPositiveWeight(f"component {i}: weight {w} is not positive")
        mean = np.asarray(rc["mean"], dtype=float)
        if mean.shape != (dim,):
            raise BadParameter(f"component {i}: mean must have length {dim}")
        if np.abs(mean).max() > MAX_MEAN_NORM:
            raise BadParameter(
                f"component {i}: |mean| exceeds {MAX_MEAN_NORM}; the fully-noised "
                "marginal would drift too far from the standard normal"
            )
        cov = _as_cov(rc["cov"], dim)
        _check_spd(cov, i)
        tags = frozenset(rc["tags"])
        if not tags:
            raise BadParameter(f"component {i}: tags must be nonempty")
        weights.append(w)
        comps.append((mean, cov, tags))

    total = sum(weights)
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise WeightSumMismatch(f"component weights sum to {total}, expected 1 within {WEIGHT_SUM_TOL}")
    weights = [w / total for w in weights]

    all_tags = frozenset().union(*(tags for _, _, tags in comps))
    concepts = {}
    for rc in config.get("concepts", []):
        cid = ConceptId(str(rc["name"]), ConceptClass(rc["class"]))
        if not cid.name:
            raise BadParameter("concept name must be nonempty")
        if cid.name in concepts:
            raise BadParameter(f"duplicate concept name {cid.name!r}")
        primary = frozenset(rc["primary_tags"])
        description = frozenset(rc.get("description_tags", primary))
        if not primary:
            raise BadParameter(f"concept {cid.name!r}: primary_tags must be nonempty")
        if not primary <= description:
            raise BadParameter(f"concept {cid.name!r}: primary_tags must be a subset of description_tags")
        if not primary & all_tags:
            raise UnknownTagInConcept(
                f"concept {cid.name!r}: no component carries any of its primary tags"
            )
        concepts[cid.name] = ConceptSpec(cid, primary, description, str(rc.get("description_text", "")))

    components = tuple(
        MixtureComponent(w, mean, cov, tags) for w, (mean, cov, tags) in zip(weights, comps)
    )
    return ConceptWorld(dim=dim, components=components, concepts=concepts, lambda_default=lam)


# ---------------------------------------------------------------------------
# prompt conditioning
# ---------------------------------------------------------------------------

def prompt_tags(world: ConceptWorld, prompt: Iterable[ConceptLike]) -> frozenset:
    """Union of primary tags over the prompt's concepts."""
    tags = frozenset()
    for c in prompt:
        tags |= resolve_concept(world, c).primary_tags
    return tags


def tilted_weights(world: ConceptWorld, prompt: Iterable[ConceptLike], lam: float) -> np.ndarray:
    """Conditioned component weights, aligned with ``world.components``.

    Components sharing no tag with the prompt get weight 0; the rest are
    reweighted by exp(lam * overlap) and renormalized.  Computed in log
    space so large lam cannot overflow.
    """
    if not math.isfinite(lam):
        raise BadParameter("lambda must be finite")
    ptags = prompt_tags(world, prompt)
    overlaps = np.array([len(c.tags & ptags) for c in world.components], dtype=float)
    if not overlaps.any():
        raise EmptySupport(f"no component shares a tag with prompt {sorted(ptags)}")
    with np.errstate(divide="ignore"):
        logw = np.log(world.weights) + lam * overlaps
    logw[overlaps == 0] = -np.inf
    logw -= np.max(logw)
    w = np.exp(logw)
    return w / w.sum()


def tilted_conditional(world: ConceptWorld, prompt: Iterable[ConceptLike], lam: float) -> ConceptWorld:
    """World with conditioned weights; geometry and registry unchanged."""
    w = tilted_weights(world, prompt, lam)
    components = tuple(
        MixtureComponent(float(wk), c.mean, c.cov, c.tags)
        for wk, c in zip(w, world.components)
    )
    return ConceptWorld(world.dim, components, world.concepts, world.lambda_default)


# ---------------------------------------------------------------------------
# exact inspection oracle
# ---------------------------------------------------------------------------

def assign_component(world: ConceptWorld, x: np.ndarray) -> int:
    """Most responsible component of the unbiased world at x.

    Ties break to the lowest index so golden tests stay deterministic.
    """
    from .diffusion import Mixture  # local import to avoid a cycle

    return int(Mixture.from_world(world).posterior_argmax(np.asarray(x, dtype=float)))


def is_correct(world: ConceptWorld, x: np.ndarray, pair: tuple) -> bool:
    """True iff x lands in a component carrying a primary tag of each concept."""
    a = resolve_concept(world, pair[0])
    b = resolve_concept(world, pair[1])
    tags = world.components[assign_component(world, x)].tags
    return bool(tags & a.primary_tags) and bool(tags & b.primary_tags)


def correct_rate(world: ConceptWorld, samples: np.ndarray, pair: tuple) -> float:
    """Fraction of batch samples whose component covers both concepts."""
    from .diffusion import Mixture

    a = resolve_concept(world, pair[0])
    b = resolve_concept(world, pair[1])
    idx = Mixture.from_world(world).posterior_argmax(np.asarray(samples, dtype=float))
    ok = np.array(
        [bool(world.components[k].tags & a.primary_tags) and bool(world.components[k].tags & b.primary_tags)
         for k in np.atleast_1d(idx)]
    )
    return float(ok.mean())


# ---------------------------------------------------------------------------
# canned worlds
# ---------------------------------------------------------------------------

def make_coke_world() -> ConceptWorld:
    """The calibrated 2-d reference world used across tests and benchmarks.

    One dominant component pairs the content tag with its latent companion
    (the "usual glassware"), one holds the bare container, and a 5% sliver
    holds the requested combination.  The biased component sits far from
    the pair region (container choice is a coarse feature, decided early in
    denoising), while the two container components differ only in a fine
    detail (their content), so a prompt switch can still steer between
    them late in the run.
    """
    return build_world(
        {
            "dim": 2,
            "lambda_default": 2.0,
            "components": [
                {"weight": 0.80, "mean": [-8.0, 0.0], "cov": 0.25, "tags": ["coke", "glass"]},
                {"weight": 0.15, "mean": [3.0, 1.0], "cov": [0.25, 0.09], "tags": ["teacup"]},
                {"weight": 0.05, "mean": [3.0, -1.0], "cov": [0.25, 0.09], "tags": ["coke", "teacup"]},
            ],
            "concepts": [
                {
                    "name": "iced coke",
                    "class": "Content",
                    "primary_tags": ["coke"],
                    "description_tags": ["coke", "glass"],
                    "description_text": "dark fizzy liquid over translucent ice",
                },
                {
                    "name": "tea cup",
                    "class": "Container",
                    "primary_tags": ["teacup"],
                    "description_tags": ["teacup"],
                    "description_text": "small ceramic cup with a handle",
                },
                {
                    "name": "glass",
                    "class": "Other",
                    "primary_tags": ["glass"],
                    "description_tags": ["glass"],
                    "description_text": "tall transparent drinking glass",
                },
            ],
        }
    )


def _slug(name: str) -> str:
    return name.strip().lower().replace(" ", "_")


def world_for_pair(
    a_name: str,
    b_name: str,
    a_class: ConceptClass = ConceptClass.CONTENT,
    b_class: ConceptClass = ConceptClass.CONTAINER,
    bias_ratio: float = 16.0,
    lam: float = 2.0,
    angle: float = 0.0,
) -> ConceptWorld:
    """Biased world for a mined concept pair.

    ``bias_ratio`` is weight(a with latent companion) / weight(a with b);
    the bare-b component keeps three times the joint mass, mirroring the
    reference world.  ``angle`` rotates the mode layout so suite worlds
    are not all congruent.
    """
    if bias_ratio <= 0:
        raise BadParameter("bias_ratio must be positive")
    joint = 1.0 / (bias_ratio + 4.0)
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    a_tag, b_tag = _slug(a_name), _slug(b_name)
    latent_tag = a_tag + "_companion"
    means = [rot @ np.array(m) for m in ([-8.0, 0.0], [3.0, 1.0], [3.0, -1.0])]
    fine = rot @ np.diag([0.25, 0.09]) @ rot.T    # container fixed early, content late
    return build_world(
        {
            "dim": 2,
            "lambda_default": lam,
            "components": [
                {"weight": bias_ratio * joint, "mean": means[0], "cov": 0.25, "tags": [a_tag, latent_tag]},
                {"weight": 3.0 * joint, "mean": means[1], "cov": fine, "tags": [b_tag]},
                {"weight": joint, "mean": means[2], "cov": fine, "tags": [a_tag, b_tag]},
            ],
            "concepts": [
                {"name": a_name, "class": a_class.value, "primary_tags": [a_tag]},
                {"name": b_name, "class": b_class.value, "primary_tags": [b_tag]},
            ],
        }
    )
