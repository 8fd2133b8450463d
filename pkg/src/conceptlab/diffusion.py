"""Exact variance-preserving diffusion over mixture worlds.

The forward process is x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps, so
every noised marginal of a Gaussian mixture is again a Gaussian mixture
with the same weights, means scaled by sqrt(abar_t) and covariances
abar_t * Sigma + (1 - abar_t) * I.  Densities and scores are therefore
available in closed form, which makes the whole sampler checkable: no
learned denoiser stands between a claim and its verification.

Reverse sampling uses the eta-interpolated family: eta=0 is the
deterministic update, eta=1 matches ancestral sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from . import rng
from .errors import BadParameter
from .worlds import ConceptWorld, tilted_conditional

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# mixtures
# ---------------------------------------------------------------------------

class Mixture:
    """Gaussian mixture with cached factorizations.

    Weights may include exact zeros (dropped components of a conditioned
    world); they are handled in log space and never contribute to
    densities, scores or responsibilities.
    """

    def __init__(self, weights: np.ndarray, means: np.ndarray, covs: np.ndarray):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.covs = np.asarray(covs, dtype=float)
        self.k, self.dim = self.means.shape
        with np.errstate(divide="ignore"):
            self._log_w = np.log(self.weights)
        self._chol = [cho_factor(self.covs[i], lower=True) for i in range(self.k)]
        self._log_norm = np.array(
            [
                -0.5 * self.dim * LOG_2PI - np.log(np.diag(self._chol[i][0])).sum()
                for i in range(self.k)
            ]
        )

    @classmethod
    def from_world(cls, world: ConceptWorld) -> "Mixture":
        return cls(world.weights, world.means, world.covs)

    def _component_logpdf(self, x: np.ndarray) -> np.ndarray:
        """Per-component log densities; x (n, d) -> (k, n)."""
        out = np.empty((self.k, x.shape[0]))
        for i in range(self.k):
            diff = (x - self.means[i]).T                      # (d, n)
            z = cho_solve(self._chol[i], diff)                # Sigma^-1 (x - mu), (d, n)
            out[i] = self._log_norm[i] - 0.5 * np.sum(diff * z, axis=0)
        return out

    def _weighted_logpdf(self, x: np.ndarray) -> np.ndarray:
        return self._log_w[:, None] + self._component_logpdf(x)

    def log_density(self, x: np.ndarray) -> np.ndarray | float:
        """log p(x) via log-sum-exp; stable far into the tails."""
        x2, single = _as_batch(x, self.dim)
        val = logsumexp(self._weighted_logpdf(x2), axis=0)
        return float(val[0]) if single else val

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        """Posterior component probabilities; (n, d) -> (k, n)."""
        x2, single = _as_batch(x, self.dim)
        lw = self._weighted_logpdf(x2)
        lw -= logsumexp(lw, axis=0)
        r = np.exp(lw)
        return r[:, 0] if single else r

    def posterior_argmax(self, x: np.ndarray):
        """Index of the most responsible component (lowest index on ties).

        Invariant to rescaling all weights by a positive constant, since
        only log-weight differences enter the comparison.
        """
        x2, single = _as_batch(x, self.dim)
        idx = np.argmax(self._weighted_logpdf(x2), axis=0)
        return int(idx[0]) if single else idx

    def score(self, x: np.ndarray) -> np.ndarray:
        """Exact gradient of log_density: sum_k r_k Sigma_k^-1 (mu_k - x)."""
        x2, single = _as_batch(x, self.dim)
        r = self.responsibilities(x2)                         # (k, n)
        out = np.zeros_like(x2)
        for i in range(self.k):
            if self.weights[i] == 0.0:
                continue
            diff = (self.means[i] - x2).T                     # (d, n)
            out += (r[i][:, None]) * cho_solve(self._chol[i], diff).T
        return out[0] if single else out


def _as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (dim,):
            raise BadParameter(f"point must have dimension {dim}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise BadParameter(f"batch must have shape (n, {dim})")
    return arr, False


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha_bar: np.ndarray       # length T+1, alpha_bar[0] == 1, strictly decreasing
    kind: str

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=float)
        object.__setattr__(self, "alpha_bar", ab)
        if ab.shape != (self.T + 1,):
            raise BadParameter("alpha_bar must have length T+1")
        if ab[0] != 1.0:
            raise BadParameter("alpha_bar[0] must be exactly 1")
        if not np.all(np.diff(ab) < 0):
            raise BadParameter("alpha_bar must be strictly decreasing")
        if ab[-1] < 1e-6:
            raise BadParameter("alpha_bar[T] must be >= 1e-6")


def make_schedule(kind: str, T: int, alpha_bar_min: float = 1e-4) -> NoiseSchedule:
    """Discrete forward-process coefficients for t = 0..T.

    linear_alpha_bar: abar_t = 1 - (1 - alpha_bar_min) * t / T.
    cosine: squared-cosine profile rescaled to abar_0 = 1, floored at
    alpha_bar_min (with a tiny ramp so the sequence stays strictly
    decreasing once the floor engages).
    """
    if T < 2:
        raise BadParameter("T must be >= 2")
    if not (0.0 < alpha_bar_min < 1.0):
        raise BadParameter("alpha_bar_min must lie in (0, 1)")
    t = np.arange(T + 1, dtype=float)
    if kind == "linear_alpha_bar":
        ab = 1.0 - (1.0 - alpha_bar_min) * t / T
    elif kind == "cosine":
        s = 0.008
        f = np.cos((t / T + s) / (1.0 + s) * math.pi / 2.0) ** 2
        ab = f / f[0]
        floor = alpha_bar_min * (1.0 + 1e-9 * (T - t))
        ab = np.maximum(ab, floor)
        ab[0] = 1.0
    else:
        raise BadParameter(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(T=T, alpha_bar=ab, kind=kind)


def marginal_params(world: ConceptWorld, schedule: NoiseSchedule, t: int) -> Mixture:
    """Mixture of the forward marginal at time t (weights unchanged)."""
    if not (0 <= t <= schedule.T):
        raise BadParameter(f"t must lie in [0, {schedule.T}]")
    return _marginal(Mixture.from_world(world), float(schedule.alpha_bar[t]))


def _marginal(data: Mixture, abar: float) -> Mixture:
    if abar == 1.0:
        return data
    eye = np.eye(data.dim)
    means = math.sqrt(abar) * data.means
    covs = abar * data.covs + (1.0 - abar) * eye
    return Mixture(data.weights, means, covs)


# ---------------------------------------------------------------------------
# reverse steps
# ---------------------------------------------------------------------------

def denoise_step(
    x_t: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    mixture_t: Mixture,
    eta: float,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One reverse step t -> t-1 using the exact score of the t-marginal.

    eps_hat = -sqrt(1 - abar_t) * score(x_t); x0_hat follows from the
    forward identity; the update interpolates between the deterministic
    (eta=0) and ancestral (eta=1) kernels.  ``noise`` must be standard
    normal of x_t's shape when eta > 0.
    """
    if not (1 <= t <= schedule.T):
        raise BadParameter(f"t must lie in [1, {schedule.T}]")
    if not (0.0 <= eta <= 1.0):
        raise BadParameter("eta must lie in [0, 1]")
    a_t = float(schedule.alpha_bar[t])
    a_prev = float(schedule.alpha_bar[t - 1])

    s = mixture_t.score(x_t)
    eps_hat = -math.sqrt(1.0 - a_t) * s
    x0_hat = (x_t - math.sqrt(1.0 - a_t) * eps_hat) / math.sqrt(a_t)

    sigma = eta * math.sqrt((1.0 - a_prev) / (1.0 - a_t)) * math.sqrt(1.0 - a_t / a_prev)
    dir_coef = math.sqrt(max(1.0 - a_prev - sigma**2, 0.0))
    x_prev = math.sqrt(a_prev) * x0_hat + dir_coef * eps_hat
    if sigma > 0.0:
        if noise is None:
            raise BadParameter("eta > 0 requires noise")
        x_prev = x_prev + sigma * noise
    return x_prev


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """States of one reverse run, ordered from t=T down."""

    ts: np.ndarray              # strictly decreasing, ts[0] == T
    states: np.ndarray          # (len(ts), dim)
    seed: int
    prompt: frozenset

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class PreparatoryList:
    """Per-step latents of a recorded batch, shared schedule and prompt.

    ``states[j]`` holds the whole batch at time ``ts[j]``; ``ts`` runs
    from T down to 0, so resuming a run is a slice, not a re-simulation.
    """

    ts: np.ndarray              # (T+1,), T..0
    states: np.ndarray          # (T+1, n, dim)
    schedule: NoiseSchedule
    prompt: frozenset
    lam: float
    eta: float
    root_seed: int

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def state_at(self, t: int) -> np.ndarray:
        j = self.schedule.T - t
        if not (0 <= j < len(self.ts)):
            raise BadParameter(f"t={t} outside recorded range")
        return self.states[j]

    @property
    def endpoints(self) -> np.ndarray:
        return self.states[-1]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.ts.copy(), self.states[:, i, :].copy(), self.root_seed, self.prompt)


def _prompt_key(prompt: Iterable) -> frozenset:
    from .worlds import _concept_name

    return frozenset(_concept_name(c) for c in prompt)


def _run_reverse(
    marginals: list,
    schedule: NoiseSchedule,
    eta: float,
    x_start: np.ndarray,
    t_start: int,
    noise: Optional[np.ndarray],
    record: Optional[np.ndarray],
) -> np.ndarray:
    """Iterate denoise_step from t_start down to 0; returns the endpoints."""
    x = x_start
    for t in range(t_start, 0, -1):
        step_noise = noise[t_start - t] if noise is not None else None
        x = denoise_step(x, t, schedule, marginals[t], eta, step_noise)
        if record is not None:
            record[schedule.T - (t - 1)] = x
    return x


def time_marginals(world: ConceptWorld, schedule: NoiseSchedule) -> list:
    """Precomputed noised mixtures for every t; index by t."""
    data = Mixture.from_world(world)
    return [_marginal(data, float(ab)) for ab in schedule.alpha_bar]


def sample_batch(
    world: ConceptWorld,
    prompt: Iterable,
    lam: float,
    schedule: NoiseSchedule,
    eta: float,
    seed: int,
    n: int,
    record: bool = False,
) -> PreparatoryList:
    """Reverse-sample a batch under the prompt-conditioned mixture.

    Initial latents come from N(0, I) (the world invariant keeps the true
    t=T marginal close).  Element i draws its own substream, so batches
    replay identically regardless of how the loop is executed.
    """
    if n < 1:
        raise BadParameter("batch size must be >= 1")
    tilted = tilted_conditional(world, prompt, lam)
    marginals = time_marginals(tilted, schedule)
    T = schedule.T

    x = rng.initial_latents(seed, n, world.dim)
    noise = rng.step_noise(seed, rng.SAMPLE_STEPS, (), n, T, world.dim) if eta > 0 else None

    states = np.empty((T + 1, n, world.dim)) if record else None
    if record:
        states[0] = x
    final = _run_reverse(marginals, schedule, eta, x, T, noise, states)
    if not record:
        states = np.stack([x, final])
    ts = np.arange(T, -1, -1) if record else np.array([T, 0])
    return PreparatoryList(
        ts=ts, states=states, schedule=schedule, prompt=_prompt_key(prompt),
        lam=lam, eta=eta, root_seed=seed,
    )


def sample_trajectory(
    world: ConceptWorld,
    prompt: Iterable,
    lam: float,
    schedule: NoiseSchedule,
    eta: float,
    seed: int,
    record: bool = True,
) -> Trajectory:
    """Single reverse run; with record=True all T+1 states are kept."""
    batch = sample_batch(world, prompt, lam, schedule, eta, seed, n=1, record=record)
    return batch.trajectory(0)


def resume_batch(
    world: ConceptWorld,
    prep: PreparatoryList,
    switch_t: int,
    prompt: Iterable,
    lam: float,
    noise_key: tuple = (),
) -> np.ndarray:
    """Denoise recorded states at ``switch_t`` down to 0 under a new prompt.

    Step noise is keyed by (root seed, RESUME_STEPS, *noise_key, element),
    so distinct resume attempts never share noise yet replay exactly.
    """
    schedule = prep.schedule
    if not (0 <= switch_t <= schedule.T):
        raise BadParameter(f"switch_t must lie in [0, {schedule.T}]")
    x = prep.state_at(switch_t).copy()
    if switch_t == 0:
        return x
    tilted = tilted_conditional(world, prompt, lam)
    marginals = time_marginals(tilted, schedule)
    noise = None
    if prep.eta > 0:
        noise = rng.step_noise(
            prep.root_seed, rng.RESUME_STEPS, tuple(noise_key), prep.n, switch_t, world.dim
        )
    return _run_reverse(marginals, schedule, prep.eta, x, switch_t, noise, None)
