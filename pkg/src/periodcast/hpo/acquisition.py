"""Expected improvement and the surrogate-driven suggestion step."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from ..errors import NumericError
from .gpr import GprPosterior, gpr_fit, gpr_predict
from .space import SearchSpace

log = logging.getLogger(__name__)


def expected_improvement(mu, sigma, best) -> np.ndarray:
    """Closed-form EI for minimization below the threshold ``best``.

    ``EI = (best - mu) Phi(z) + sigma phi(z)`` with ``z = (best - mu) / sigma``;
    where ``sigma == 0`` it is ``max(best - mu, 0)``.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gap = best - mu
    safe = np.where(sigma > 0, sigma, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        z = gap / safe
        ei = gap * norm.cdf(z) + sigma * norm.pdf(z)
    return np.maximum(np.where(sigma > 0, ei, np.maximum(gap, 0.0)), 0.0)


def posterior_ei(post: GprPosterior, h: np.ndarray, best: float) -> np.ndarray:
    mu, var = gpr_predict(post, h)
    return expected_improvement(mu, np.sqrt(var), best)


@dataclass
class Observation:
    """A finished trial as seen by a suggester: unit-cube point and loss."""

    point: np.ndarray
    loss: float


class RandomSuggester:
    """Uniform random suggestions; cheap enough for scheduler stress runs."""

    def __init__(self, space: SearchSpace, seed: int = 0):
        self.space = space
        self.rng = np.random.default_rng(seed)

    def suggest(self, completed: Sequence[Observation], pending: Sequence[np.ndarray]) -> dict:
        return self.space.from_unit(self.rng.random(self.space.dim))


class GpEiSuggester:
    """Quasi-random cold start, then the EI argmax of a refitted GP over a candidate set.

    Candidates are ``n_candidates`` scrambled Sobol points plus ``n_local``
    Gaussian perturbations of the incumbent, all snapped to admissible
    values.  Candidates within normalized distance ``exclusion`` of a pending
    trial get zero EI so concurrent workers do not duplicate each other.
    """

    def __init__(self, space: SearchSpace, seed: int = 0, n_init: int | None = None, n_candidates: int = 1024,
                 n_local: int = 128, local_sigma: float = 0.05, exclusion: float = 0.05):
        self.space = space
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.n_init = n_init if n_init is not None else max(4, space.dim + 1)
        self.n_candidates = n_candidates
        self.n_local = n_local
        self.local_sigma = local_sigma
        self.exclusion = exclusion
        self.issued = 0
        self.last_posterior: GprPosterior | None = None

    def initial_point(self, index: int) -> np.ndarray:
        return self.space.sobol(index + 1, self.seed)[index]

    def candidates(self, incumbent: np.ndarray | None) -> np.ndarray:
        pts = self.space.sobol(self.n_candidates, int(self.rng.integers(2 ** 31)))
        if incumbent is not None and self.n_local:
            local = incumbent + self.local_sigma * self.rng.standard_normal((self.n_local, self.space.dim))
            pts = np.vstack([pts, np.clip(local, 0.0, 1.0)])
        return self.space.snap(pts)

    def excluded(self, cand: np.ndarray, pending: Sequence[np.ndarray]) -> np.ndarray:
        mask = np.zeros(len(cand), dtype=bool)
        for p in pending:
            dist = np.linalg.norm(cand - p, axis=1) / np.sqrt(self.space.dim)
            mask |= dist < self.exclusion
        return mask

    def suggest(self, completed: Sequence[Observation], pending: Sequence[np.ndarray]) -> dict:
        index = self.issued
        self.issued += 1
        if len(completed) < self.n_init:
            return self.space.from_unit(self.initial_point(index))
        x = np.stack([o.point for o in completed])
        y = np.array([o.loss for o in completed])
        try:
            post = gpr_fit(x, y, rng=self.rng)
        except NumericError as e:
            log.warning("surrogate fit failed (%s); falling back to a random suggestion", e)
            return self.space.from_unit(self.rng.random(self.space.dim))
        self.last_posterior = post
        best = float(y.min())
        cand = self.candidates(x[int(np.argmin(y))])
        ei = posterior_ei(post, cand, best)
        ei[self.excluded(cand, pending)] = 0.0
        if ei.max() > 0:
            pick = int(np.argmax(ei))
        else:
            free = np.flatnonzero(~self.excluded(cand, pending))
            pick = int(free[0]) if len(free) else 0
        return self.space.from_unit(cand[pick])
