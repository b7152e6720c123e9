"""One-dimensional two-class model of a classifier boundary helped by a nearest neighbor.

Positions are uniform on [0, 1]. Under the skewed-triangular distribution a point
at x is blue with probability 1 - x, so the optimal boundary is 0.5; under the
uniform distribution every point is blue with probability 0.5.

A learned boundary that missed the optimum by an offset ``c`` sits at
``0.5 - c``. There the simple classifier is undecided (``c_s = 0.5``), while the
nearest training point is blue with probability ``0.5 + c``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

OPTIMAL_BOUNDARY = 0.5


class ToyDistribution(str, enum.Enum):
    SKEWED_TRIANGULAR = "skewed"
    UNIFORM = "uniform"

    def p_blue(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self is ToyDistribution.SKEWED_TRIANGULAR:
            return 1.0 - x
        return np.full_like(x, 0.5)


@dataclass(frozen=True)
class ToyModelConfig:
    distribution: ToyDistribution = ToyDistribution.SKEWED_TRIANGULAR
    c: float = 0.1
    d: float = 0.02
    a: float = 0.02
    w_q: float = 0.75
    n: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "distribution", ToyDistribution(self.distribution))
        b = self.boundary
        if self.d <= 0 or self.a <= 0:
            raise ValueError("d and a must be > 0")
        for half, name in ((self.d, "d"), (self.a, "a")):
            if not (0.0 < b - half and b + half < 1.0):
                raise ValueError(f"[boundary - {name}, boundary + {name}] must lie inside (0, 1)")
        if not 0.5 < self.w_q <= 1.0:
            raise ValueError("w_q must lie in (0.5, 1]")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def boundary(self) -> float:
        """Position of the learned boundary: the optimum shifted by ``-c``."""
        return OPTIMAL_BOUNDARY - self.c

    @property
    def analytic(self) -> float:
        """Probability that the nearest neighbor of a boundary query is blue."""
        if self.distribution is ToyDistribution.UNIFORM:
            return 0.5
        return 1.0 - self.boundary


def c_s(x, center: float, d: float):
    """Piecewise-linear stand-in for a logistic regressor with boundary at `center`."""
    x = np.asarray(x, dtype=np.float64)
    out = np.clip(0.5 * (1.0 + (x - center) / d), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def nearest_position(x: float, positions) -> float:
    pos = np.asarray(positions, dtype=np.float64)
    if pos.size == 0:
        raise ValueError("need at least one training point")
    dist = np.abs(pos - x)
    # ties go to the smaller position
    return float(pos[dist == dist.min()].min())


def c_nn(x: float, positions, distribution=ToyDistribution.SKEWED_TRIANGULAR) -> float:
    """Class-blue probability at the nearest training position (labels are not used)."""
    return float(ToyDistribution(distribution).p_blue(nearest_position(x, positions)))


def c_la(x: float, center: float, d: float, positions, w_q: float,
         distribution=ToyDistribution.SKEWED_TRIANGULAR) -> float:
    return w_q * c_s(x, center, d) + (1.0 - w_q) * c_nn(x, positions, distribution)


@dataclass(frozen=True)
class NNBlueEstimate:
    c: float
    d: float
    a: float
    # conditioned trials (nearest neighbor within `a` of the query)
    n_trials: int
    # raw trials drawn to collect them
    n_drawn: int
    mc_estimate: float
    mc_stderr: float
    analytic: float

    def within(self, sigmas: float = 3.0) -> bool:
        return abs(self.mc_estimate - self.analytic) <= sigmas * self.mc_stderr


def estimate_nn_blue_prob(config: ToyModelConfig, n_trials: int = 100_000,
                          query: Optional[float] = None, chunk: int = 4096,
                          max_draws: Optional[int] = None) -> NNBlueEstimate:
    """Monte-Carlo probability that a boundary query's nearest neighbor is blue.

    A trial draws ``config.n`` uniform training positions and counts only if the
    nearest one lies within ``a`` of the query; that neighbor's class is then
    drawn. Trials are generated in chunks, chunk ``i`` using the stream
    ``SeedSequence(config.seed, spawn_key=(i,))``, until exactly `n_trials`
    conditioned trials are collected.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    q = config.boundary if query is None else float(query)
    if max_draws is None:
        max_draws = 1000 * n_trials
    kept = 0
    blue = 0
    drawn = 0
    i = 0
    while kept < n_trials:
        if drawn >= max_draws:
            raise RuntimeError(
                f"only {kept} of {drawn} trials had a neighbor within a={config.a}; raise n or a"
            )
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(i,)))
        i += 1
        pos = rng.random((chunk, config.n))
        dist = np.abs(pos - q)
        dmin = dist.min(axis=1, keepdims=True)
        nn = np.where(dist == dmin, pos, np.inf).min(axis=1)
        ok = dmin[:, 0] <= config.a
        is_blue = rng.random(chunk) < config.distribution.p_blue(nn)
        idx = np.flatnonzero(ok)[: n_trials - kept]
        kept += idx.size
        blue += int(is_blue[idx].sum())
        # trials consumed up to and including the last one kept
        drawn += chunk if kept < n_trials else int(idx[-1]) + 1
    p = blue / kept
    return NNBlueEstimate(
        c=config.c, d=config.d, a=config.a, n_trials=kept, n_drawn=drawn,
        mc_estimate=p, mc_stderr=float(np.sqrt(p * (1.0 - p) / kept)),
        analytic=config.analytic,
    )


def fit_threshold(positions, is_blue) -> float:
    """Threshold t (blue below, red above) with fewest training errors.

    Candidates are 0, 1 and midpoints between consecutive sorted positions;
    ties go to the candidate closest to 0.5, then to the smaller one.
    """
    x = np.asarray(positions, dtype=np.float64)
    b = np.asarray(is_blue, dtype=bool)
    order = np.argsort(x, kind="stable")
    x, b = x[order], b[order]
    n = x.size
    if n == 0:
        raise ValueError("need at least one point")
    cand = np.concatenate(([0.0], 0.5 * (x[:-1] + x[1:]), [1.0]))
    red_left = np.concatenate(([0], np.cumsum(~b)))
    blue_right = b.sum() - np.concatenate(([0], np.cumsum(b)))
    errors = red_left + blue_right
    best = np.flatnonzero(errors == errors.min())
    pick = min(best.tolist(), key=lambda j: (abs(cand[j] - OPTIMAL_BOUNDARY), cand[j]))
    return float(cand[pick])


def sample_points(n: int, distribution, rng) -> tuple[np.ndarray, np.ndarray]:
    x = rng.random(n)
    return x, rng.random(n) < ToyDistribution(distribution).p_blue(x)


@dataclass(frozen=True)
class DriftRow:
    n: int
    seeds: int
    median_abs_offset: float


def boundary_drift(distribution, n_values: Iterable[int], seeds: Sequence[int]) -> list[DriftRow]:
    """Median |fitted threshold - 0.5| over seeds, for each training-set size."""
    rows = []
    for n in n_values:
        if n < 2:
            raise ValueError("each n must be >= 2")
        offs = []
        for s in seeds:
            rng = np.random.default_rng(np.random.SeedSequence([int(s), int(n)]))
            x, blue = sample_points(n, distribution, rng)
            offs.append(abs(fit_threshold(x, blue) - OPTIMAL_BOUNDARY))
        rows.append(DriftRow(int(n), len(seeds), float(np.median(offs))))
    return rows


def estimates_csv(estimates: Sequence[NNBlueEstimate]) -> str:
    lines = ["c,d,a,n_trials,mc_estimate,mc_stderr,analytic"]
    for e in estimates:
        lines.append(f"{e.c!r},{e.d!r},{e.a!r},{e.n_trials},{e.mc_estimate:.10f},"
                     f"{e.mc_stderr:.10f},{e.analytic:.10f}")
    return "\n".join(lines) + "\n"


def drift_csv(rows: Sequence[DriftRow]) -> str:
    lines = ["n,seeds,median_abs_offset"]
    lines += [f"{r.n},{r.seeds},{r.median_abs_offset:.10f}" for r in rows]
    return "\n".join(lines) + "\n"
