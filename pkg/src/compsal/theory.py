"""Monte-Carlo model of why competition thins random maps but not trained ones.

Two gradients ``g1 = (h1, xi1)`` and ``g2 = (h2, xi2)`` share their first
half ("shared features", with ``h1 . h2 = overlap``) and have independent
second halves. Every half-vector is a unit vector. The input ``x`` is a
N(0, 1/n) Gaussian conditioned on ``g1 . x = delta``: the boundary slice of
the event ``g1 . x >= delta``, which is where that event's mass concentrates
when ``delta`` is many standard deviations out.

After competition of ``g1 * x`` against ``g2 * x``, ``c1`` and ``c2`` are the
retained sums over the shared and the independent half, in units of
``delta / 2``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Sequence

import numpy as np

DEFAULT_DELTAS = (0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)


@dataclass
class TheoryConfig:
    n: int = 10000
    delta: float = 0.15
    overlap: float = 0.5
    trials: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise ValueError(f"n must be a positive even integer, got {self.n}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not 0 <= self.overlap <= 1:
            raise ValueError(f"overlap must lie in [0, 1], got {self.overlap}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")


class ModelSample(NamedTuple):
    g1: np.ndarray
    g2: np.ndarray
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray


class CompetitionScore(NamedTuple):
    c1: float
    c2: float
    survivors: np.ndarray


def _unit(rng, m):
    v = rng.standard_normal(m)
    return v / np.linalg.norm(v)


def sample_model(cfg: TheoryConfig, trial: int) -> ModelSample:
    """Draw (g1, g2, x) for one trial; the generator is seeded by (cfg.seed, trial)."""
    rng = np.random.default_rng([int(cfg.seed), int(trial)])
    m = cfg.n // 2
    h1 = _unit(rng, m)
    u = rng.standard_normal(m)
    u -= (u @ h1) * h1
    u /= np.linalg.norm(u)
    h2 = cfg.overlap * h1 + np.sqrt(1.0 - cfg.overlap ** 2) * u
    xi1 = _unit(rng, m)
    xi2 = _unit(rng, m)
    g1 = np.concatenate([h1, xi1])
    g2 = np.concatenate([h2, xi2])
    z = rng.normal(0.0, 1.0 / np.sqrt(cfg.n), size=cfg.n)
    gg = g1 @ g1
    x = z - (g1 @ z) / gg * g1 + cfg.delta / gg * g1
    return ModelSample(g1, g2, x, h1, h2)


def compete_and_score(g1, g2, x, delta: float) -> CompetitionScore:
    """Zero the coordinates of ``g1 * x`` that ``g2 * x`` wins, then sum each half."""
    g1, g2, x = (np.asarray(v, dtype=np.float64) for v in (g1, g2, x))
    if not (g1.shape == g2.shape == x.shape) or g1.ndim != 1:
        raise ValueError(f"dimension mismatch: {g1.shape}, {g2.shape}, {x.shape}")
    s = g1 * x
    t = g2 * x
    survivors = ((s > 0) & (s >= t)) | ((s < 0) & (s <= t))
    kept = np.where(survivors, s, 0.0)
    half = len(s) // 2
    scale = delta / 2.0
    return CompetitionScore(kept[:half].sum() / scale, kept[half:].sum() / scale, survivors)


def _mean_stderr(values):
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values)))


@dataclass
class TheoryResult:
    config: TheoryConfig
    shared_dot_g1: tuple
    shared_dot_g2: tuple
    c1: tuple
    c2: tuple
    survival_shared: tuple
    survival_independent: tuple

    def csv_row(self):
        return [repr(self.config.delta), repr(self.c1[0]), repr(self.c1[1]),
                repr(self.c2[0]), repr(self.c2[1])]


def run_theory(cfg: TheoryConfig) -> TheoryResult:
    """Average the model over ``cfg.trials`` independent trials (mean, stderr)."""
    rows = []
    half = cfg.n // 2
    for trial in range(cfg.trials):
        smp = sample_model(cfg, trial)
        score = compete_and_score(smp.g1, smp.g2, smp.x, cfg.delta)
        rows.append((smp.h1 @ smp.x[:half], smp.h2 @ smp.x[:half], score.c1, score.c2,
                     score.survivors[:half].mean(), score.survivors[half:].mean()))
    cols = [_mean_stderr(c) for c in zip(*rows)]
    return TheoryResult(cfg, *cols)


def theory_grid(deltas: Sequence[float] = DEFAULT_DELTAS, n: int = 10000, trials: int = 100,
                overlap: float = 0.5, seed: int = 0) -> List[TheoryResult]:
    return [run_theory(TheoryConfig(n=n, delta=d, overlap=overlap, trials=trials, seed=seed))
            for d in deltas]


CSV_HEADER = ["delta", "c1_mean", "c1_stderr", "c2_mean", "c2_stderr"]


def results_to_csv(results: Sequence[TheoryResult], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in results:
        w.writerow(r.csv_row())
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def survival_fraction_iid(k: int, d: int, trials: int = 1, seed: int = 0, signed: bool = False) -> float:
    """Fraction of coordinates label 0 wins among ``k`` i.i.d. vote vectors.

    By default votes are magnitudes ``|N(0, 1)|``: every label pushes the same
    way and only the highest vote wins, so the answer tends to ``1/k``. With
    ``signed=True`` votes are ``N(0, 1)`` and a label also wins by casting the
    lowest negative vote, which gives ``(2/k) * (1 - 2**-k)``.
    """
    if k < 1 or d < 1 or trials < 1:
        raise ValueError("k, d and trials must all be at least 1")
    if k == 1:
        return 1.0
    rng = np.random.default_rng(seed)
    won = 0
    chunk = max(1, 2_000_000 // k)
    for _ in range(trials):
        for start in range(0, d, chunk):
            m = min(chunk, d - start)
            votes = rng.standard_normal((k, m))
            if not signed:
                np.abs(votes, out=votes)
            s = votes[0]
            others = votes[1:]
            won += int(np.count_nonzero(((s > 0) & (s >= others.max(axis=0))) |
                                        ((s < 0) & (s <= others.min(axis=0)))))
    return won / (d * trials)


def signed_survival_probability(k: int) -> float:
    """Exact survival probability under signed Gaussian votes."""
    if k == 1:
        return 1.0
    return 2.0 / k * (1.0 - 2.0 ** -k)
