"""Monte-Carlo self-checks behind ``repsketch verify``.

Each suite draws fresh hash functions, compares empirical behaviour with the
closed-form kernel or the exact KDE, and reports pass/fail with the worst
observed deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kde import KernelConfig, exact_root_kde, exact_weighted_kde, stack_points, WeightedPoint
from .lsh import Family, LshEnsemble, LshEnsembleSpec, LshFamilyConfig, collision_probability, sign_collision_probability
from .sketch import build, query_batch


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class VerifyConfig:
    calibration_draws: int = 100_000
    calibration_tol: float = 0.01
    sketch_trials: int = 10_000
    mom_trials: int = 1000
    mom_rows: int = 1000
    mom_groups: int = 24
    delta: float = 0.05
    sigmas: float = 3.0
    range_R: int = 1 << 16
    mom_range_R: int = 4096
    seed: int = 0

    @classmethod
    def quick(cls, seed: int = 0) -> VerifyConfig:
        return cls(calibration_draws=20_000, calibration_tol=0.02, sketch_trials=2000,
                   mom_trials=100, mom_rows=240, range_R=1 << 14, mom_range_R=1024, seed=seed)


def collision_rates(family: Family, distances, r: float, draws: int, dim: int, seed: int) -> np.ndarray:
    """Empirical raw-hash collision frequency for point pairs at the given distances
    (angles for the sign family)."""
    rng = np.random.default_rng(seed)
    spec = LshEnsembleSpec(LshFamilyConfig(family, dim, r), draws, 1, 2, seed)
    ens = LshEnsemble(spec)
    rates = []
    for c in distances:
        if family is Family.SignProjection:
            u = rng.standard_normal(dim)
            u /= np.linalg.norm(u)
            w = rng.standard_normal(dim)
            w -= (w @ u) * u
            w /= np.linalg.norm(w)
            x, y = u, math.cos(c) * u + math.sin(c) * w
        else:
            direction = rng.standard_normal(dim)
            direction /= np.linalg.norm(direction)
            x = rng.standard_normal(dim)
            y = x + c * direction
        h = ens.raw_hashes(np.stack([x, y]))[:, :, 0]
        rates.append(np.mean(h[0] == h[1]))
    return np.array(rates)


def calibration_suite(cfg: VerifyConfig) -> SuiteResult:
    r = 2.0
    worst = 0.0
    details = []
    for family, dim in ((Family.L2PStable, 8), (Family.SparseSign, 64), (Family.SignProjection, 8)):
        if family is Family.SignProjection:
            grid = np.linspace(0.1, 3.0, 5)
            expected = sign_collision_probability(grid)
        else:
            grid = np.linspace(0.1 * r, 5 * r, 5)
            expected = collision_probability(grid, r)
        got = collision_rates(family, grid, r, cfg.calibration_draws, dim, cfg.seed + int(family))
        dev = float(np.max(np.abs(got - expected)))
        worst = max(worst, dev)
        details.append(f"{family.name}={dev:.4f}")
    return SuiteResult("calibration", worst <= cfg.calibration_tol,
                       f"max |empirical - analytic| {', '.join(details)} (tol {cfg.calibration_tol})")


def _fixture(seed: int, n: int = 50, d: int = 5):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    alpha = rng.uniform(0.0, 2.0, n)
    Q = X[rng.choice(n, 5, replace=False)] + 0.5 * rng.standard_normal((5, d))
    return X, alpha, Q


def single_row_samples(X, alpha, Q, kernel: KernelConfig, trials: int, range_R: int, seed: int) -> np.ndarray:
    """Row reads S[h(q)] from ``trials`` independently seeded one-row sketches, shape (trials, n_queries)."""
    out = np.empty((trials, Q.shape[0]))
    for t in range(trials):
        spec = LshEnsembleSpec(kernel.family_config, 1, kernel.concat_K, range_R, seed * 1_000_003 + t)
        sk = build((X, alpha), spec)
        out[t] = sk.row_values(Q)[:, 0]
    return out


def unbiasedness_suite(cfg: VerifyConfig) -> tuple[SuiteResult, SuiteResult]:
    X, alpha, Q = _fixture(cfg.seed)
    kernel = KernelConfig(LshFamilyConfig(Family.L2PStable, X.shape[1], 3.0), 1)
    pts = [WeightedPoint(x, a) for x, a in zip(X, alpha)]
    samples = single_row_samples(X, alpha, Q, kernel, cfg.sketch_trials, cfg.range_R, cfg.seed)
    n = samples.shape[0]
    mean_ok, var_ok, zs, ratios = True, True, [], []
    for j, q in enumerate(Q):
        s = samples[:, j]
        exact = exact_weighted_kde(q, pts, kernel)
        se = s.std(ddof=1) / math.sqrt(n)
        z = abs(s.mean() - exact) / se if se > 0 else 0.0
        zs.append(z)
        mean_ok &= z <= cfg.sigmas
        var = s.var(ddof=1)
        bound = exact_root_kde(q, pts, kernel) ** 2
        m4 = np.mean((s - s.mean()) ** 4)
        var_se = math.sqrt(max(m4 - var * var, 0.0) / n)
        var_ok &= var <= bound + cfg.sigmas * var_se
        ratios.append(var / bound)
    return (
        SuiteResult("unbiasedness", bool(mean_ok), f"max |mean - exact| / SE = {max(zs):.2f} (limit {cfg.sigmas})"),
        SuiteResult("variance", bool(var_ok), f"max var / bound = {max(ratios):.3f}"),
    )


def mom_coverage_suite(cfg: VerifyConfig) -> SuiteResult:
    X, alpha, Q = _fixture(cfg.seed + 1)
    kernel = KernelConfig(LshFamilyConfig(Family.L2PStable, X.shape[1], 3.0), 1)
    pts = [WeightedPoint(x, a) for x, a in zip(X, alpha)]
    exact = np.array([exact_weighted_kde(q, pts, kernel) for q in Q])
    root = np.array([exact_root_kde(q, pts, kernel) for q in Q])
    L, g = cfg.mom_rows, cfg.mom_groups
    bound = 6.0 * root / math.sqrt(L) * math.sqrt(math.log(1.0 / cfg.delta))
    hits = 0
    for t in range(cfg.mom_trials):
        spec = LshEnsembleSpec(kernel.family_config, L, 1, cfg.mom_range_R, cfg.seed * 7919 + t + 1)
        sk = build((X, alpha), spec)
        j = t % Q.shape[0]
        z = query_batch(sk, Q[j], "mom", g, allow_uneven=True)[0]
        hits += int(abs(z - exact[j]) <= bound[j])
    rate = hits / cfg.mom_trials
    return SuiteResult("mom-coverage", bool(rate >= 1.0 - cfg.delta),
                       f"bound held in {rate:.3f} of {cfg.mom_trials} trials (need {1 - cfg.delta:.2f})")


def run_all(cfg: VerifyConfig) -> list[SuiteResult]:
    results = [calibration_suite(cfg)]
    results.extend(unbiasedness_suite(cfg))
    results.append(mom_coverage_suite(cfg))
    return results
