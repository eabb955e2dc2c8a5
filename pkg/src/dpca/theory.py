"""Monte-Carlo property checks for the asymptotic claims, run at desk scale.

Each check is seeded, returns its statistic curve as rows, and applies a
one-sided pass rule. The thresholds are engineering calibrations of
convergence-in-probability statements, not reported constants.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from dpca import coordinator, datagen
from dpca.experiments import machine_seed
from dpca.machine import local_summary
from dpca.metrics import rho


@dataclass
class CheckResult:
    name: str
    claim: str
    passed: bool
    statistic: float
    threshold: float
    rows: list = field(default_factory=list, repr=False)
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} [{self.claim}]: {self.detail}"

    def write_csv(self, path) -> None:
        if not self.rows:
            return
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows)


@dataclass(frozen=True)
class PropertyCheckSpec:
    name: str
    claim: str
    run: Callable[..., CheckResult]
    kwargs: dict = field(default_factory=dict)

    def __call__(self, **overrides) -> CheckResult:
        return self.run(**{**self.kwargs, **overrides})


def _summaries(model, sizes, dist, mode, t, seed, rep, K=2):
    return [
        local_summary(datagen.sample(model, n, dist, machine_seed(seed, rep, ell)), K, t, mode, ell)
        for ell, n in enumerate(sizes)
    ]


def _truth(model, mode):
    return datagen.to_correlation(model) if mode == "correlation" else model


def averaged_projection_gap(summaries, truth_vectors, i: int) -> float:
    """``|mean_l uhat uhat' - mean_l (u'uhat)^2 u u'|_F`` for spike ``i``.

    The empirical mean of squared alignments stands in for their expectation.
    """
    u = truth_vectors[:, i]
    w = np.stack([s.top_vectors[:, i] for s in summaries], axis=1) / np.sqrt(len(summaries))
    a = float(np.sum((u @ w) ** 2))
    g = w.T @ w
    sq = np.sum(g * g) - a * a
    return float(np.sqrt(max(sq, 0.0)))


def check_projection_averaging(p=200, n=200, m_grid=(3, 10, 30, 100), reps=50, model="mixed",
                               dist="gaussian", mode="covariance", seed=11) -> CheckResult:
    """Fan error and the averaged-projection gap both shrink as machines are added.

    Machines are nested across the grid: the run with m machines reuses the
    first m machines of the largest run.
    """
    pop = datagen.build_model(model, p)
    truth = _truth(pop, mode).true_vectors
    m_max = max(m_grid)
    fan = np.zeros((reps, len(m_grid)))
    gap = np.zeros((reps, len(m_grid)))
    for r in range(reps):
        summ = _summaries(pop, [n] * m_max, dist, mode, 0.1, seed, r)
        for j, m in enumerate(m_grid):
            fan[r, j] = rho(coordinator.fan_baseline(summ[:m]).vectors, truth)
            gap[r, j] = max(averaged_projection_gap(summ[:m], truth, i) for i in range(truth.shape[1]))
    mf, mg = fan.mean(axis=0), gap.mean(axis=0)
    rows = [{"m": m, "rho_fan": mf[j], "projection_gap": mg[j]} for j, m in enumerate(m_grid)]
    monotone = bool(np.all(np.diff(mf) < 0))
    passed = monotone and mf[-1] < mf[0] / 3
    detail = (f"mean rho_fan {np.round(mf, 4).tolist()} over m={list(m_grid)}; "
              f"strictly decreasing={monotone}; last/first={mf[-1] / mf[0]:.3f} (< 1/3)")
    return CheckResult("projection_averaging", "fan consistency in m", passed, float(mf[-1] / mf[0]),
                       1 / 3, rows, detail)


def check_identification(p=300, n=300, m=5, t=0.1, reps=200, dist="gaussian", mode="covariance",
                         seed=12, min_rate=0.95) -> CheckResult:
    """Empirical probability that the voted index set equals the true strong set."""
    pop = datagen.build_sparse_model(p)
    target = _truth(pop, mode).signal_union
    hits = np.zeros(reps, dtype=bool)
    extra = np.zeros(reps, dtype=int)
    for r in range(reps):
        got = coordinator.identify(_summaries(pop, [n] * m, dist, mode, t, seed, r)).union
        hits[r] = np.array_equal(got, target)
        extra[r] = np.setdiff1d(got, target).size + np.setdiff1d(target, got).size
    rate = float(hits.mean())
    rows = [{"rep": r, "exact": int(hits[r]), "symmetric_difference": int(extra[r])} for r in range(reps)]
    detail = (f"P(A_hat = A) = {rate:.3f} (need >= {min_rate}); "
              f"mean |A_hat xor A| = {extra.mean():.2f}")
    return CheckResult("identification", "support identification consistency", rate >= min_rate, rate, min_rate, rows, detail)


def check_sparse_fixed_m(p_grid=(100, 200, 400), ratio=2, m=2, reps=50, dist="gaussian",
                         mode="covariance", t=0.1, seed=13, final_max=0.1, fan_min=0.3) -> CheckResult:
    """With m fixed, debiased error on sparse spikes falls with N while Fan's stays high."""
    deb, fan = [], []
    for p in p_grid:
        pop = datagen.build_sparse_model(p)
        truth = _truth(pop, mode).true_vectors
        d, f = [], []
        for r in range(reps):
            summ = _summaries(pop, [ratio * p] * m, dist, mode, t, seed, r)
            d.append(rho(coordinator.estimate(summ).vectors, truth))
            f.append(rho(coordinator.fan_baseline(summ).vectors, truth))
        deb.append(float(np.mean(d)))
        fan.append(float(np.mean(f)))
    rows = [{"p": p, "n": ratio * p, "rho_debiased": deb[j], "rho_fan": fan[j]} for j, p in enumerate(p_grid)]
    monotone = bool(np.all(np.diff(deb) < 0))
    passed = monotone and deb[-1] < final_max and min(fan) >= fan_min
    detail = (f"rho_debiased {np.round(deb, 4).tolist()} (decreasing={monotone}, last < {final_max}); "
              f"rho_fan {np.round(fan, 4).tolist()} (all >= {fan_min})")
    return CheckResult("sparse_fixed_m", "sparse consistency at fixed m", passed, deb[-1], final_max, rows, detail)


def check_m1_refinement(p=300, n=300, reps=200, model="sparse", dist="gaussian", mode="covariance",
                        t=0.1, seed=14, min_rate=0.9) -> CheckResult:
    """Single machine: the refined estimate beats the raw top-K eigenvectors."""
    pop = datagen.build_model(model, p)
    truth = _truth(pop, mode).true_vectors
    d = np.zeros(reps)
    raw = np.zeros(reps)
    for r in range(reps):
        (s,) = _summaries(pop, [n], dist, mode, t, seed, r)
        d[r] = rho(coordinator.estimate([s]).vectors, truth) ** 2
        raw[r] = rho(s.top_vectors, truth) ** 2
    wins = d < raw
    rate = float(wins.mean())
    rows = [{"rep": r, "rho2_debiased": d[r], "rho2_raw": raw[r]} for r in range(reps)]
    detail = (f"rho^2 debiased < raw in {rate:.3f} of reps (need >= {min_rate}); "
              f"means {d.mean():.4f} vs {raw.mean():.4f}")
    return CheckResult("m1_refinement", "single-machine refinement", rate >= min_rate, rate, min_rate, rows, detail)


def check_bias_estimate(p=1000, n=2000, reps=200, seed=15, tol=0.03) -> CheckResult:
    """Mean squared correction factor tracks the mean squared alignment for one spike."""
    values = np.ones(p)
    values[0] = 2.0
    sigma = np.diag(values)
    pop = datagen.from_matrix(sigma, 1, name="diag")
    u = pop.true_vectors[:, 0]
    th2 = np.zeros(reps)
    al2 = np.zeros(reps)
    for r in range(reps):
        (s,) = _summaries(pop, [n], "gaussian", "covariance", 0.1, seed, r, K=1)
        th2[r] = s.theta[0] ** 2
        al2[r] = (s.top_vectors[:, 0] @ u) ** 2
    diff = abs(th2.mean() - al2.mean())
    rows = [{"rep": r, "theta2": th2[r], "alignment2": al2[r]} for r in range(reps)]
    detail = f"mean theta^2 {th2.mean():.4f} vs mean alignment^2 {al2.mean():.4f}; |diff| {diff:.4f} < {tol}"
    return CheckResult("bias_estimate", "correction factor", diff < tol, diff, tol, rows, detail)


THEORY_SUITE = (
    PropertyCheckSpec("bias_estimate", "correction factor", check_bias_estimate),
    PropertyCheckSpec("projection_averaging", "fan consistency in m", check_projection_averaging),
    PropertyCheckSpec("identification", "support identification consistency", check_identification),
    PropertyCheckSpec("sparse_fixed_m", "sparse consistency at fixed m", check_sparse_fixed_m),
    PropertyCheckSpec("m1_refinement", "single-machine refinement", check_m1_refinement),
)


def run_suite(out_dir=None, only=None, echo=print) -> list[CheckResult]:
    results = []
    for spec in THEORY_SUITE:
        if only and spec.name not in only:
            continue
        res = spec()
        results.append(res)
        if echo:
            echo(res.line())
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            res.write_csv(out / f"{res.name}.csv")
    if out_dir is not None:
        with open(Path(out_dir) / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "claim", "passed", "statistic", "threshold"])
            for r in results:
                w.writerow([r.name, r.claim, int(r.passed), repr(r.statistic), repr(r.threshold)])
    return results
