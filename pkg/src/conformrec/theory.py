"""Numerical validation of the contrastive-gradient analysis.

The closed-form gradient of a single InfoNCE term with cosine similarity
factors into a normalization Jacobian (an orthogonal projector scaled by
1/||h||) applied to a softmax-weighted combination of the candidate
embeddings. Two scalar curves bound the per-sample contribution
magnitudes as functions of pair similarity:

    f1(p) = sqrt(1 - p^2) * (exp(p / tau) - 1)      positive pairs
    f2(n) = sqrt(1 - n^2) * exp(n / tau)            negative pairs

Scaling the loss by a conformity weight in (0, 1] turns each curve into a
band of attainable contribution magnitudes; `scaling_distribution_check`
verifies the band structure empirically.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass
class ContributionCurve:
    grid: np.ndarray
    values: np.ndarray
    tau: float
    name: str


def _check_domain(value: float, name: str) -> None:
    if abs(value) > 1:
        raise ValueError(f"{name} must lie in [-1, 1], got {value}")


def f1(p, tau: float):
    """Positive-pair gradient contribution magnitude at similarity p."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    arr = np.asarray(p, dtype=np.float64)
    if np.any(np.abs(arr) > 1):
        raise ValueError(f"p must lie in [-1, 1], got {arr[np.abs(arr) > 1]}")
    out = np.sqrt(1.0 - arr**2) * (np.exp(arr / tau) - 1.0)
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


def f2(n, tau: float):
    """Negative-pair gradient contribution magnitude at similarity n."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    arr = np.asarray(n, dtype=np.float64)
    if np.any(np.abs(arr) > 1):
        raise ValueError(f"n must lie in [-1, 1], got {arr[np.abs(arr) > 1]}")
    out = np.sqrt(1.0 - arr**2) * np.exp(arr / tau)
    return float(out) if np.isscalar(n) or arr.ndim == 0 else out


def f2_argmax(tau: float) -> float:
    """Closed-form interior maximizer of f2 on (0, 1): root of n^2 + tau*n - 1."""
    return (-tau + math.sqrt(tau * tau + 4.0)) / 2.0


def contribution_curves(tau: float, points: int = 2001) -> tuple[ContributionCurve, ContributionCurve]:
    grid = np.linspace(-1.0, 1.0, points)
    return (
        ContributionCurve(grid, f1(grid, tau), tau, "f1"),
        ContributionCurve(grid, f2(grid, tau), tau, "f2"),
    )


def normalized(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("cannot normalize the zero vector")
    return v / norm


def normalize_jacobian(h: np.ndarray) -> np.ndarray:
    """Jacobian of v -> v/||v||: (1/||h||) (I - h_bar h_bar^T)."""
    h = np.asarray(h, dtype=np.float64)
    hbar = normalized(h)
    return (np.eye(len(h)) - np.outer(hbar, hbar)) / np.linalg.norm(h)


def single_pair_loss(h: np.ndarray, X: np.ndarray, tau: float, positive: int = 0) -> float:
    """Unweighted single-anchor InfoNCE with cosine similarities and the
    positive included in the denominator."""
    hbar = normalized(np.asarray(h, dtype=np.float64))
    Xbar = X / np.linalg.norm(X, axis=1, keepdims=True)
    sims = Xbar @ hbar / tau
    shift = sims.max()
    return float(-(sims[positive] - shift - np.log(np.exp(sims - shift).sum())))


def analytic_gradient(
    h: np.ndarray,
    X: np.ndarray,
    tau: float,
    positive: int = 0,
    denominator: str = "full",
) -> np.ndarray:
    """Closed-form gradient of the single-anchor loss with respect to the
    unnormalized anchor h.

    `denominator` selects how the softmax-style coefficients P are
    normalized: "full" over every candidate (this matches the loss that is
    actually optimized), "exclude_positive" over the candidates without
    the positive (the alternative index set floated in the derivation);
    both are provided so the discrepancy can be measured rather than
    silently resolved.
    """
    h = np.asarray(h, dtype=np.float64)
    if np.linalg.norm(h) == 0:
        raise ValueError("anchor must be nonzero")
    if X.shape[0] < 2:
        raise ValueError("need at least two candidate rows")
    hbar = normalized(h)
    Xbar = X / np.linalg.norm(X, axis=1, keepdims=True)
    sims = Xbar @ hbar
    expvals = np.exp(sims / tau)
    if denominator == "full":
        denom = expvals.sum()
    elif denominator == "exclude_positive":
        denom = expvals.sum() - expvals[positive]
    else:
        raise ValueError(f"unknown denominator mode: {denominator!r}")
    P = expvals / denom
    combo = Xbar[positive] * (P[positive] - 1.0)
    for i in range(X.shape[0]):
        if i != positive:
            combo = combo + Xbar[i] * P[i]
    projector = np.eye(len(h)) - np.outer(hbar, hbar)
    return projector @ combo / (tau * np.linalg.norm(h))


def denominator_discrepancy(h: np.ndarray, X: np.ndarray, tau: float, positive: int = 0) -> dict:
    """Magnitude of the gap between the two candidate-set conventions for
    the closed-form gradient's softmax coefficients."""
    full = analytic_gradient(h, X, tau, positive, denominator="full")
    excl = analytic_gradient(h, X, tau, positive, denominator="exclude_positive")
    return {
        "full": full,
        "exclude_positive": excl,
        "l2_gap": float(np.linalg.norm(full - excl)),
        "relative_gap": float(np.linalg.norm(full - excl) / max(np.linalg.norm(full), 1e-30)),
    }


def numeric_gradient(fn, h: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a vector."""
    h = np.asarray(h, dtype=np.float64)
    grad = np.zeros_like(h)
    for i in range(len(h)):
        hp = h.copy()
        hm = h.copy()
        hp[i] += step
        hm[i] -= step
        grad[i] = (fn(hp) - fn(hm)) / (2 * step)
    return grad


@dataclass
class BandReport:
    grid: np.ndarray
    curve: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray
    name: str


def scaling_distribution_check(
    mu_c: float,
    sigma: float,
    tau: float,
    sample_count: int = 2000,
    points: int = 2001,
    seed: int = 0,
) -> dict:
    """Verify that weight-scaled contribution values stay inside the open
    band (0, f(.)] wherever the curve is positive, and report band data.

    Weights are drawn from N(mu_c, sigma) and clamped to (0, 1]. Returns a
    summary dict with pass/fail flags, the empirical mean of the scaled
    negative-curve value at similarity 0 (whose expectation is mu_c), and
    per-curve band arrays for CSV export.
    """
    if sample_count < 1000:
        raise ValueError("sample_count must be at least 1000")
    rng = np.random.default_rng(seed)
    omega = np.clip(rng.normal(mu_c, sigma, size=sample_count), 1e-6, 1.0)
    curve1, curve2 = contribution_curves(tau, points)
    reports = []
    all_inside = True
    for curve in (curve1, curve2):
        scaled_low = omega.min() * curve.values
        scaled_high = omega.max() * curve.values
        positive = curve.values > 0
        inside = np.all(scaled_high[positive] <= curve.values[positive] + 1e-12) and np.all(
            scaled_low[positive] > 0
        )
        all_inside = all_inside and bool(inside)
        reports.append(
            BandReport(
                grid=curve.grid,
                curve=curve.values,
                band_low=scaled_low,
                band_high=scaled_high,
                name=curve.name,
            )
        )
    at_zero = float(np.mean(omega * f2(0.0, tau)))
    mean_tolerance = 3 * sigma / math.sqrt(sample_count)
    return {
        "tau": tau,
        "mu_c": mu_c,
        "sigma": sigma,
        "samples": sample_count,
        "bands_inside_curve": all_inside,
        "scaled_f2_at_zero_mean": at_zero,
        "scaled_f2_at_zero_expected": mu_c,
        "mean_within_tolerance": abs(at_zero - mu_c) <= mean_tolerance,
        "reports": reports,
        "omega": omega,
    }


def write_curves_csv(path, tau: float, points: int = 2001) -> None:
    curve1, curve2 = contribution_curves(tau, points)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["similarity", "f1", "f2"])
        for g, a, b in zip(curve1.grid, curve1.values, curve2.values):
            writer.writerow([f"{g:.6f}", f"{a:.10g}", f"{b:.10g}"])


def write_bands_csv(path, summary: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["curve", "similarity", "value", "band_low", "band_high"])
        for report in summary["reports"]:
            for g, v, lo, hi in zip(report.grid, report.curve, report.band_low, report.band_high):
                writer.writerow([report.name, f"{g:.6f}", f"{v:.10g}", f"{lo:.10g}", f"{hi:.10g}"])
