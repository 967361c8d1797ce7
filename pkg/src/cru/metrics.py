"""Forecast error metrics and repeated-trial summaries."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricResult:
    rmse: float
    mape: float
    mape_paper_literal: float
    n_points: int

    def to_dict(self):
        return {
            "rmse": self.rmse,
            "mape": self.mape,
            "mape_paper_literal": self.mape_paper_literal,
            "n_points": self.n_points,
        }


def _pair(Y, Y_hat):
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    Y_hat = np.atleast_2d(np.asarray(Y_hat, dtype=np.float64))
    if Y.shape != Y_hat.shape:
        raise ValueError(f"shape mismatch: truth {Y.shape} vs prediction {Y_hat.shape}")
    if Y.size == 0:
        raise ValueError("empty input")
    return Y, Y_hat


def rmse(Y, Y_hat) -> float:
    """Root mean squared error over every cell of the (N x T) matrices."""
    Y, Y_hat = _pair(Y, Y_hat)
    return float(np.sqrt(np.mean((Y - Y_hat) ** 2)))


def _ape_mean(Y, Y_hat):
    Y, Y_hat = _pair(Y, Y_hat)
    zeros = np.argwhere(Y == 0)
    if zeros.size:
        n, t = zeros[0]
        raise ValueError(f"MAPE undefined: zero target at row {n}, column {t}")
    return float(np.mean(np.abs((Y - Y_hat) / Y)) * 100.0)


def mape(Y, Y_hat) -> float:
    """Mean absolute percentage error, in percent."""
    return _ape_mean(Y, Y_hat)


def mape_paper_literal(Y, Y_hat) -> float:
    """MAPE wrapped in a square root, as the formula is sometimes printed."""
    return float(np.sqrt(_ape_mean(Y, Y_hat)))


def evaluate(Y, Y_hat) -> MetricResult:
    inner = _ape_mean(Y, Y_hat)
    return MetricResult(rmse(Y, Y_hat), inner, float(np.sqrt(inner)), int(np.size(Y)))


METRICS = ("rmse", "mape", "mape_paper_literal")


@dataclass
class TrialSummary:
    results: list
    seeds: list
    mean: dict
    std: dict
    best: dict
    policy: str = "mean_std"

    def cell(self, metric: str, digits: int = 3) -> str:
        """Table cell in the ``mean (std)`` convention."""
        return f"{self.mean[metric]:.{digits}f} ({self.std[metric]:.{digits}f})"

    def headline(self, metric: str) -> float:
        return self.best[metric] if self.policy == "best" else self.mean[metric]

    def to_dict(self):
        return {
            "policy": self.policy,
            "seeds": list(self.seeds),
            "mean": dict(self.mean),
            "std": dict(self.std),
            "best": dict(self.best),
            "cells": {k: self.cell(k) for k in METRICS},
        }


def summarize_trials(results, seeds=None, policy: str = "mean_std") -> TrialSummary:
    results = list(results)
    if not results:
        raise ValueError("no trial results to summarise")
    if policy not in ("mean_std", "best"):
        raise ValueError(f"unknown policy {policy!r}")
    seeds = list(range(len(results))) if seeds is None else list(seeds)
    mean, std, best = {}, {}, {}
    for k in METRICS:
        values = [float(getattr(r, k)) for r in results]
        # fsum keeps the summary independent of trial order
        mu = math.fsum(values) / len(values)
        mean[k] = mu
        std[k] = math.sqrt(math.fsum((v - mu) ** 2 for v in values) / len(values))
        best[k] = min(values)
    return TrialSummary(results, seeds, mean, std, best, policy)
