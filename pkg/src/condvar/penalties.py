"""Conditional variance penalties and variance diagnostics over a grouping.

The central quantity is the within-group variance of some per-sample value
(a predicted logit coordinate or a per-sample loss), averaged uniformly over
all groups after raising each group's variance to an exponent nu in
{1/2, 1}. Group variances use the population normalization (divide by the
group size), so singleton groups contribute exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, GroupIndex

__all__ = [
    "PenaltyConfig",
    "DegenerateVarianceError",
    "conditional_penalty",
    "variance_ratio",
    "variance_decomposition",
    "baseline_group_by_label",
    "baseline_unconditional",
]


class DegenerateVarianceError(ArithmeticError):
    """All group means coincide, so a variance ratio has no denominator."""


@dataclass(frozen=True)
class PenaltyConfig:
    """target 'prediction' penalizes logits, 'loss' penalizes per-sample
    losses; nu is the variance exponent; lam weights the penalty; gamma
    weights the ridge term on the network weights (biases excluded)."""

    target: str = "prediction"
    nu: float = 1.0
    lam: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.target not in ("prediction", "loss"):
            raise ValueError(f"unknown penalty target {self.target!r}")
        if self.nu not in (0.5, 1.0):
            raise ValueError("nu must be exactly 0.5 or 1.0")
        if not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError("lam must be finite and >= 0")
        if not (np.isfinite(self.gamma) and self.gamma >= 0.0):
            raise ValueError("gamma must be finite and >= 0")

    def to_dict(self) -> dict:
        return {"target": self.target, "nu": self.nu, "lam": self.lam, "gamma": self.gamma}

    @staticmethod
    def from_dict(d: dict) -> "PenaltyConfig":
        return PenaltyConfig(
            d.get("target", "prediction"),
            float(d.get("nu", 1.0)),
            float(d.get("lam", 0.0)),
            float(d.get("gamma", 0.0)),
        )


def _check_values(values, group_index: GroupIndex) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (group_index.n,):
        raise ValueError(
            f"values length {values.shape} does not match group index over {group_index.n} samples"
        )
    return values


def group_variances(values, group_index: GroupIndex) -> np.ndarray:
    """Population within-group variance per group (singletons give 0)."""
    values = _check_values(values, group_index)
    out = np.empty(group_index.m)
    for j, g in enumerate(group_index.groups):
        v = values[g]
        out[j] = np.mean((v - v.mean()) ** 2)
    return out


def conditional_penalty(values, group_index: GroupIndex, nu: float = 1.0) -> float:
    """Mean over all m groups of (within-group population variance)^nu.

    Returns exactly 0.0 when there are no grouped observations (c = 0), in
    which case penalized and pooled training coincide.
    """
    if nu not in (0.5, 1.0):
        raise ValueError("nu must be exactly 0.5 or 1.0")
    _check_values(values, group_index)
    if group_index.c == 0:
        return 0.0
    variances = group_variances(values, group_index)
    if nu == 0.5:
        variances = np.sqrt(variances)
    return float(np.mean(variances))


def variance_ratio(values, group_index: GroupIndex) -> float:
    """Mean within-group variance divided by the variance of group means.

    A small ratio says the values vary across groups but barely within
    them. Requires m >= 2 and at least one non-singleton group; equal group
    means make the denominator zero, which is reported as degenerate.
    """
    values = _check_values(values, group_index)
    if group_index.m < 2:
        raise ValueError("variance_ratio needs at least two groups")
    if not group_index.nontrivial():
        raise ValueError("variance_ratio needs at least one group of size >= 2")
    means = np.asarray([values[g].mean() for g in group_index.groups])
    denom = float(np.mean((means - means.mean()) ** 2))
    if denom == 0.0:
        raise DegenerateVarianceError("all group means are equal")
    numer = float(np.mean(group_variances(values, group_index)))
    return numer / denom


def variance_decomposition(values, group_index: GroupIndex):
    """Split the population variance of ``values`` into the size-weighted
    within-group mean and the between-group-mean part.

    Returns (total, within_mean, between) with total == within_mean + between
    up to rounding. The within term here weights groups by n_j / n, unlike
    ``conditional_penalty`` which weights groups uniformly; the two coincide
    when all groups have equal size.
    """
    values = _check_values(values, group_index)
    n = group_index.n
    grand = values.mean()
    total = float(np.mean((values - grand) ** 2))
    within = 0.0
    between = 0.0
    for g in group_index.groups:
        v = values[g]
        mu = v.mean()
        within += len(g) / n * float(np.mean((v - mu) ** 2))
        between += len(g) / n * float((mu - grand) ** 2)
    return total, within, between


def baseline_group_by_label(dataset: Dataset) -> GroupIndex:
    """One group per class label: the grouping-by-class baseline."""
    labels = dataset.labels
    groups = []
    for k in range(dataset.n_classes):
        idx = np.flatnonzero(labels == k)
        if len(idx):
            groups.append(idx)
    return GroupIndex(tuple(groups), len(dataset))


def baseline_unconditional(values) -> float:
    """Population variance of the values: the unconditional-variance baseline."""
    values = np.asarray(values, dtype=float)
    if values.size < 1:
        raise ValueError("need at least one value")
    return float(np.mean((values - values.mean()) ** 2))
