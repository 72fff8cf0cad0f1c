"""Contribution-discrepancy gradient modulation.

Per optimization step, each branch's contribution to the partial likelihood
is summarized by a per-event ratio

    r^G_k = s_g[k] / sum_{j in R(t_k)} exp(s_g[j])

(numerator deliberately NOT exponentiated; set ``exp_numerator`` for the
softmax-style reading), where s_g[k] = W^G . G_k + b/2 is the genomic half
of the fused score theta_k. The batch-level discrepancy

    rho_g = aggregate_k(r^G_k) / aggregate_k(r^P_k),    rho_p = 1 / rho_g

is clamped and mapped through min(1 - tanh(rho - 1), 1) to a learning-rate
factor in (0, 1]: the branch with rho > 1 (over-contributing) is slowed
down, the other keeps its full step.

rho is a ratio of per-branch aggregates rather than an aggregate of
per-sample ratios so that swapping the two branches inverts rho exactly
for every aggregation choice; the per-sample ratios are still recorded
for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .nnet import ParamGroup
from .survival import CoxBatch

_AGGREGATES = ("mean", "median")


@dataclass
class ModulationConfig:
    enabled: bool = True
    ratio_clamp: tuple[float, float] = (0.1, 10.0)
    epsilon: float = 1e-8
    aggregate: str = "mean"
    exp_numerator: bool = False
    warmup_steps: int = 0

    def __post_init__(self):
        lo, hi = (float(self.ratio_clamp[0]), float(self.ratio_clamp[1]))
        if not (0.0 < lo < 1.0 < hi):
            raise ConfigError(f"ratio_clamp must satisfy 0 < lo < 1 < hi, got ({lo}, {hi})")
        self.ratio_clamp = (lo, hi)
        if not self.epsilon > 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.aggregate not in _AGGREGATES:
            raise ConfigError(f"aggregate must be one of {_AGGREGATES}, got '{self.aggregate}'")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")


@dataclass
class ContributionReport:
    """One step's discrepancy summary.

    rho_g / rho_p are pre-clamp (their product is exactly 1); the clamped
    values actually used for the factors are recorded separately.
    """

    rho_g: float
    rho_p: float
    rho_g_clamped: float
    rho_p_clamped: float
    factor_g: float
    factor_p: float
    degenerate: bool = False
    per_sample_ratios: np.ndarray = field(default_factory=lambda: np.empty(0))

    def summary(self) -> dict:
        return {"rho_g": self.rho_g, "rho_g_clamped": self.rho_g_clamped,
                "factor_g": self.factor_g, "factor_p": self.factor_p}


NEUTRAL_REPORT = ContributionReport(
    rho_g=1.0, rho_p=1.0, rho_g_clamped=1.0, rho_p_clamped=1.0,
    factor_g=1.0, factor_p=1.0, degenerate=True)


def branch_scores(Wg, G, Wp, P, b: float):
    """Split theta into its genomic and image halves, bias shared equally.

    G and P hold one sample per row; returns (s_g, s_p) with
    s_g[k] + s_p[k] = theta_k.
    """
    Wg = np.asarray(Wg, dtype=np.float64).reshape(-1)
    Wp = np.asarray(Wp, dtype=np.float64).reshape(-1)
    G = np.asarray(G, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if G.ndim != 2 or P.ndim != 2:
        raise ShapeError("G and P must be 2-D (rows = samples)")
    if G.shape[1] != Wg.size:
        raise ShapeError(f"G has {G.shape[1]} columns, Wg has {Wg.size} entries")
    if P.shape[1] != Wp.size:
        raise ShapeError(f"P has {P.shape[1]} columns, Wp has {Wp.size} entries")
    if G.shape[0] != P.shape[0]:
        raise ShapeError(f"G rows {G.shape[0]} != P rows {P.shape[0]}")
    half = float(b) / 2.0
    return G @ Wg + half, P @ Wp + half


def _signed_guard(x: float, eps: float) -> float:
    # keep the sign, bound the magnitude away from zero
    if x >= 0.0:
        return max(x, eps)
    return min(x, -eps)


def contribution_ratio(s_g, s_p, batch: CoxBatch, cfg: ModulationConfig) -> ContributionReport:
    """Per-batch discrepancy ratios rho_g, rho_p and their learning-rate factors.

    Degenerate batches (no uncensored sample) yield the neutral report.
    """
    s_g = np.asarray(s_g, dtype=np.float64).reshape(-1)
    s_p = np.asarray(s_p, dtype=np.float64).reshape(-1)
    if s_g.size != len(batch) or s_p.size != len(batch):
        raise ShapeError(
            f"scores must align with batch: got {s_g.size}/{s_p.size} for batch of {len(batch)}")
    if not (np.isfinite(s_g).all() and np.isfinite(s_p).all()):
        raise NumericalError("branch scores contain non-finite entries")

    if batch.degenerate:
        return NEUTRAL_REPORT

    n_ev = batch.n_events
    r_g = np.empty(n_ev)
    r_p = np.empty(n_ev)
    for m, (k, risk) in enumerate(zip(batch.event_indices, batch.risk_sets)):
        denom_g = np.exp(s_g[risk]).sum()
        denom_p = np.exp(s_p[risk]).sum()
        num_g = np.exp(s_g[k]) if cfg.exp_numerator else s_g[k]
        num_p = np.exp(s_p[k]) if cfg.exp_numerator else s_p[k]
        r_g[m] = num_g / denom_g
        r_p[m] = num_p / denom_p

    agg = np.mean if cfg.aggregate == "mean" else np.median
    per_sample = r_g / np.array([_signed_guard(v, cfg.epsilon) for v in r_p])
    rho_g = _signed_guard(float(agg(r_g)), cfg.epsilon) / _signed_guard(float(agg(r_p)), cfg.epsilon)
    rho_p = 1.0 / rho_g

    lo, hi = cfg.ratio_clamp
    rho_g_c = min(max(rho_g, lo), hi)
    rho_p_c = 1.0 / rho_g_c
    return ContributionReport(
        rho_g=rho_g, rho_p=rho_p,
        rho_g_clamped=rho_g_c, rho_p_clamped=rho_p_c,
        factor_g=modulation_factor(rho_g_c), factor_p=modulation_factor(rho_p_c),
        per_sample_ratios=per_sample)


def modulation_factor(rho: float) -> float:
    """min(1 - tanh(rho - 1), 1): identity-or-slowdown, never a speedup."""
    return min(1.0 - np.tanh(rho - 1.0), 1.0)


def apply_modulation(report: ContributionReport, genomic_group: ParamGroup,
                     image_group: ParamGroup, cfg: ModulationConfig | None = None) -> None:
    """Write the report's factors into the two branch groups' lr_scale.

    The fusion head's group must not be passed here — its step size is
    never modulated. A disabled config resets both scales to 1.
    """
    if cfg is not None and not cfg.enabled:
        genomic_group.set_lr_scale(1.0)
        image_group.set_lr_scale(1.0)
        return
    genomic_group.set_lr_scale(report.factor_g)
    image_group.set_lr_scale(report.factor_p)
