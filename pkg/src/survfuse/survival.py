"""Cox partial-likelihood machinery.

Conventions used everywhere in this package:

* theta is the log hazard ratio per patient; larger theta = higher risk.
* The loss is the NEGATIVE partial log-likelihood (minimization form):
      L(theta) = sum over uncensored k of [ logsumexp(theta[R_k]) - theta_k ]
  where R_k = { j : t_j >= t_k } is the risk set at the k-th event time,
  with ties sharing full risk sets (Breslow convention). Each term is
  nonnegative because k belongs to its own risk set.
* The gradient of the minimization-form loss is
      dL/dtheta_i = sum over events k with i in R_k of softmax_i(theta[R_k])
                    - 1{event_i}
  and its entries sum to zero on any batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (ConcordanceUndefinedError, NumericalError, ShapeError,
                     ValidationError)


@dataclass(eq=False)
class SurvivalRecord:
    """One patient: observed time, event indicator, per-modality features."""

    id: str
    time: float
    event: bool
    cnv_mut: np.ndarray
    rna: np.ndarray
    image: np.ndarray

    def __post_init__(self):
        self.time = float(self.time)
        self.event = bool(self.event)
        if not (np.isfinite(self.time) and self.time > 0.0):
            raise ValidationError(f"record '{self.id}': time must be positive, got {self.time}")
        self.cnv_mut = np.asarray(self.cnv_mut, dtype=np.float64).reshape(-1)
        self.rna = np.asarray(self.rna, dtype=np.float64).reshape(-1)
        self.image = np.asarray(self.image, dtype=np.float64).reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, SurvivalRecord):
            return NotImplemented
        return (self.id == other.id and self.time == other.time
                and self.event == other.event
                and np.array_equal(self.cnv_mut, other.cnv_mut)
                and np.array_equal(self.rna, other.rna)
                and np.array_equal(self.image, other.image))


class CoxBatch:
    """A batch of (time, event) observations with precomputed risk sets.

    risk_sets[m] holds the indices j with t_j >= t_k for the m-th
    uncensored sample k = event_indices[m]; ties are included.
    """

    def __init__(self, times, events, records: list[SurvivalRecord] | None = None):
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        events = np.asarray(events).reshape(-1).astype(bool)
        if times.size == 0:
            raise ValidationError("empty batch")
        if times.shape != events.shape:
            raise ShapeError(f"times length {times.size} != events length {events.size}")
        if not np.isfinite(times).all() or (times <= 0.0).any():
            raise ValidationError("all observation times must be positive and finite")
        self.times = times
        self.events = events
        self.records = records
        self.event_indices = np.flatnonzero(events)
        self.risk_sets = [np.flatnonzero(times >= times[k]) for k in self.event_indices]

    @classmethod
    def from_arrays(cls, times, events) -> "CoxBatch":
        return cls(times, events)

    def __len__(self) -> int:
        return self.times.size

    @property
    def n_events(self) -> int:
        return self.event_indices.size

    @property
    def degenerate(self) -> bool:
        """True when the batch has no uncensored event (loss is identically 0)."""
        return self.n_events == 0


def build_risk_sets(records: list[SurvivalRecord]) -> CoxBatch:
    """Assemble a CoxBatch from records, keeping the record list attached."""
    if not records:
        raise ValidationError("empty record list")
    times = np.array([r.time for r in records])
    events = np.array([r.event for r in records])
    return CoxBatch(times, events, records=list(records))


def _check_theta(theta, batch: CoxBatch) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.size != len(batch):
        raise ShapeError(f"theta length {theta.size} != batch size {len(batch)}")
    if not np.isfinite(theta).all():
        raise NumericalError("theta contains non-finite entries")
    return theta


def cox_loss(theta, batch: CoxBatch) -> float:
    """Negative Cox partial log-likelihood (see module docstring).

    Degenerate batches (no uncensored event) contribute 0; check
    `batch.degenerate` to count them. Log-sum-exp uses max subtraction.
    """
    theta = _check_theta(theta, batch)
    if batch.degenerate:
        return 0.0
    total = 0.0
    for k, risk in zip(batch.event_indices, batch.risk_sets):
        t = theta[risk]
        m = t.max()
        total += m + np.log(np.exp(t - m).sum()) - theta[k]
    return float(total)


def cox_gradient(theta, batch: CoxBatch) -> np.ndarray:
    """Exact gradient of cox_loss w.r.t. theta."""
    theta = _check_theta(theta, batch)
    grad = -batch.events.astype(np.float64)
    if batch.degenerate:
        return grad
    for risk in batch.risk_sets:
        t = theta[risk]
        w = np.exp(t - t.max())
        grad[risk] += w / w.sum()
    return grad


def concordance_index(theta, times, events) -> float:
    """Harrell's concordance index.

    A pair (i, j) is comparable when t_i < t_j and sample i is uncensored.
    Concordant pairs (theta_i > theta_j) score 1, theta ties score 0.5.
    Raises ConcordanceUndefinedError when no pair is comparable.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    events = np.asarray(events).reshape(-1).astype(bool)
    if not (theta.size == times.size == events.size):
        raise ShapeError(
            f"length mismatch: theta {theta.size}, times {times.size}, events {events.size}")
    comparable = (times[:, None] < times[None, :]) & events[:, None]
    n_comparable = int(comparable.sum())
    if n_comparable == 0:
        raise ConcordanceUndefinedError("no comparable pair (check censoring and time ties)")
    higher = theta[:, None] > theta[None, :]
    tied = theta[:, None] == theta[None, :]
    concordant = int((comparable & higher).sum())
    ties = int((comparable & tied).sum())
    return (concordant + 0.5 * ties) / n_comparable


def fit_linear_cox(x, times, events, l2: float = 1e-3, max_iter: int = 200) -> np.ndarray:
    """Ridge-penalized linear Cox fit: beta minimizing cox_loss(X beta) + l2/2 |beta|^2.

    Used as a standalone probe of how informative a feature block is; the
    objective is convex, so the L-BFGS solution is deterministic.
    """
    from scipy.optimize import minimize

    x = np.asarray(x, dtype=np.float64)
    batch = CoxBatch.from_arrays(times, events)
    if x.shape[0] != len(batch):
        raise ShapeError(f"feature rows {x.shape[0]} != batch size {len(batch)}")

    def objective(beta):
        theta = x @ beta
        loss = cox_loss(theta, batch) + 0.5 * l2 * float(beta @ beta)
        grad = x.T @ cox_gradient(theta, batch) + l2 * beta
        return loss, grad

    res = minimize(objective, np.zeros(x.shape[1]), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter})
    return res.x


def probe_c_index(x_train, times_train, events_train, x_test, times_test, events_test,
                  l2: float = 1e-3) -> float:
    """Fit a linear Cox model on one feature block and score C on held-out data."""
    beta = fit_linear_cox(x_train, times_train, events_train, l2=l2)
    theta = np.asarray(x_test, dtype=np.float64) @ beta
    return concordance_index(theta, times_test, events_test)
