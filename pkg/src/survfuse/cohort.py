"""Synthetic multi-modal survival cohorts.

Each patient is driven by a latent vector z ~ N(0, I). The true log hazard
is h = hazard_coef . z; survival time is Exponential(rate = exp(h)), so a
Cox model is exactly well-specified and ranking by h is the ceiling any
score can reach. Censoring times are uniform on [0, c] with c calibrated
by bisection to hit the requested censored fraction.

Modality features are fixed seeded linear maps of a *window* of z plus
Gaussian noise. The three windows overlap but differ:

    cnv_mut <- z[first half]        rna <- z[middle half]        image <- z[last half]

so part of the hazard signal is reachable only through the rna path (it
rewards a usable encoder latent space) and part only through the image
branch (it rewards balanced training). noise_g scales the cnv_mut and rna
noise jointly, noise_p the image noise.

The default hazard coefficients are weighted by window membership —
genomic-only latent dims carry the most hazard, dims the image window
shares with a genomic window carry slightly less, image-only dims the
least. Together with noise_p >> noise_g this makes the genomic side
dominant by construction while leaving the image branch real (weaker)
signal to recover.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .survival import SurvivalRecord

_CENSOR_TOL = 0.02      # calibration stops when within this of the target
_CENSOR_MAX_SCALE = 1e12


def modality_spans(latent_dim: int) -> tuple[range, range, range]:
    """Three half-width windows: leading, centered, trailing."""
    w = max(1, (latent_dim + 1) // 2)
    mid = (latent_dim - w) // 2
    return (range(0, w), range(mid, mid + w), range(latent_dim - w, latent_dim))


def default_hazard_coef(latent_dim: int) -> np.ndarray:
    """Window-weighted hazard coefficients: genomic-only dims 1.2x a base of
    1.5/sqrt(latent_dim), dims shared between a genomic window and the image
    window 0.9x, image-only dims 0.5x."""
    span_g, span_r, span_p = modality_spans(latent_dim)
    genomic = set(span_g) | set(span_r)
    base = 1.5 / np.sqrt(latent_dim)
    coef = np.empty(latent_dim)
    for i in range(latent_dim):
        if i not in span_p:
            coef[i] = 1.2 * base
        elif i in genomic:
            coef[i] = 0.9 * base
        else:
            coef[i] = 0.5 * base
    return coef


@dataclass
class CohortSpec:
    n_patients: int = 600
    latent_dim: int = 8
    dim_cnv_mut: int = 32
    dim_rna: int = 64
    dim_image: int = 32
    noise_g: float = 0.3
    noise_p: float = 1.2
    censor_fraction_target: float = 0.3
    hazard_coef: np.ndarray | None = None   # default: window-weighted, see default_hazard_coef
    seed: int = 0
    share_maps: bool = False  # image reuses the cnv_mut map/window (symmetry probe)

    def __post_init__(self):
        if min(self.n_patients, self.latent_dim, self.dim_cnv_mut,
               self.dim_rna, self.dim_image) <= 0:
            raise ValidationError("all cohort counts and dims must be positive")
        if self.noise_g < 0 or self.noise_p < 0:
            raise ValidationError("noise scales must be non-negative")
        if not 0.0 <= self.censor_fraction_target < 1.0:
            raise ValidationError(
                f"censor target must lie in [0, 1), got {self.censor_fraction_target}")
        if self.hazard_coef is None:
            self.hazard_coef = default_hazard_coef(self.latent_dim)
        else:
            self.hazard_coef = np.asarray(self.hazard_coef, dtype=np.float64).reshape(-1)
            if self.hazard_coef.size != self.latent_dim:
                raise ValidationError(
                    f"hazard_coef has {self.hazard_coef.size} entries, "
                    f"latent_dim is {self.latent_dim}")
        if self.share_maps and self.dim_image != self.dim_cnv_mut:
            raise ValidationError("share_maps requires dim_image == dim_cnv_mut")


def _modality_maps(spec: CohortSpec):
    span_g, span_r, span_p = modality_spans(spec.latent_dim)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xC0]))
    scale = lambda span: 1.0 / np.sqrt(len(span))
    a_cnv = rng.normal(0.0, scale(span_g), size=(spec.dim_cnv_mut, len(span_g)))
    a_rna = rng.normal(0.0, scale(span_r), size=(spec.dim_rna, len(span_r)))
    a_img = rng.normal(0.0, scale(span_p), size=(spec.dim_image, len(span_p)))
    if spec.share_maps:
        a_img, span_p = a_cnv, span_g
    return (a_cnv, span_g), (a_rna, span_r), (a_img, span_p)


def generate_cohort(spec: CohortSpec) -> list[SurvivalRecord]:
    """Draw the cohort; a pure function of the spec (seed included).

    Every patient consumes an independent RNG stream keyed by
    (seed, patient index), so generation order cannot leak between rows.
    """
    (a_cnv, sp_g), (a_rna, sp_r), (a_img, sp_p) = _modality_maps(spec)
    n = spec.n_patients
    survival = np.empty(n)
    censor_u = np.empty(n)
    features = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xC1, i]))
        z = rng.normal(size=spec.latent_dim)
        h = float(spec.hazard_coef @ z)
        survival[i] = rng.exponential(scale=np.exp(-h))
        censor_u[i] = max(rng.uniform(), 1e-12)
        x_cnv = a_cnv @ z[sp_g] + spec.noise_g * rng.normal(size=spec.dim_cnv_mut)
        x_rna = a_rna @ z[sp_r] + spec.noise_g * rng.normal(size=spec.dim_rna)
        x_img = a_img @ z[sp_p] + spec.noise_p * rng.normal(size=spec.dim_image)
        features.append((x_cnv, x_rna, x_img))

    c_scale = _calibrate_censor_scale(survival, censor_u, spec.censor_fraction_target)
    width = len(str(n - 1))
    records = []
    for i in range(n):
        censor_time = censor_u[i] * c_scale
        event = survival[i] <= censor_time
        observed = min(survival[i], censor_time)
        x_cnv, x_rna, x_img = features[i]
        records.append(SurvivalRecord(
            id=f"p{i:0{width}d}", time=observed, event=bool(event),
            cnv_mut=x_cnv, rna=x_rna, image=x_img))
    return records


def _calibrate_censor_scale(survival, censor_u, target: float) -> float:
    """Bisect the censor-time scale c so that mean(u*c < T) ~ target.

    The censored fraction is non-increasing in c and steps in units of 1/n,
    so the bisection lands within 1/n of the target unless the bracket
    cannot be established.
    """
    frac = lambda c: float(np.mean(censor_u * c < survival))
    lo, hi = 1e-9, 1.0
    while frac(hi) > target:
        hi *= 10.0
        if hi > _CENSOR_MAX_SCALE:
            raise ValidationError(
                f"censor calibration failed: target {target} unreachable "
                f"(scale bound {_CENSOR_MAX_SCALE} exceeded)")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if abs(frac(mid) - target) <= min(_CENSOR_TOL, 1.0 / survival.size):
            return mid
        if frac(mid) > target:
            lo = mid
        else:
            hi = mid
    return hi   # frac(hi) <= target and the gap is at most one step of 1/n


# ---------------------------------------------------------------------------
# cross-validation folds


@dataclass
class FoldPlan:
    k: int
    assignments: dict[str, int] = field(default_factory=dict)

    def fold_of(self, record_id: str) -> int:
        return self.assignments[record_id]

    def test_ids(self, fold: int) -> list[str]:
        return [rid for rid, f in self.assignments.items() if f == fold]

    def save(self, path: str) -> None:
        tmp = path + ".partial"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"k": self.k, "assignments": self.assignments}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "FoldPlan":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(k=int(raw["k"]),
                   assignments={str(k): int(v) for k, v in raw["assignments"].items()})


def split_folds(records: list[SurvivalRecord], k: int, seed: int) -> FoldPlan:
    """Seeded shuffle + round robin, then swap repairs until every fold's
    test split holds at least one uncensored record."""
    n = len(records)
    if k < 2:
        raise ValidationError("k must be at least 2")
    if n < k:
        raise ValidationError(f"cannot split {n} records into {k} folds")
    n_events = sum(r.event for r in records)
    if n_events < k:
        raise ValidationError(
            f"only {n_events} uncensored records for {k} folds; "
            "every fold needs at least one")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF01D]))
    order = rng.permutation(n)
    fold_of_pos = {int(order[i]): i % k for i in range(n)}

    members = [[] for _ in range(k)]
    for pos, fold in fold_of_pos.items():
        members[fold].append(pos)
    event_count = [sum(records[p].event for p in ms) for ms in members]
    # repair: move one uncensored record from the richest fold into each
    # empty fold, swapping a censored one back to keep sizes intact
    for fold in range(k):
        while event_count[fold] == 0:
            donor = max(range(k), key=lambda f: event_count[f])
            if event_count[donor] < 2:
                raise ValidationError("fold repair failed: events too scarce")
            take = next(p for p in sorted(members[donor]) if records[p].event)
            give = next(p for p in sorted(members[fold]) if not records[p].event)
            members[donor].remove(take)
            members[fold].remove(give)
            members[donor].append(give)
            members[fold].append(take)
            event_count[donor] -= 1
            event_count[fold] += 1
    assignments = {}
    for fold, ms in enumerate(members):
        for p in ms:
            assignments[records[p].id] = fold
    return FoldPlan(k=k, assignments=assignments)


def fold_split(records: list[SurvivalRecord], plan: FoldPlan, fold: int):
    """(train, test) record lists for one held-out fold."""
    if not 0 <= fold < plan.k:
        raise ValidationError(f"fold {fold} outside [0, {plan.k})")
    train = [r for r in records if plan.assignments[r.id] != fold]
    test = [r for r in records if plan.assignments[r.id] == fold]
    return train, test


# ---------------------------------------------------------------------------
# CSV round trip


def save_cohort(path: str, records: list[SurvivalRecord]) -> None:
    if not records:
        raise ValidationError("refusing to write an empty cohort")
    dg = records[0].cnv_mut.size
    dr = records[0].rna.size
    dp = records[0].image.size
    header = (["id", "time", "event"]
              + [f"g{i}" for i in range(dg)]
              + [f"r{i}" for i in range(dr)]
              + [f"p{i}" for i in range(dp)])
    tmp = path + ".partial"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in records:
            writer.writerow([r.id, repr(r.time), int(r.event)]
                            + [repr(float(v)) for v in r.cnv_mut]
                            + [repr(float(v)) for v in r.rna]
                            + [repr(float(v)) for v in r.image])
    os.replace(tmp, path)


def _header_dims(header: list[str], path: str) -> tuple[int, int, int]:
    if header[:3] != ["id", "time", "event"]:
        raise ValidationError(f"{path}: header must start with id,time,event")
    counts = {"g": 0, "r": 0, "p": 0}
    for col in header[3:]:
        kind, idx = col[:1], col[1:]
        if kind not in counts or idx != str(counts[kind]):
            raise ValidationError(f"{path}: unexpected column '{col}'")
        counts[kind] += 1
    if min(counts.values()) == 0:
        raise ValidationError(f"{path}: every modality needs at least one column")
    return counts["g"], counts["r"], counts["p"]


def load_cohort(path: str) -> list[SurvivalRecord]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty file")
        dg, dr, dp = _header_dims(header, path)
        records = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 3 + dg + dr + dp:
                raise ValidationError(
                    f"{path}: row {row_no}: expected {3 + dg + dr + dp} fields, "
                    f"got {len(row)}")
            rid = row[0]
            try:
                time = float(row[1])
            except ValueError as exc:
                raise ValidationError(f"{path}: row {row_no}: bad time '{row[1]}'") from exc
            if row[2] not in ("0", "1"):
                raise ValidationError(
                    f"{path}: row {row_no}: event must be 0 or 1, got '{row[2]}'")
            try:
                vals = np.array([float(v) for v in row[3:]])
            except ValueError as exc:
                raise ValidationError(f"{path}: row {row_no}: {exc}") from exc
            if time <= 0 or not np.isfinite(time):
                raise ValidationError(
                    f"{path}: row {row_no}: time must be positive, got {row[1]}")
            records.append(SurvivalRecord(
                id=rid, time=time, event=row[2] == "1",
                cnv_mut=vals[:dg], rna=vals[dg:dg + dr], image=vals[dg + dr:]))
    if not records:
        raise ValidationError(f"{path}: no data rows")
    return records
