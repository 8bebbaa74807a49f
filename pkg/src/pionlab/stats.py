"""Error metrics and the nonparametric model-comparison pipeline.

Given paired per-case relative L2 errors of a variant and a baseline, the
pipeline reports: the share of cases the variant wins, a Wilcoxon two
one-sided signed-rank equivalence test against a margin derived from the
baseline (one fifth of its minimal error), a robust effect size (median
difference over the baseline's median absolute deviation) when the models are
not equivalent, and Spearman rank correlation of the error patterns.

The signed-rank null distribution treats each point's sign as an independent
fair coin over the 2^N assignments; ties in |d| receive average ranks.  For
N <= 20 the distribution is evaluated exactly (integer dynamic program over
doubled ranks); beyond that a normal approximation with continuity and tie
corrections is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ComparisonError, ContractError, MetricError

__all__ = [
    "rel_l2", "Summary", "summarize", "pct_negative", "equivalence_margin",
    "wilcoxon_tost", "glass_delta", "spearman_rho", "ComparisonReport",
    "compare_error_sequences",
]

EXACT_LIMIT = 20          # exact 2^N null distribution up to this many pairs
ALPHA = 0.05


def rel_l2(pred: np.ndarray, ref: np.ndarray) -> float:
    """100 * ||pred - ref||_2 / ||ref||_2 over all grid entries."""
    pred, ref = np.asarray(pred, float), np.asarray(ref, float)
    if pred.shape != ref.shape:
        raise ContractError(f"shape mismatch {pred.shape} vs {ref.shape}")
    denom = np.linalg.norm(ref)
    if denom == 0.0:
        raise MetricError("reference grid has zero norm; relative error undefined")
    return 100.0 * float(np.linalg.norm(pred - ref) / denom)


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    median: float
    q1: float
    q3: float


def summarize(errors) -> Summary:
    """Pooled mean/std and quartiles (linear interpolation between ranks)."""
    e = np.asarray(errors, float).ravel()
    if e.size == 0:
        raise ContractError("cannot summarize an empty sequence")
    q1, med, q3 = np.percentile(e, [25.0, 50.0, 75.0])
    return Summary(mean=float(e.mean()), std=float(e.std()),
                   median=float(med), q1=float(q1), q3=float(q3))


def pct_negative(d) -> float:
    d = np.asarray(d, float)
    if d.size == 0:
        raise ContractError("empty difference sequence")
    return 100.0 * float((d < 0).sum()) / d.size


def equivalence_margin(baseline_errors) -> float:
    """One fifth of the smallest baseline error."""
    b = np.asarray(baseline_errors, float)
    return 0.2 * float(b.min())


# ---------------------------------------------------------------------------
# signed-rank machinery


def _average_ranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by the mean rank of the tie group."""
    uniq, inv, counts = np.unique(v, return_inverse=True, return_counts=True)
    start = np.cumsum(counts) - counts
    return (start + (counts + 1) / 2.0)[inv]


def _exact_sf(ranks: np.ndarray, w_plus: float) -> float:
    """P(W+ >= w_plus) by exact counting over all 2^N sign assignments.

    Average ranks are half-integers, so doubled ranks are exact integers and
    the whole distribution is enumerable with an integer convolution.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    if not np.allclose(doubled, 2.0 * ranks, rtol=0, atol=1e-9):
        raise ContractError("ranks are not half-integers")
    total = int(doubled.sum())
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled:
        r = int(r)
        for s in range(total, r - 1, -1):
            if counts[s - r]:
                counts[s] += counts[s - r]
    w2 = int(math.ceil(2.0 * w_plus - 1e-9))
    tail = sum(counts[max(w2, 0):])
    return tail / float(2 ** len(ranks))


def _normal_sf(ranks: np.ndarray, w_plus: float) -> float:
    """Normal approximation with continuity and tie corrections."""
    n = len(ranks)
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, counts = np.unique(ranks, return_counts=True)
    var -= float(((counts**3 - counts).sum())) / 48.0
    if var <= 0.0:
        return 1.0 if w_plus <= mu else 0.0
    z = (w_plus - 0.5 - mu) / math.sqrt(var)
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _signed_rank_sf(ranks: np.ndarray, w_plus: float) -> float:
    if len(ranks) <= EXACT_LIMIT:
        return _exact_sf(ranks, w_plus)
    return _normal_sf(ranks, w_plus)


def wilcoxon_tost(variant_errors, baseline_errors,
                  margin: float) -> tuple[float, float, bool]:
    """Two one-sided signed-rank tests for equivalence of paired errors.

    The lower test ranks |d| and assigns the positive sign where d > -margin;
    the upper test assigns it where d < +margin.  Each one-sided p-value is
    P(W+ >= observed) under equiprobable sign flips; equivalence needs both
    below 0.05.
    """
    v = np.asarray(variant_errors, float)
    b = np.asarray(baseline_errors, float)
    if v.shape != b.shape or v.ndim != 1:
        raise ComparisonError("paired error sequences must be 1-d and equal length")
    if v.size < 5:
        raise ComparisonError(f"need at least 5 pairs, got {v.size}")
    if not margin > 0.0:
        raise ContractError("equivalence margin must be positive")
    d = v - b
    ranks = _average_ranks(np.abs(d))
    w_lower = float(ranks[d > -margin].sum())
    w_upper = float(ranks[d < margin].sum())
    p_lower = _signed_rank_sf(ranks, w_lower)
    p_upper = _signed_rank_sf(ranks, w_upper)
    return p_lower, p_upper, bool(p_lower < ALPHA and p_upper < ALPHA)


def glass_delta(variant_errors, baseline_errors) -> float:
    """median(d) / MAD(baseline): negative when the variant is more accurate."""
    v = np.asarray(variant_errors, float)
    b = np.asarray(baseline_errors, float)
    if v.shape != b.shape:
        raise ComparisonError("paired error sequences must have equal length")
    mad = float(np.median(np.abs(b - np.median(b))))
    if mad == 0.0:
        raise MetricError("baseline MAD is zero; effect size undefined")
    return float(np.median(v - b)) / mad


def spearman_rho(a, b) -> float:
    """Pearson correlation of the average-rank sequences."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape or a.size < 2:
        raise ComparisonError("need two equal-length sequences of size >= 2")
    ra, rb = _average_ranks(a), _average_ranks(b)
    if ra.std() == 0.0 or rb.std() == 0.0:
        raise MetricError("rank variance is zero; correlation undefined")
    return float(np.corrcoef(ra, rb)[0, 1])


# ---------------------------------------------------------------------------
# full comparison record


@dataclass
class ComparisonReport:
    """The per-comparison record: one row of the statistical-comparison table."""

    pct_negative: float
    margin: float
    p_lower: float
    p_upper: float
    equivalent: bool
    median_diff: float
    glass_delta: float | None     # populated only when not equivalent
    spearman_rho: float

    def as_dict(self) -> dict:
        return {
            "pct_negative": self.pct_negative,
            "margin": self.margin,
            "p_lower": self.p_lower,
            "p_upper": self.p_upper,
            "equivalent": self.equivalent,
            "median_diff": self.median_diff,
            "glass_delta": self.glass_delta,
            "spearman_rho": self.spearman_rho,
        }

    def text(self) -> str:
        rows = [
            ("Percentage (%)", f"{self.pct_negative:.2f}"),
            ("Equivalence Margin (%)", f"{self.margin:.6g}"),
            ("p (lower)", f"{self.p_lower:.6g}"),
            ("p (upper)", f"{self.p_upper:.6g}"),
            ("Equivalent or Not", "Yes" if self.equivalent else "No"),
            ("Median Difference (%)", f"{self.median_diff:.6g}"),
            ("Glass's Delta", "--" if self.glass_delta is None
             else f"{self.glass_delta:.4g}"),
            ("Spearman's rho", f"{self.spearman_rho:.4g}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def compare_error_sequences(variant_errors, baseline_errors,
                            margin: float | None = None) -> ComparisonReport:
    """Run the whole comparison pipeline on paired error sequences."""
    v = np.asarray(variant_errors, float)
    b = np.asarray(baseline_errors, float)
    if margin is None:
        margin = equivalence_margin(b)
    d = v - b
    p_lo, p_up, equivalent = wilcoxon_tost(v, b, margin)
    return ComparisonReport(
        pct_negative=pct_negative(d),
        margin=float(margin),
        p_lower=p_lo,
        p_upper=p_up,
        equivalent=equivalent,
        median_diff=float(np.median(d)),
        glass_delta=None if equivalent else glass_delta(v, b),
        spearman_rho=spearman_rho(v, b),
    )
