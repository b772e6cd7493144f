"""Anomaly ground-truth generation from incident reports and slowdown speeds.

Incident reports are noisy: some describe events with no traffic impact,
some arrive late, and many incidents are never reported. The denoising
procedure cross-checks reports against the slowdown-speed signal and emits
a cleaned anomaly label matrix:

* a slowdown threshold is set so that the top n% of slowdown values count
  as abnormal (ASD);
* a report episode is kept only if at least one abnormal cell falls inside
  it (SIR) -- kept episodes retain their full reported span;
* abnormal runs persisting at least ``theta_t`` slots are prolonged
  significant anomalies (PSA); cells of such runs outside kept reports are
  the added, previously unreported anomalies (ADD);
* n is adjusted by +/- alpha until the fraction of removed report cells and
  the fraction of added cells both sit under their thresholds, and the
  final labels are ANO = SIR | ADD.

Ahead-labeling then extends every anomaly episode backwards by
``theta_ahead`` slots so detectors see early-stage samples that reports,
being late, never cover.

All matrices are day rows by time-of-day columns; episodes never cross a
day boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .validation import as_binary_matrix, as_float_array, check_fraction


class UnreasonableThresholdsError(ValueError):
    """Removal and addition constraints were violated at the same iterate."""


class DenoiseDivergedError(RuntimeError):
    """The percentile adjustment loop ran out of iterations."""

    def __init__(self, message: str, trace: list[tuple[float, float, float]]):
        super().__init__(message)
        self.trace = trace


@dataclass
class LabelBundle:
    """Denoised label matrices plus the audit trail of the adjustment loop."""

    inc: np.ndarray
    asd: np.ndarray
    sir: np.ndarray
    psa: np.ndarray
    add: np.ndarray
    ano: np.ndarray
    theta_sd: float
    n_final: float
    rm_pct: float
    add_pct: float
    iterations: int
    converged: bool
    trace: list[tuple[float, float, float]] = field(default_factory=list)
    aan: np.ndarray | None = None

    def with_ahead(self, theta_ahead: int) -> "LabelBundle":
        return replace(self, aan=ahead_label(self.ano, theta_ahead))


def episodes(row: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of ones in a binary row as [start, stop) pairs."""
    padded = np.concatenate(([0], np.asarray(row, dtype=np.int8), [0]))
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    stops = np.flatnonzero(diff == -1)
    return list(zip(starts.tolist(), stops.tolist()))


def abnormal_slowdown(sd: np.ndarray, n: float) -> tuple[float, np.ndarray]:
    """Threshold exceeded by the top n% of slowdown values, and its mask.

    Uses the linear-interpolation percentile, so the threshold is the
    (100 - n)-th percentile of all cells. A zero threshold would flag every
    cell (slowdown is nonnegative), which is degenerate.
    """
    sd = as_float_array(sd, "sd", ndim=2, allow_nan=False)
    if not (0.0 < n < 100.0):
        raise ValueError(f"percentile share n={n} must lie in (0, 100)")
    theta = float(np.percentile(sd, 100.0 - n))
    if theta <= 0.0:
        raise ValueError(
            "slowdown threshold degenerates to zero (every cell would be abnormal); "
            "exclude this segment or check its upstream set"
        )
    return theta, (sd >= theta).astype(np.int8)


def keep_significant_reports(inc: np.ndarray, asd: np.ndarray) -> np.ndarray:
    """Report episodes containing at least one abnormal cell, full spans kept."""
    sir = np.zeros_like(inc)
    for day in range(inc.shape[0]):
        for start, stop in episodes(inc[day]):
            if asd[day, start:stop].any():
                sir[day, start:stop] = 1
    return sir


def prolonged_runs(asd: np.ndarray, theta_t: int) -> np.ndarray:
    """Abnormal runs lasting at least ``theta_t`` slots."""
    psa = np.zeros_like(asd)
    for day in range(asd.shape[0]):
        for start, stop in episodes(asd[day]):
            if stop - start >= theta_t:
                psa[day, start:stop] = 1
    return psa


def denoise(
    inc: np.ndarray,
    sd: np.ndarray,
    theta1: float = 0.6,
    theta2: float = 1.0,
    theta_t: int = 3,
    n0: float = 5.0,
    alpha: float = 0.5,
    max_iters: int = 50,
) -> LabelBundle:
    """Run the full report-denoising loop and emit anomaly labels.

    Additions are restricted to prolonged runs: an isolated supra-threshold
    cell shorter than ``theta_t`` is never added, and the addition fraction
    is computed over that restricted set. If the adjusted percentile share
    revisits a value the loop cannot converge; the iterate closest to
    satisfying both constraints (L1 on the violations) is accepted and
    flagged unconverged.
    """
    inc = as_binary_matrix(inc, "inc")
    sd = as_float_array(sd, "sd", ndim=2, allow_nan=False)
    if inc.shape != sd.shape:
        raise ValueError(f"inc shape {inc.shape} != sd shape {sd.shape}")
    check_fraction(theta1, "theta1")
    check_fraction(theta2, "theta2")
    if theta_t < 1:
        raise ValueError("theta_t must be at least 1")
    # With no report cell at all, nothing can be removed (rm% = 0) and any
    # addition is infinitely large relative to the reports, so the loop
    # tightens the threshold until no persistent run survives.
    inc_total = int(inc.sum())

    n = float(n0)
    visited: dict[float, dict] = {}
    trace: list[tuple[float, float, float]] = []
    for iteration in range(1, max_iters + 1):
        key = round(n, 6)
        if key in visited:
            best = min(visited.values(), key=lambda rec: rec["violation"])
            return _bundle(inc, best, iteration - 1, converged=False, trace=trace)
        if not (0.0 < n < 100.0):
            raise DenoiseDivergedError(
                f"percentile share left (0, 100) at n={n}; thresholds appear unreasonable", trace
            )

        theta_sd, asd = abnormal_slowdown(sd, n)
        sir = keep_significant_reports(inc, asd)
        psa = prolonged_runs(asd, theta_t)
        add = (((asd - sir) > 0) & (psa == 1)).astype(np.int8)
        if inc_total:
            rm_pct = 1.0 - sir.sum() / inc_total
            add_pct = add.sum() / inc_total
        else:
            rm_pct = 0.0
            add_pct = float("inf") if add.any() else 0.0
        trace.append((n, rm_pct, add_pct))
        record = {
            "n": n, "theta_sd": theta_sd, "asd": asd, "sir": sir, "psa": psa,
            "add": add, "rm_pct": rm_pct, "add_pct": add_pct,
            "violation": max(rm_pct - theta1, 0.0) + max(add_pct - theta2, 0.0),
        }
        visited[key] = record

        removed_ok = rm_pct <= theta1
        added_ok = add_pct <= theta2
        if removed_ok and added_ok:
            return _bundle(inc, record, iteration, converged=True, trace=trace)
        if not removed_ok and not added_ok:
            raise UnreasonableThresholdsError(
                f"removal {rm_pct:.3f} > {theta1} and addition {add_pct:.3f} > {theta2} at n={n}; "
                "the threshold settings are unreasonable, reinitialize"
            )
        n = n + alpha if not removed_ok else n - alpha

    raise DenoiseDivergedError(
        f"no convergence within {max_iters} iterations; trace of (n, rm%, add%): {trace}", trace
    )


def _bundle(inc, record, iterations, converged, trace) -> LabelBundle:
    ano = (record["sir"] | record["add"]).astype(np.int8)
    return LabelBundle(
        inc=inc,
        asd=record["asd"],
        sir=record["sir"],
        psa=record["psa"],
        add=record["add"],
        ano=ano,
        theta_sd=record["theta_sd"],
        n_final=record["n"],
        rm_pct=record["rm_pct"],
        add_pct=record["add_pct"],
        iterations=iterations,
        converged=converged,
        trace=trace,
    )


def ahead_label(ano: np.ndarray, theta_ahead: int) -> np.ndarray:
    """Extend each anomaly episode ``theta_ahead`` slots backwards.

    Applied once, to the episode starts of the input labels only, and
    clamped at the row start. ``theta_ahead=0`` is the identity.
    """
    ano = as_binary_matrix(ano, "ano")
    if theta_ahead < 0:
        raise ValueError("theta_ahead must be nonnegative")
    aan = ano.copy()
    if theta_ahead == 0:
        return aan
    for day in range(ano.shape[0]):
        for start, _ in episodes(ano[day]):
            aan[day, max(start - theta_ahead, 0):start] = 1
    return aan
