"""Duty-cycle detector: from a window of dwell-time samples to a report with
the interferer's fundamental frequency, effective ON time, burst positions and
the remaining medium airtime.

Stages, composed by :func:`detect`:

1. spurious-signal extraction (energy-detect dwell and failed-TX dwell),
2. density gate (abort when almost nothing was extracted),
3. FFT peak detection of the PWM fundamental and its harmonics,
4. burst clustering in time with outlier suppression,
5. low-pass gap bridging, ON-time and airtime estimation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import filtfilt

from .model import (
    AbortReason,
    DetectionReport,
    DetectionStatus,
    LteuSenseError,
    MacSample,
    SampleWindow,
    SlotSchedule,
)

DENSITY_MIN_FRACTION = 0.01  # abort when <= 1 % of samples carry signal
ZERO_PAD_FACTOR = 4
HARMONIC_TOL_HZ = 0.5
HARMONIC_FLOOR = 0.2  # normalized power a harmonic peak must reach
DOMINANCE_FRACTION = 0.5  # spectral power share that marks a dominant fundamental
BINARIZE_FRACTION = 0.2  # bridge threshold, relative to the smoothed maximum
RUN_MIN_FRACTION = 0.25  # runs shorter than this share of the median are outliers
KMEANS_RESTARTS = 10
SINGLE_CLUSTER_SILHOUETTE = 0.3  # stand-in score for k=1 (silhouette undefined)


class NoPeriodicSpectrum(LteuSenseError):
    """The extracted signal has no credible periodic structure."""


class EmptySignal(LteuSenseError):
    """No usable burst segments survived filtering."""


class InconsistentEstimate(LteuSenseError):
    """ON time and fundamental frequency imply an occupancy above 100 %."""


class InsufficientSlotCoverage(LteuSenseError):
    """A link's slots cover too little of the window to judge it."""


@dataclass(frozen=True)
class ExtractedSignal:
    """Spurious signal r_t: interference-attributable dwell per sample."""

    r: np.ndarray
    nonzero_fraction: float


@dataclass(frozen=True)
class SpectrumPeaks:
    f0_hz: float
    f1_hz: float
    f2_hz: float
    magnitudes: tuple[float, float, float]


@dataclass(frozen=True)
class BurstClusters:
    k: int
    centers_s: tuple[float, ...]
    kept_mask: np.ndarray


def extract_spurious(window: SampleWindow) -> ExtractedSignal:
    """Pull the interference signature out of the raw dwell times.

    Per sample, in order: energy-detect dwell counts when the MAC neither
    transmitted nor received; TX dwell counts when the sample saw a failed
    transmission; TX dwell also counts when an unbroken chain of fully-busy
    TX samples leads to a later failure (evaluated right to left in one
    pass); everything else is noise and maps to zero.
    """
    n = len(window.samples)
    r = np.zeros(n, dtype=float)
    carry = False  # an ACK failure is reachable through an unbroken s_tx == 100 run
    for i in range(n - 1, -1, -1):
        s = window.samples[i]
        if s.s_tx == 0 and s.s_rx == 0:
            r[i] = s.s_other
        elif s.s_ack_fail > 0:
            r[i] = s.s_tx
        elif carry and s.s_tx == 100:
            r[i] = s.s_tx
        if s.s_ack_fail > 0:
            carry = True
        elif not (s.s_tx == 100 and carry):
            carry = False
    nonzero = int(np.count_nonzero(r))
    return ExtractedSignal(r=r, nonzero_fraction=nonzero / n)


def passes_density_gate(sig: ExtractedSignal) -> bool:
    """False signals the weak/no-interference outcome, not a failure."""
    return sig.nonzero_fraction > DENSITY_MIN_FRACTION


def _quadratic_peak(power: np.ndarray, k: int, freqs: np.ndarray) -> float:
    if k <= 0 or k >= len(power) - 1:
        return float(freqs[k])
    y0, y1, y2 = power[k - 1], power[k], power[k + 1]
    denom = y0 - 2 * y1 + y2
    if denom == 0:
        return float(freqs[k])
    delta = 0.5 * (y0 - y2) / denom
    df = freqs[1] - freqs[0]
    return float(freqs[k] + delta * df)


def detect_pwm_frequency(sig: ExtractedSignal, sample_rate_hz: float) -> SpectrumPeaks:
    """Find the PWM fundamental in the power spectrum of r_t.

    Mean removal plus 4x zero padding (the CSAT fundamental usually falls
    between the raw bins of a one-second window) and quadratic interpolation
    around the strongest non-DC bin. Accepts the candidate when harmonics sit
    within +/-0.5 Hz of twice and three times the fundamental, or when the
    fundamental alone concentrates at least half of the spectral power (duty
    cycles near 1/2 or 1/3 null out one of the harmonics).
    """
    n = len(sig.r)
    x = sig.r - sig.r.mean()
    nfft = ZERO_PAD_FACTOR * n
    power = np.abs(np.fft.rfft(x, nfft)) ** 2
    freqs = np.fft.rfftfreq(nfft, d=1.0 / sample_rate_hz)
    resolution = sample_rate_hz / n  # unpadded bin width
    valid = freqs >= resolution * 0.999
    if not np.any(valid & (power > 0)):
        raise NoPeriodicSpectrum("flat spectrum")
    masked = np.where(valid, power, 0.0)
    k0 = int(np.argmax(masked))
    peak_power = power[k0]
    f0 = _quadratic_peak(power, k0, freqs)
    if f0 <= 0:
        raise NoPeriodicSpectrum("no positive-frequency peak")

    def harmonic(h: int) -> tuple[float, float, bool]:
        band = np.flatnonzero(np.abs(freqs - h * f0) <= HARMONIC_TOL_HZ)
        if band.size == 0:
            return h * f0, 0.0, False
        kb = band[int(np.argmax(power[band]))]
        mag = power[kb] / peak_power
        is_local_max = 0 < kb < len(power) - 1 and power[kb] >= power[kb - 1] and power[kb] >= power[kb + 1]
        return _quadratic_peak(power, kb, freqs), float(mag), bool(is_local_max and mag >= HARMONIC_FLOOR)

    f1, m1, ok1 = harmonic(2)
    f2, m2, ok2 = harmonic(3)
    dom_band = np.abs(freqs - f0) <= resolution
    dominance = float(power[dom_band & valid].sum() / masked.sum())
    if not ((ok1 and ok2) or dominance >= DOMINANCE_FRACTION):
        raise NoPeriodicSpectrum(
            f"harmonics absent (mags {m1:.3f}/{m2:.3f}) and fundamental not dominant "
            f"({dominance:.3f})"
        )
    return SpectrumPeaks(f0_hz=f0, f1_hz=f1, f2_hz=f2, magnitudes=(1.0, m1, m2))


def _weighted_kmeans_1d(times, weights, k, rng, tol):
    best_centers = None
    best_inertia = math.inf
    span = times[-1] - times[0]
    for restart in range(KMEANS_RESTARTS):
        if restart == 0:
            centers = times[0] + (np.arange(k) + 0.5) / k * max(span, tol)
        else:
            centers = rng.choice(times, size=k, replace=False, p=weights / weights.sum())
        for _ in range(200):
            assign = np.abs(times[:, None] - centers[None, :]).argmin(axis=1)
            new_centers = centers.copy()
            for j in range(k):
                member = assign == j
                if member.any():
                    new_centers[j] = np.average(times[member], weights=weights[member])
                else:  # re-seed an emptied cluster at the worst-fit point
                    far = int(np.argmax(np.abs(times - centers[assign])))
                    new_centers[j] = times[far]
            moved = np.max(np.abs(new_centers - centers))
            centers = new_centers
            if moved < tol:
                break
        assign = np.abs(times[:, None] - centers[None, :]).argmin(axis=1)
        inertia = float(np.sum(weights * (times - centers[assign]) ** 2))
        if inertia < best_inertia:
            best_inertia = inertia
            best_centers = centers
    assign = np.abs(times[:, None] - best_centers[None, :]).argmin(axis=1)
    return best_centers, assign


def _mean_silhouette(times, assign, k) -> float:
    if k == 1:
        return SINGLE_CLUSTER_SILHOUETTE
    d = np.abs(times[:, None] - times[None, :])
    n = len(times)
    scores = np.zeros(n)
    members = [np.flatnonzero(assign == j) for j in range(k)]
    for i in range(n):
        own = members[assign[i]]
        if own.size <= 1:
            scores[i] = 0.0
            continue
        a = d[i, own].sum() / (own.size - 1)
        b = math.inf
        for j in range(k):
            if j == assign[i] or members[j].size == 0:
                continue
            b = min(b, float(d[i, members[j]].mean()))
        scores[i] = 0.0 if not math.isfinite(b) else (b - a) / max(a, b)
    return float(scores.mean())


def cluster_bursts(
    sig: ExtractedSignal,
    f0_hz: float,
    window_duration_s: float,
    rng: np.random.Generator,
) -> BurstClusters:
    """Locate burst centers by 1-D KMeans over the nonzero sample times.

    The candidate cluster counts bracket the expected bursts per window,
    k0 = ceil(f0 * duration); the silhouette score picks the best, and
    samples farther than twice the median member distance from their center
    are masked out as outliers.
    """
    n = len(sig.r)
    fs = n / window_duration_s
    idx = np.flatnonzero(sig.r > 0)
    if idx.size == 0:
        raise EmptySignal("no nonzero samples to cluster")
    times = idx / fs
    weights = sig.r[idx].astype(float)
    k0 = math.ceil(f0_hz * window_duration_s)
    lo, hi = max(1, k0 - 2), k0 + 2
    candidates = [k for k in range(lo, hi + 1) if k <= times.size]
    if not candidates:  # degenerate: fewer points than any candidate k
        candidates = [times.size]
    tol = 0.5 / fs
    best = None
    for k in candidates:
        centers, assign = _weighted_kmeans_1d(times, weights, k, rng, tol)
        score = _mean_silhouette(times, assign, k)
        if best is None or score > best[0]:
            best = (score, k, centers, assign)
    _, k, centers, assign = best
    kept = np.zeros(n, dtype=bool)
    for j in range(k):
        member = np.flatnonzero(assign == j)
        if member.size == 0:
            continue
        dist = np.abs(times[member] - centers[j])
        cutoff = 2.0 * float(np.median(dist)) + 1e-12
        kept[idx[member[dist <= cutoff]]] = True
    order = np.argsort(centers)
    return BurstClusters(k=k, centers_s=tuple(float(c) for c in centers[order]), kept_mask=kept)


def lowpass_smooth(values: np.ndarray, f0_hz: float, sample_rate_hz: float) -> np.ndarray:
    """Zero-phase first-order low-pass (forward-backward) at cutoff f0."""
    dt = 1.0 / sample_rate_hz
    rc = 1.0 / (2.0 * math.pi * f0_hz)
    alpha = dt / (rc + dt)
    smoothed = filtfilt([alpha], [1.0, alpha - 1.0], np.asarray(values, dtype=float))
    return np.clip(smoothed, 0.0, None)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, end] index runs of True."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [idx.size - 1]))
    return [(int(idx[s]), int(idx[e])) for s, e in zip(starts, ends)]


def estimate_on_time(
    masked_r: np.ndarray, smoothed: np.ndarray, sample_rate_hz: float
) -> float:
    """Mean burst segment duration, with small gaps bridged.

    Segments are maximal runs of nonzero extracted signal; two segments merge
    when the smoothed signal stays above the bridge threshold across the gap
    (puncturing gaps inside an ON phase close this way). Runs touching the
    window boundary are cut off by the window, and runs much shorter than the
    median are noise; both are excluded from the mean.
    """
    peak = float(smoothed.max(initial=0.0))
    if peak <= 0:
        raise EmptySignal("smoothed signal is identically zero")
    theta = BINARIZE_FRACTION * peak
    runs = _runs(np.asarray(masked_r) > 0)
    if not runs:
        raise EmptySignal("no nonzero samples")
    merged = [runs[0]]
    for start, end in runs[1:]:
        prev_start, prev_end = merged[-1]
        gap = smoothed[prev_end + 1 : start]
        if gap.size > 0 and np.all(gap > theta):
            merged[-1] = (prev_start, end)
        else:
            merged.append((start, end))
    last = len(masked_r) - 1
    interior = [(s, e) for s, e in merged if s > 0 and e < last]
    if not interior:
        raise EmptySignal("all segments touch the window boundary")
    lengths = np.array([e - s + 1 for s, e in interior], dtype=float)
    keep = lengths >= RUN_MIN_FRACTION * float(np.median(lengths))
    if not keep.any():
        raise EmptySignal("no segments survive outlier suppression")
    return float(lengths[keep].mean()) / sample_rate_hz


def compute_airtime(t_on_s: float, f0_hz: float) -> float:
    """Effective available medium airtime: 1 - T_ON * f0, clamped to [0, 1]."""
    occupancy = t_on_s * f0_hz
    if occupancy > 1.05:
        raise InconsistentEstimate(
            f"T_ON {t_on_s * 1e3:.1f} ms at {f0_hz:.2f} Hz implies {occupancy:.2f} occupancy"
        )
    return float(min(1.0, max(0.0, 1.0 - occupancy)))


def _aborted(reason: str, link: str | None) -> DetectionReport:
    return DetectionReport(status=DetectionStatus.ABORTED, reason=reason, link=link)


def _run_pipeline(
    sig: ExtractedSignal,
    sample_rate_hz: float,
    duration_s: float,
    rng: np.random.Generator,
    link: str | None,
) -> DetectionReport:
    if not passes_density_gate(sig):
        return _aborted(AbortReason.INSUFFICIENT_SAMPLES, link)
    try:
        peaks = detect_pwm_frequency(sig, sample_rate_hz)
    except NoPeriodicSpectrum:
        return _aborted(AbortReason.NO_PERIODIC_SPECTRUM, link)
    clusters = cluster_bursts(sig, peaks.f0_hz, duration_s, rng)
    masked = np.where(clusters.kept_mask, sig.r, 0.0)
    smoothed = lowpass_smooth(masked, peaks.f0_hz, sample_rate_hz)
    t_on = estimate_on_time(masked, smoothed, sample_rate_hz)
    airtime = compute_airtime(t_on, peaks.f0_hz)
    burst_starts = tuple(c - t_on / 2.0 for c in clusters.centers_s)
    return DetectionReport(
        status=DetectionStatus.DETECTED,
        f0_hz=peaks.f0_hz,
        harmonics_hz=(peaks.f1_hz, peaks.f2_hz),
        t_on_s=t_on,
        airtime_estimate=airtime,
        burst_starts_s=burst_starts,
        link=link,
    )


def detect(window: SampleWindow, rng: np.random.Generator) -> DetectionReport:
    """Run the full pipeline on one window."""
    sig = extract_spurious(window)
    return _run_pipeline(sig, window.sample_rate_hz, window.duration_s, rng, link=None)


_MASKED_SAMPLE = MacSample(0, 0, 0, 100, 0)


def detect_per_link(
    window: SampleWindow,
    labels: tuple[str, ...],
    schedule: SlotSchedule,
    rng: np.random.Generator,
) -> dict[str, DetectionReport]:
    """Per-link detection over a slotted window.

    For each link the samples outside its slots are blanked in place (not
    concatenated), which keeps the CSAT periodicity intact for the FFT; the
    density gate then counts only the link's own samples.
    """
    if len(labels) != len(window.samples):
        raise ValueError("labels must cover all samples")
    reports: dict[str, DetectionReport] = {}
    for link in schedule.links():
        covered = sum(1 for l in labels if l == link)
        if covered < 0.10 * len(labels):
            raise InsufficientSlotCoverage(
                f"link {link!r} covers {covered}/{len(labels)} samples"
            )
        samples = tuple(
            s if labels[i] == link else _MASKED_SAMPLE
            for i, s in enumerate(window.samples)
        )
        masked_window = SampleWindow(samples, window.sample_rate_hz, window.window_start_s)
        sig = extract_spurious(masked_window)
        sig = ExtractedSignal(
            r=sig.r, nonzero_fraction=float(np.count_nonzero(sig.r)) / covered
        )
        reports[link] = _run_pipeline(
            sig, window.sample_rate_hz, window.duration_s, rng, link=link
        )
    return reports
