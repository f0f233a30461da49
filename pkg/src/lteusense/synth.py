"""Ground-truth-labeled trace synthesis.

Emulates a WiFi AP's MAC state machine at 40 MHz tick resolution while a
duty-cycled LTE-U transmitter occupies the channel, and samples the resulting
cumulative state counters the way the register-polling hardware would.

Interference regimes:

* strong -- the LTE-U signal trips energy-detect carrier sense, so the AP
  defers during transmitted LTE-U intervals and the deferral time lands in the
  OTHER_BUSY counter.
* medium -- the LTE-U signal is below the ED threshold; the AP transmits
  obliviously and frames overlapping LTE-U energy fail, driving ACK_FAIL and
  retransmissions.
* weak -- no effect.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import (
    COUNTER_MOD,
    TICK_HZ,
    FullLoad,
    InvalidConfig,
    LteuConfig,
    LteuSenseError,
    RegisterSnapshot,
    SlotSchedule,
    UniformRandomLoad,
)


class UnknownLink(LteuSenseError):
    """A schedule references a link with no scenario."""


class Regime(Enum):
    STRONG = "strong"
    MEDIUM = "medium"
    WEAK = "weak"


@dataclass(frozen=True)
class SaturatedLoad:
    """The AP always has a frame queued."""


@dataclass(frozen=True)
class PoissonLoad:
    """Frames arrive as a Poisson process with the given mean rate."""

    rate_hz: float


WifiLoad = SaturatedLoad | PoissonLoad


@dataclass(frozen=True)
class SynthScenario:
    """WiFi-side behavior for one emulated link."""

    regime: Regime
    wifi_load: WifiLoad = field(default_factory=SaturatedLoad)
    mean_frame_airtime_s: float = 0.0015
    max_retries: int = 7
    corruption_prob: float = 1.0
    backoff_mean_s: float = 100e-6
    rng_seed: int = 0

    def __post_init__(self):
        if self.mean_frame_airtime_s <= 0:
            raise ValueError("mean_frame_airtime_s must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not 0 <= self.corruption_prob <= 1:
            raise ValueError("corruption_prob must be in [0, 1]")


@dataclass(frozen=True)
class LteuTimeline:
    """Intervals of actually transmitted LTE-U energy over one trace.

    Puncturing gaps and unloaded tails of ON phases are excluded, so the
    intervals are exactly the time a WiFi energy detector could see.
    """

    on_intervals: tuple[tuple[float, float], ...]
    config: LteuConfig
    duration_s: float

    def transmitted_s(self) -> float:
        return sum(b - a for a, b in self.on_intervals)

    def effective_duty(self) -> float:
        return self.transmitted_s() / self.duration_s


@dataclass(frozen=True)
class GroundTruth:
    """What the synthesizer actually did, for scoring detector output."""

    csat_period_s: float
    configured_duty: float
    effective_duty: float
    duration_s: float
    airtime: float
    per_link: dict[str, float] | None = None

    def to_json_dict(self) -> dict:
        return {
            "csat_period_s": self.csat_period_s,
            "configured_duty": self.configured_duty,
            "effective_duty": self.effective_duty,
            "duration_s": self.duration_s,
            "airtime": self.airtime,
            "per_link": self.per_link,
        }


def build_lteu_timeline(
    config: LteuConfig, duration_s: float, rng: np.random.Generator
) -> LteuTimeline:
    """Lay out the transmitted LTE-U intervals on the CSAT grid.

    Each period starts with an ON phase of ``duty_cycle * csat_period_s``.
    Under a uniform-random load an independent fraction of each ON phase is
    kept, leading-aligned; puncturing gaps are then cut out of the loaded
    part, one per puncture period that fits.
    """
    config.validate()
    if duration_s < config.csat_period_s:
        raise InvalidConfig("duration_s must cover at least one CSAT period")
    load = config.on_load
    intervals: list[tuple[float, float]] = []
    k = 0
    while True:
        start = k * config.csat_period_s
        if start >= duration_s:
            break
        if isinstance(load, UniformRandomLoad):
            frac = float(rng.uniform(load.lo, load.hi))
        else:
            frac = 1.0
        tx_len = frac * config.on_len_s
        pieces = [(start, start + tx_len)]
        if config.puncture_period_s is not None:
            pieces = _punctured(start, tx_len, config.puncture_period_s, config.puncture_len_s)
        for a, b in pieces:
            a, b = a, min(b, duration_s)
            if b - a > 1e-12:
                intervals.append((a, b))
        k += 1
    return LteuTimeline(tuple(intervals), config, duration_s)


def _punctured(start: float, tx_len: float, period: float, gap_len: float):
    """Split [start, start+tx_len) by gaps ending at each multiple of the
    puncture period (so a full ON phase loses floor(tx_len/period) gaps)."""
    pieces = []
    cur = start
    m = 1
    while m * period <= tx_len + 1e-12:
        gap_a = start + m * period - gap_len
        gap_b = start + m * period
        if gap_a - cur > 1e-12:
            pieces.append((cur, gap_a))
        cur = gap_b
        m += 1
    if start + tx_len - cur > 1e-12:
        pieces.append((cur, start + tx_len))
    return pieces


# MAC states tracked by the emulation; RX stays zero (ACK time is folded into
# the frame airtime and only the TX/IDLE/OTHER texture matters downstream).
_TX, _ED, _IDLE = 0, 1, 2


def _ticks(seconds: float) -> int:
    return int(round(seconds * TICK_HZ))


class _Emulator:
    """Single-pass MAC emulation over link-activity spans, in integer ticks."""

    def __init__(self, intervals_ticks, rng):
        self.starts = [a for a, _ in intervals_ticks]
        self.ends = [b for _, b in intervals_ticks]
        self.rng = rng
        self.segments: list[tuple[int, int, int]] = []  # (state, start, end)
        self.ack_ticks: list[int] = []
        self.next_arrival: dict[str, int] = {}

    def _inside(self, t: int) -> int | None:
        i = bisect_right(self.starts, t) - 1
        if i >= 0 and t < self.ends[i]:
            return self.ends[i]
        return None

    def _next_start_after(self, t: int) -> int | None:
        i = bisect_right(self.starts, t)
        return self.starts[i] if i < len(self.starts) else None

    def _overlaps(self, a: int, b: int) -> bool:
        i = bisect_right(self.starts, a) - 1
        if i >= 0 and self.ends[i] > a:
            return True
        return i + 1 < len(self.starts) and self.starts[i + 1] < b

    def _emit(self, state: int, a: int, b: int) -> None:
        if b > a:
            self.segments.append((state, a, b))

    def _gap_ticks(self, mean_s: float) -> int:
        return max(1, _ticks(self.rng.exponential(mean_s)))

    def run_span(self, span_start: int, span_end: int, link: str, sc: SynthScenario) -> None:
        frame = _ticks(sc.mean_frame_airtime_s)
        poisson = isinstance(sc.wifi_load, PoissonLoad)
        if poisson and link not in self.next_arrival:
            self.next_arrival[link] = _ticks(self.rng.exponential(1.0 / sc.wifi_load.rate_hz))
        t = span_start
        while t < span_end:
            if sc.regime is Regime.STRONG:
                on_end = self._inside(t)
                if on_end is not None:
                    e = min(on_end, span_end)
                    self._emit(_ED, t, e)
                    t = e
                    continue
                nxt = self._next_start_after(t)
                limit = span_end if nxt is None else min(span_end, nxt)
            else:
                limit = span_end
            if poisson and self.next_arrival[link] > t:
                e = min(self.next_arrival[link], limit)
                self._emit(_IDLE, t, e)
                t = e
                continue
            gap = self._gap_ticks(sc.backoff_mean_s)
            e = min(t + gap, limit)
            self._emit(_IDLE, t, e)
            if e < t + gap:
                t = e
                continue
            t = e
            finished = self._deliver_frame(t, limit, span_end, frame, sc)
            t = self._t
            if poisson and finished:
                self.next_arrival[link] += _ticks(
                    self.rng.exponential(1.0 / sc.wifi_load.rate_hz)
                )

    def _deliver_frame(self, t, limit, span_end, frame, sc) -> bool:
        """Run one ARQ delivery; returns True when the frame left the queue
        (acked or dropped). Updates self._t with the new time cursor."""
        attempts = sc.max_retries + 1
        while attempts > 0:
            if t + frame > limit:
                # No room before the next ED-sensed burst (or the span ends):
                # hold the frame and let the caller re-evaluate.
                self._emit(_IDLE, t, limit)
                self._t = limit
                return False
            self._emit(_TX, t, t + frame)
            t += frame
            failed = (
                sc.regime is Regime.MEDIUM
                and self._overlaps(t - frame, t)
                and (sc.corruption_prob >= 1.0 or self.rng.random() < sc.corruption_prob)
            )
            if not failed:
                self._t = t
                return True
            self.ack_ticks.append(t)
            attempts -= 1
            if attempts == 0:
                break
            gap = self._gap_ticks(sc.backoff_mean_s)
            e = min(t + gap, limit)
            self._emit(_IDLE, t, e)
            if e < t + gap:
                self._t = e
                return False
            t = e
        self._t = t  # retries exhausted, frame dropped
        return True


def _build_spans(duration_ticks: int, schedule: SlotSchedule | None, links: tuple[str, ...]):
    if schedule is None:
        return [(0, duration_ticks, links[0])]
    slot = _ticks(schedule.slot_len_s)
    spans = []
    t = 0
    idx = 0
    while t < duration_ticks:
        link = schedule.assignment[idx % len(schedule.assignment)]
        e = min(t + slot, duration_ticks)
        if spans and spans[-1][2] == link:  # merge back-to-back slots of one link
            spans[-1] = (spans[-1][0], e, link)
        else:
            spans.append((t, e, link))
        t = e
        idx += 1
    return spans


def _overlap_ticks(starts, ends, a, b) -> int:
    total = 0
    for s, e in zip(starts, ends):
        lo, hi = max(s, a), min(e, b)
        if hi > lo:
            total += hi - lo
    return total


def _ground_truth(spans, intervals_ticks, scenarios, timeline) -> GroundTruth:
    starts = [a for a, _ in intervals_ticks]
    ends = [b for _, b in intervals_ticks]
    per_active: dict[str, int] = {}
    per_blocked: dict[str, float] = {}
    for a, b, link in spans:
        sc = scenarios[link]
        ov = _overlap_ticks(starts, ends, a, b)
        if sc.regime is Regime.STRONG:
            factor = 1.0
        elif sc.regime is Regime.MEDIUM:
            factor = sc.corruption_prob
        else:
            factor = 0.0
        per_active[link] = per_active.get(link, 0) + (b - a)
        per_blocked[link] = per_blocked.get(link, 0.0) + ov * factor
    per_link = {
        link: 1.0 - per_blocked[link] / per_active[link] for link in per_active
    }
    total_active = sum(per_active.values())
    total_blocked = sum(per_blocked.values())
    cfg = timeline.config
    return GroundTruth(
        csat_period_s=cfg.csat_period_s,
        configured_duty=cfg.duty_cycle,
        effective_duty=timeline.effective_duty(),
        duration_s=timeline.duration_s,
        airtime=1.0 - total_blocked / total_active,
        per_link=per_link,
    )


def _segments_to_snapshots(segments, ack_ticks, n_samples, ticks_per_sample, rng):
    counts = np.zeros((n_samples, 3), dtype=np.int64)
    tps = ticks_per_sample
    for state, a, b in segments:
        first = a // tps
        last = (b - 1) // tps
        if first == last:
            counts[first, state] += b - a
        else:
            counts[first, state] += (first + 1) * tps - a
            if last > first + 1:
                counts[first + 1 : last, state] += tps
            counts[last, state] += b - last * tps
    ack_counts = np.zeros(n_samples, dtype=np.int64)
    for tick in ack_ticks:
        ack_counts[min(n_samples - 1, (tick - 1) // tps)] += 1
    offsets = rng.integers(0, COUNTER_MOD, size=4)
    cum = np.zeros((n_samples + 1, 3), dtype=np.int64)
    np.cumsum(counts, axis=0, out=cum[1:])
    ack_cum = np.zeros(n_samples + 1, dtype=np.int64)
    np.cumsum(ack_counts, out=ack_cum[1:])
    snapshots = []
    for k in range(n_samples + 1):
        snapshots.append(
            RegisterSnapshot(
                timestamp_ticks=k * tps,
                tx_ticks=int((offsets[0] + cum[k, _TX]) % COUNTER_MOD),
                rx_ticks=int(offsets[1]),
                ed_ticks=int((offsets[2] + cum[k, _ED]) % COUNTER_MOD),
                idle_ticks=int((offsets[3] + cum[k, _IDLE]) % COUNTER_MOD),
                ack_fail_total=int(ack_cum[k]),
            )
        )
    return snapshots


def _synthesize(scenarios, schedule, timeline, sample_rate_hz, rng):
    if sample_rate_hz <= 0 or timeline.duration_s < 1.0 / sample_rate_hz:
        raise ValueError("timeline must cover at least one sample interval")
    ticks_per_sample = int(round(TICK_HZ / sample_rate_hz))
    n_samples = int(round(timeline.duration_s * sample_rate_hz))
    duration_ticks = n_samples * ticks_per_sample
    intervals_ticks = [
        (_ticks(a), min(_ticks(b), duration_ticks)) for a, b in timeline.on_intervals
    ]
    intervals_ticks = [(a, b) for a, b in intervals_ticks if b > a]
    links = schedule.links() if schedule is not None else tuple(scenarios)
    spans = _build_spans(duration_ticks, schedule, links)
    emu = _Emulator(intervals_ticks, rng)
    for a, b, link in spans:
        emu.run_span(a, b, link, scenarios[link])
    snapshots = _segments_to_snapshots(
        emu.segments, emu.ack_ticks, n_samples, ticks_per_sample, rng
    )
    truth = _ground_truth(spans, intervals_ticks, scenarios, timeline)
    labels: list[str] = [""] * n_samples
    for a, b, link in spans:  # label each sample by the span owning its start tick
        first = math.ceil(a / ticks_per_sample)
        last = min(math.ceil(b / ticks_per_sample), n_samples)
        for k in range(first, last):
            labels[k] = link
    return snapshots, tuple(labels), truth


def synthesize_trace(
    scenario: SynthScenario, timeline: LteuTimeline, sample_rate_hz: float = 2000.0
) -> tuple[list[RegisterSnapshot], GroundTruth]:
    """Emulate one link for the whole trace and sample the counters."""
    rng = np.random.default_rng(scenario.rng_seed)
    snapshots, _, truth = _synthesize(
        {"link": scenario}, None, timeline, sample_rate_hz, rng
    )
    return snapshots, truth


def synthesize_slotted_trace(
    scenarios: dict[str, SynthScenario],
    schedule: SlotSchedule,
    timeline: LteuTimeline,
    sample_rate_hz: float = 2000.0,
) -> tuple[list[RegisterSnapshot], tuple[str, ...], GroundTruth]:
    """Emulate slotted per-link access: within each slot only the owning
    link transmits. Returns per-sample link labels alongside the trace."""
    links = schedule.links()
    for link in links:
        if link not in scenarios:
            raise UnknownLink(f"schedule serves {link!r} but no scenario was given")
    if len(links) == 1:
        # Degenerate schedule: identical to the plain single-link emulation.
        rng = np.random.default_rng(scenarios[links[0]].rng_seed)
        snapshots, labels, truth = _synthesize(
            {links[0]: scenarios[links[0]]}, None, timeline, sample_rate_hz, rng
        )
        return snapshots, labels, truth
    rng = np.random.default_rng([scenarios[link].rng_seed for link in links])
    return _synthesize(scenarios, schedule, timeline, sample_rate_hz, rng)
