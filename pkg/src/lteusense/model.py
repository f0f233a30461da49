"""Core domain types: MAC register snapshots, dwell-time samples and windows,
LTE-U transmitter configuration, detection reports and slot schedules.

All types are immutable value objects; the operations here are pure functions,
so everything in this module is safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

TICK_HZ = 40_000_000  # MAC state registers tick at 40 MHz
COUNTER_MOD = 2**32  # dwell-time registers are 32-bit and wrap


class LteuSenseError(Exception):
    """Base class for all errors raised by this package."""


class NonMonotonicTimestamps(LteuSenseError):
    """Snapshot timestamps must be strictly increasing."""


class WrapAmbiguity(LteuSenseError):
    """Inter-snapshot gap exceeds one full counter wrap (~107 s at 40 MHz)."""


class InvalidConfig(LteuSenseError):
    """An LteuConfig violates its invariants."""


@dataclass(frozen=True)
class RegisterSnapshot:
    """One raw read of the MAC state registers.

    ``timestamp_ticks`` is logical 64-bit time since trace start; the four
    dwell counters are raw 32-bit register values and wrap; ``ack_fail_total``
    counts unacknowledged transmissions and is monotone (64-bit logical).
    """

    timestamp_ticks: int
    tx_ticks: int
    rx_ticks: int
    ed_ticks: int
    idle_ticks: int
    ack_fail_total: int

    def __post_init__(self):
        for name in ("tx_ticks", "rx_ticks", "ed_ticks", "idle_ticks"):
            v = getattr(self, name)
            if not 0 <= v < COUNTER_MOD:
                raise ValueError(f"{name}={v} outside 32-bit register range")
        if self.timestamp_ticks < 0 or self.ack_fail_total < 0:
            raise ValueError("timestamp_ticks and ack_fail_total must be >= 0")


@dataclass(frozen=True)
class MacSample:
    """Per-sample relative dwell times (integer percent) plus failed-TX count."""

    s_tx: int
    s_rx: int
    s_other: int
    s_idle: int
    s_ack_fail: int

    def __post_init__(self):
        for name in ("s_tx", "s_rx", "s_other", "s_idle"):
            v = getattr(self, name)
            if not 0 <= v <= 100:
                raise ValueError(f"{name}={v} outside [0, 100]")
        if self.s_ack_fail < 0:
            raise ValueError("s_ack_fail must be >= 0")
        total = self.s_tx + self.s_rx + self.s_other + self.s_idle
        if not 99 <= total <= 101:
            raise ValueError(f"dwell percentages sum to {total}, expected 100 +/- 1")


@dataclass(frozen=True)
class SampleWindow:
    """An ordered run of MacSamples covering ``len(samples) / sample_rate_hz``
    seconds starting at ``window_start_s``."""

    samples: tuple[MacSample, ...]
    sample_rate_hz: float = 2000.0
    window_start_s: float = 0.0

    def __post_init__(self):
        if len(self.samples) < 2:
            raise ValueError("a window needs at least 2 samples")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be > 0")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class FullLoad:
    """LTE-U transmits through the whole ON phase."""


@dataclass(frozen=True)
class UniformRandomLoad:
    """Each ON phase transmits an independent uniform fraction in [lo, hi]."""

    lo: float
    hi: float


OnLoad = FullLoad | UniformRandomLoad


@dataclass(frozen=True)
class LteuConfig:
    """Duty-cycled LTE-U transmitter: CSAT period, duty cycle, optional
    subframe puncturing inside the ON phase, and an ON-phase load model."""

    csat_period_s: float
    duty_cycle: float
    puncture_period_s: float | None = None
    puncture_len_s: float | None = None
    on_load: OnLoad = field(default_factory=FullLoad)
    tx_power_dbm: float = 24.0

    def validate(self) -> None:
        if self.csat_period_s <= 0:
            raise InvalidConfig("csat_period_s must be > 0")
        if not 0 < self.duty_cycle <= 1:
            raise InvalidConfig("duty_cycle must be in (0, 1]")
        if (self.puncture_period_s is None) != (self.puncture_len_s is None):
            raise InvalidConfig("puncture period and length must be given together")
        if self.puncture_period_s is not None:
            if not 0 < self.puncture_len_s < self.puncture_period_s:
                raise InvalidConfig("need 0 < puncture_len_s < puncture_period_s")
            if self.puncture_period_s > self.duty_cycle * self.csat_period_s:
                raise InvalidConfig("puncture_period_s must fit inside the ON phase")
        if isinstance(self.on_load, UniformRandomLoad):
            lo, hi = self.on_load.lo, self.on_load.hi
            if not (0 < lo <= hi <= 1):
                raise InvalidConfig("uniform load needs 0 < lo <= hi <= 1")

    @property
    def on_len_s(self) -> float:
        return self.duty_cycle * self.csat_period_s


class DetectionStatus:
    """Detection outcome labels (string constants keep JSON output simple)."""

    DETECTED = "detected"
    NO_INTERFERENCE = "no_interference"
    ABORTED = "aborted"


class AbortReason:
    INSUFFICIENT_SAMPLES = "insufficient_samples"
    NO_PERIODIC_SPECTRUM = "no_periodic_spectrum"


@dataclass(frozen=True)
class DetectionReport:
    """Result of running the duty-cycle detector on one window.

    On success (``status == DETECTED``) all estimate fields are populated and
    ``airtime_estimate == 1 - t_on_s * f0_hz``; on abort only ``status`` and
    ``reason`` are meaningful.
    """

    status: str
    reason: str | None = None
    f0_hz: float | None = None
    harmonics_hz: tuple[float, float] | None = None
    t_on_s: float | None = None
    airtime_estimate: float | None = None
    burst_starts_s: tuple[float, ...] | None = None
    link: str | None = None

    @property
    def detected(self) -> bool:
        return self.status == DetectionStatus.DETECTED

    def to_json_dict(self) -> dict:
        out: dict = {"status": self.status}
        if self.reason is not None:
            out["reason"] = self.reason
        if self.detected:
            out["f0_hz"] = self.f0_hz
            out["t_on_ms"] = self.t_on_s * 1000.0
            out["airtime"] = self.airtime_estimate
            out["burst_starts_ms"] = [s * 1000.0 for s in self.burst_starts_s]
        out["link"] = self.link
        return out


@dataclass(frozen=True)
class SlotSchedule:
    """Repeating slot assignment used for per-link discrimination: slot i
    serves ``assignment[i % len(assignment)]`` exclusively."""

    slot_len_s: float
    assignment: tuple[str, ...]

    def __post_init__(self):
        if self.slot_len_s <= 0:
            raise ValueError("slot_len_s must be > 0")
        if not self.assignment:
            raise ValueError("assignment must not be empty")

    def links(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for link in self.assignment:
            seen.setdefault(link, None)
        return tuple(seen)

    def link_at(self, t_s: float) -> str:
        slot = int(t_s / self.slot_len_s)
        return self.assignment[slot % len(self.assignment)]


def _wrap_delta(later: int, earlier: int) -> int:
    return (later - earlier) % COUNTER_MOD


def _integer_percentages(deltas: list[int], elapsed: int) -> list[int]:
    """Apportion tick deltas to integer percents of ``elapsed``.

    Floors plus largest-remainder distribution, so the result sums to the
    rounded exact total (100 whenever the input conserves ticks).
    """
    ratios = [100.0 * d / elapsed for d in deltas]
    target = round(sum(ratios))
    floors = [int(r) for r in ratios]
    remainder = target - sum(floors)
    order = sorted(range(len(ratios)), key=lambda i: ratios[i] - floors[i], reverse=True)
    out = list(floors)
    for i in order[:remainder]:
        out[i] += 1
    return out


def snapshots_to_window(
    snapshots: list[RegisterSnapshot] | tuple[RegisterSnapshot, ...],
    sample_rate_hz: float = 2000.0,
) -> SampleWindow:
    """Turn consecutive register snapshots into normalized dwell-time samples.

    One MacSample per snapshot pair: counter deltas are wrap-corrected modulo
    2**32 and normalized to percent of the actual inter-snapshot interval
    (register polling jitters, so the nominal rate is not assumed).
    """
    if len(snapshots) < 2:
        raise ValueError("need at least 2 snapshots")
    samples = []
    for prev, cur in zip(snapshots, snapshots[1:]):
        elapsed = cur.timestamp_ticks - prev.timestamp_ticks
        if elapsed <= 0:
            raise NonMonotonicTimestamps(
                f"timestamps {prev.timestamp_ticks} -> {cur.timestamp_ticks}"
            )
        if elapsed >= COUNTER_MOD:
            raise WrapAmbiguity(
                f"gap of {elapsed} ticks spans a full counter wrap"
            )
        deltas = [
            _wrap_delta(cur.tx_ticks, prev.tx_ticks),
            _wrap_delta(cur.rx_ticks, prev.rx_ticks),
            _wrap_delta(cur.ed_ticks, prev.ed_ticks),
            _wrap_delta(cur.idle_ticks, prev.idle_ticks),
        ]
        ack_delta = cur.ack_fail_total - prev.ack_fail_total
        if ack_delta < 0:
            raise ValueError("ack_fail_total must be monotone")
        p_tx, p_rx, p_ed, p_idle = _integer_percentages(deltas, elapsed)
        samples.append(MacSample(p_tx, p_rx, p_ed, p_idle, ack_delta))
    return SampleWindow(
        samples=tuple(samples),
        sample_rate_hz=sample_rate_hz,
        window_start_s=snapshots[0].timestamp_ticks / TICK_HZ,
    )
