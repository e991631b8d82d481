"""Prototype lowpass design, polyphase decomposition and spectral analysis."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FilterDesignError, InfeasibleSpecError, ShapeError
from .remez import remez_lowpass

METHODS = ("equiripple", "kaiser_window")


@dataclass(frozen=True)
class FilterSpec:
    num_channels: int = 8
    num_taps: int = 64
    passband_edge: float = 1 / 16 - 0.03
    stopband_edge: float = 1 / 16 + 0.03
    stopband_atten_db: float = 60.0
    passband_ripple_db: float = 1.0
    method: str = "equiripple"

    def __post_init__(self):
        if self.num_channels < 1 or self.num_taps < 1:
            raise ShapeError("num_channels and num_taps must be positive")
        if self.num_taps % self.num_channels:
            raise ShapeError(
                f"num_taps={self.num_taps} is not a multiple of M={self.num_channels}")
        if not 0.0 < self.passband_edge < self.stopband_edge < 0.5:
            raise InfeasibleSpecError(
                "band edges must satisfy 0 < passband_edge < stopband_edge < 0.5")
        if self.stopband_atten_db <= 0 or self.passband_ripple_db <= 0:
            raise InfeasibleSpecError("attenuation and ripple must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown design method {self.method!r}")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class FirFilter:
    taps: np.ndarray
    spec: FilterSpec = field(default_factory=FilterSpec)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if not np.all(np.isfinite(taps)):
            raise ValueError("filter coefficients must be finite")
        object.__setattr__(self, "taps", taps)

    def __len__(self):
        return len(self.taps)


@dataclass(frozen=True)
class FrequencyResponse:
    grid: np.ndarray
    values: np.ndarray

    @property
    def magnitude_db(self):
        with np.errstate(divide="ignore"):
            return 20 * np.log10(np.abs(self.values))


def evaluate_response(taps, freqs):
    """DTFT of ``taps`` at arbitrary normalized frequencies (cycles/sample)."""
    taps = np.asarray(taps)
    n = np.arange(len(taps))
    return np.exp(-2j * np.pi * np.outer(freqs, n)) @ taps


def frequency_response(h, num_points=8192):
    if num_points < 2:
        raise ValueError("num_points must be >= 2")
    taps = h.taps if isinstance(h, FirFilter) else np.asarray(h, dtype=float)
    grid = np.linspace(0.0, 0.5, int(num_points))
    return FrequencyResponse(grid, evaluate_response(taps, grid))


def measure(h, num_points=8192):
    """Return ``(stopband_atten_db, passband_ripple_db)`` measured on a dense grid."""
    resp = frequency_response(h, num_points)
    mag = np.abs(resp.values)
    spec = h.spec
    stop = mag[resp.grid >= spec.stopband_edge].max()
    passband = mag[resp.grid <= spec.passband_edge]
    atten = -20 * np.log10(max(stop, 1e-300))
    ripple = 20 * np.log10(passband.max() / max(passband.min(), 1e-300))
    return atten, ripple


def meets_spec(h, num_points=8192):
    atten, ripple = measure(h, num_points)
    spec = h.spec
    return atten >= spec.stopband_atten_db - 1.0 and ripple <= spec.passband_ripple_db


def kaiser_beta(atten_db):
    a = atten_db
    if a > 50:
        return 0.1102 * (a - 8.7)
    if a >= 21:
        return 0.5842 * (a - 21) ** 0.4 + 0.07886 * (a - 21)
    return 0.0


def kaiser_num_taps(atten_db, transition):
    """Kaiser's order estimate; ``transition`` in cycles/sample."""
    return int(np.ceil((atten_db - 7.95) / (14.36 * transition) + 1))


def _design_kaiser(spec):
    need = kaiser_num_taps(spec.stopband_atten_db, spec.stopband_edge - spec.passband_edge)
    if spec.num_taps < need:
        raise InfeasibleSpecError(
            f"kaiser window needs about {need} taps for this spec, got {spec.num_taps}")
    n = spec.num_taps
    fc = 0.5 * (spec.passband_edge + spec.stopband_edge)
    t = np.arange(n) - (n - 1) / 2.0
    ideal = 2 * fc * np.sinc(2 * fc * t)
    # Kaiser's beta formula is approximate near the order limit; step the
    # design attenuation up until the measured response clears the spec
    best = None
    for extra in np.arange(0.0, 4.01, 0.5):
        h = ideal * np.kaiser(n, kaiser_beta(spec.stopband_atten_db + extra))
        h = h / h.sum()
        h = 0.5 * (h + h[::-1])
        atten, _ = measure(FirFilter(h, spec))
        if best is None or atten > best[0]:
            best = (atten, h)
        if meets_spec(FirFilter(h, spec)):
            return h
    return best[1]


def _design_equiripple(spec):
    ripple = 10 ** (spec.passband_ripple_db / 20)
    delta_pass = (ripple - 1) / (ripple + 1)
    delta_stop = 10 ** (-spec.stopband_atten_db / 20)
    taps, _ = remez_lowpass(spec.num_taps, spec.passband_edge, spec.stopband_edge,
                            delta_pass / delta_stop, max_iter=20)
    return taps


def design_prototype(spec=None):
    """Design the lowpass prototype shared by both channelizers.

    The result is checked against the spec on an 8192-point grid.  A
    converged equiripple design that misses the spec is a minimax proof of
    infeasibility, so it raises InfeasibleSpecError; a non-converging Remez
    run raises FilterDesignError and the caller may retry with
    ``method="kaiser_window"``.
    """
    spec = spec or FilterSpec()
    if spec.num_taps < 2:
        raise InfeasibleSpecError("a single tap cannot form a lowpass filter")
    if spec.method == "equiripple":
        taps = _design_equiripple(spec)
    else:
        taps = _design_kaiser(spec)
    h = FirFilter(taps, spec)
    if not meets_spec(h):
        atten, ripple = measure(h)
        raise InfeasibleSpecError(
            f"{spec.num_taps} taps reach {atten:.1f} dB stopband / {ripple:.2f} dB ripple; "
            f"spec asks {spec.stopband_atten_db} dB / {spec.passband_ripple_db} dB")
    return h


def design_with_fallback(spec=None):
    spec = spec or FilterSpec()
    try:
        return design_prototype(spec)
    except FilterDesignError:
        fallback = FilterSpec(**{**spec.__dict__, "method": "kaiser_window"})
        return design_prototype(fallback)


def polyphase_decompose(h, M):
    """Split taps into ``M`` branches: branch m holds taps[m], taps[m+M], ..."""
    taps = h.taps if isinstance(h, FirFilter) else np.asarray(h)
    if M < 1 or len(taps) % M:
        raise ShapeError(f"filter length {len(taps)} is not divisible by M={M}")
    return [taps[m::M].copy() for m in range(M)]


def interleave(branches):
    branches = [np.asarray(b) for b in branches]
    out = np.empty(sum(len(b) for b in branches), dtype=np.result_type(*branches))
    M = len(branches)
    for m, b in enumerate(branches):
        out[m::M] = b
    return out


def channel_responses(h, M=None, num_points=1024):
    """Magnitude (dB) of the prototype shifted to each channel centre m/M.

    Returns ``(freqs, mags)`` with freqs over [0, 1) and mags shaped (num_points, M).
    """
    M = M or h.spec.num_channels
    freqs = np.arange(num_points) / num_points
    mags = np.empty((num_points, M))
    for m in range(M):
        vals = evaluate_response(h.taps, freqs - m / M)
        with np.errstate(divide="ignore"):
            mags[:, m] = 20 * np.log10(np.abs(vals))
    return freqs, mags


def save_coefficients(h, path):
    taps = h.taps if isinstance(h, FirFilter) else np.asarray(h)
    text = "".join(f"{t:.17e}\n" for t in taps)
    Path(path).write_text(text, encoding="utf-8")


def load_coefficients(path, spec=None):
    """Read one coefficient per line; blank and ``#`` lines are skipped."""
    taps = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        taps.append(float(line))
    taps = np.array(taps)
    if spec is None:
        spec = FilterSpec(num_taps=len(taps)) if len(taps) % 8 == 0 else FilterSpec(
            num_channels=1, num_taps=len(taps))
    return FirFilter(taps, spec)
