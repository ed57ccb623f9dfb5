"""Two independent R-peak detectors.

The reference detector follows the classic integrate-and-threshold
design: band-pass 5-15 Hz, five-point derivative, squaring, 150 ms
moving-window integration, adaptive dual thresholds on the integrated
and band-passed signals with search-back at 1.66x the recent mean RR,
a 200 ms refractory period, T-wave rejection by slope comparison within
360 ms, and fiducial refinement to the band-passed local maximum within
+-50 ms.

The test detector is structurally different on purpose: band-pass
0.5-40 Hz, a centered 100 ms moving-RMS envelope, one adaptive
threshold at 0.6x the trailing 2 s envelope maximum, and a 250 ms
refractory period. Disagreement between the two drives the beat-quality
index downstream.

Both detectors run at the native sampling rate with zero-phase
second-order-section filters, are deterministic, and return peak times
in seconds. Thresholds adapt to the signal, so detections are invariant
to positive rescaling of the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import butter, sosfiltfilt

from . import kernels
from .errors import ContractViolationError, UnsupportedRateError

if TYPE_CHECKING:
    from .record_io import EcgRecord

REFERENCE = "reference"
TEST = "test"

REFRACTORY_REFERENCE_S = 0.200
REFRACTORY_TEST_S = 0.250
MWI_WINDOW_S = 0.150
TWAVE_WINDOW_S = 0.360
REFINE_WINDOW_S = 0.050
RMS_WINDOW_S = 0.100
TRAIL_WINDOW_S = 2.0
TEST_THRESHOLD_FRACTION = 0.6
# Adaptive thresholds never drop below this fraction of the global peak;
# guards against flat stretches where running estimates decay to ripple.
THRESHOLD_FLOOR_FRACTION = 1e-3
# The envelope is linear in amplitude (the integrated signal is quadratic),
# so the test detector needs a higher floor: the zero-phase 0.5 Hz highpass
# smears up to ~0.6% of the first beat's envelope across the record start,
# and that tail must stay below the floor or boundary ripple turns into
# detections whose positions depend on how the record was padded.
TEST_FLOOR_FRACTION = 2e-2
MIN_FS_HZ = 100.0
MIN_DURATION_S = 10.0


@dataclass
class RPeakSeries:
    """Strictly increasing R-peak times (seconds) from one detector."""

    times: np.ndarray
    source: str

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.ndim != 1:
            raise ContractViolationError("peak times must be 1-D")
        if self.times.shape[0] > 1 and not np.all(np.diff(self.times) > 0):
            raise ContractViolationError(
                "peak times must be strictly increasing")
        if self.source not in (REFERENCE, TEST):
            raise ContractViolationError(
                f"source must be {REFERENCE!r} or {TEST!r}, "
                f"got {self.source!r}")

    def __len__(self) -> int:
        return self.times.shape[0]

    def between(self, t0: float, t1: float) -> np.ndarray:
        """Peak times within [t0, t1], both ends inclusive."""
        lo = np.searchsorted(self.times, t0, side="left")
        hi = np.searchsorted(self.times, t1, side="right")
        return self.times[lo:hi]


def _check_record(record: EcgRecord) -> None:
    if record.fs < MIN_FS_HZ:
        raise UnsupportedRateError(
            f"sampling rate {record.fs} Hz below the {MIN_FS_HZ:g} Hz "
            f"minimum")
    if record.duration_s < MIN_DURATION_S:
        raise ContractViolationError(
            f"record of {record.duration_s:.3f} s is shorter than the "
            f"{MIN_DURATION_S:g} s minimum")


def _samples_for(duration_s: float, fs: float) -> int:
    # ceil so the spacing in seconds is never below the nominal period
    return int(math.ceil(duration_s * fs - 1e-9))


def _local_maxima(x: np.ndarray) -> np.ndarray:
    # Interior local maxima; the first sample of a plateau wins.
    if x.shape[0] < 3:
        return np.empty(0, dtype=np.int64)
    return (np.flatnonzero((x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:])) + 1
            ).astype(np.int64)


def _bandpass(x: np.ndarray, fs: float, lo: float, hi: float) -> np.ndarray:
    sos = butter(2, [lo, hi], btype="bandpass", output="sos", fs=fs)
    return sosfiltfilt(sos, x)


def detect_reference(record: EcgRecord) -> RPeakSeries:
    """Integrate-and-threshold reference detector (see module docstring)."""
    _check_record(record)
    x = record.samples
    fs = record.fs
    if np.ptp(x) == 0:
        return RPeakSeries(times=np.empty(0), source=REFERENCE)

    bp = _bandpass(x, fs, 5.0, 15.0)

    # Five-point derivative, centered form of (1/8T)(2dx1 + dx2).
    deriv = np.zeros_like(bp)
    deriv[2:-2] = (fs / 8.0) * (2.0 * (bp[3:-1] - bp[1:-3])
                                + (bp[4:] - bp[:-4]))
    squared = deriv * deriv

    n_mwi = max(_samples_for(MWI_WINDOW_S, fs), 1)
    csum = np.concatenate([[0.0], np.cumsum(squared)])
    idx = np.arange(squared.shape[0])
    lo_idx = np.maximum(idx - n_mwi + 1, 0)
    mwi = (csum[idx + 1] - csum[lo_idx]) / (idx - lo_idx + 1)

    cand = _local_maxima(mwi)
    if cand.shape[0] == 0:
        return RPeakSeries(times=np.empty(0), source=REFERENCE)

    # Per-candidate context over the trailing integration window: the
    # band-passed peak that produced the integration peak and the
    # steepest local slope (for the T-wave test).
    abs_bp = np.abs(bp)
    abs_deriv = np.abs(deriv)
    trail_bp = kernels.trailing_max(abs_bp, n_mwi + 1)
    trail_slope = kernels.trailing_max(abs_deriv, n_mwi + 1)
    peaki = mwi[cand]
    peakf = trail_bp[cand]
    slope = trail_slope[cand]

    n_learn = min(int(round(2.0 * fs)), mwi.shape[0])
    spki = float(np.max(mwi[:n_learn]))
    npki = 0.5 * float(np.mean(mwi[:n_learn]))
    spkf = float(np.max(abs_bp[:n_learn]))
    npkf = 0.5 * float(np.mean(abs_bp[:n_learn]))
    floor_i = THRESHOLD_FLOOR_FRACTION * float(np.max(mwi))
    floor_f = THRESHOLD_FLOOR_FRACTION * float(np.max(abs_bp))

    n_ref = _samples_for(REFRACTORY_REFERENCE_S, fs)
    n_twave = _samples_for(TWAVE_WINDOW_S, fs)
    accept = kernels.pt_decide(cand, peaki, peakf, slope,
                               spki, npki, spkf, npkf,
                               floor_i, floor_f, n_ref, n_twave)

    n_refine = _samples_for(REFINE_WINDOW_S, fs)
    fiducials = []
    for c in cand[np.asarray(accept)]:
        lo = max(int(c) - n_mwi, 0)
        prelim = lo + int(np.argmax(bp[lo:int(c) + 1]))
        lo2 = max(prelim - n_refine, 0)
        hi2 = min(prelim + n_refine + 1, bp.shape[0])
        fiducials.append(lo2 + int(np.argmax(bp[lo2:hi2])))

    if not fiducials:
        return RPeakSeries(times=np.empty(0), source=REFERENCE)
    fid = np.unique(np.asarray(fiducials, dtype=np.int64))
    keep = kernels.refractory_pick(fid, np.int64(n_ref))
    times = fid[np.asarray(keep)] / fs
    return RPeakSeries(times=times, source=REFERENCE)


def detect_test(record: EcgRecord) -> RPeakSeries:
    """Envelope-threshold test detector (see module docstring)."""
    _check_record(record)
    x = record.samples
    fs = record.fs
    if np.ptp(x) == 0:
        return RPeakSeries(times=np.empty(0), source=TEST)

    bp = _bandpass(x, fs, 0.5, 40.0)
    n_rms = max(_samples_for(RMS_WINDOW_S, fs), 1)
    env = np.sqrt(uniform_filter1d(bp * bp, size=n_rms, mode="nearest"))

    n_trail = max(_samples_for(TRAIL_WINDOW_S, fs), 1)
    threshold = TEST_THRESHOLD_FRACTION * kernels.trailing_max(env, n_trail)
    floor = TEST_FLOOR_FRACTION * float(np.max(env))

    cand = _local_maxima(env)
    cand = cand[env[cand] > np.maximum(threshold[cand], floor)]
    if cand.shape[0] == 0:
        return RPeakSeries(times=np.empty(0), source=TEST)

    n_ref = _samples_for(REFRACTORY_TEST_S, fs)
    keep = kernels.refractory_pick(cand, np.int64(n_ref))
    times = cand[np.asarray(keep)] / fs
    return RPeakSeries(times=times, source=TEST)
