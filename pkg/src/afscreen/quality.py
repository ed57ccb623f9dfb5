"""Beat-agreement quality index and recording exclusion rules.

A window's quality is the agreement between the two detectors over its
time span: greedy one-to-one matching within +-150 ms, scored as

    bsqi = n_matched / (n_reference + n_test - n_matched)

Windows tile the reference peak series in runs of exactly 60 beats (a
trailing remainder is dropped). A window is included iff bsqi >= 0.8.
A recording is excluded when it has fewer than 1,000 reference peaks,
or when more than 75% of its windows fall below the bsqi threshold
(strict inequality: exactly 75% excluded is still accepted).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractViolationError
from .features import BeatWindow
from .qrs import RPeakSeries

BSQI_THRESHOLD = 0.8
MATCH_TOLERANCE_S = 0.150
WINDOW_BEATS = 60
MIN_REFERENCE_PEAKS = 1000
MAX_EXCLUSION_RATE = 0.75

ACCEPTED = "accepted"
TOO_FEW_PEAKS = "too_few_peaks"
TOO_NOISY = "too_noisy"


@dataclass
class WindowQuality:
    window_index: int
    bsqi: float
    included: bool


@dataclass
class RecordingQC:
    n_peaks_reference: int
    exclusion_rate: float
    status: str

    def __post_init__(self) -> None:
        if self.status not in (ACCEPTED, TOO_FEW_PEAKS, TOO_NOISY):
            raise ContractViolationError(
                f"unknown QC status {self.status!r}")


def bsqi(ref_times: np.ndarray, test_times: np.ndarray,
         tolerance_s: float = MATCH_TOLERANCE_S) -> float:
    """Agreement score between two peak-time segments, in [0, 1]."""
    ref = np.ascontiguousarray(ref_times, dtype=np.float64)
    test = np.ascontiguousarray(test_times, dtype=np.float64)
    for name, arr in (("reference", ref), ("test", test)):
        if arr.shape[0] > 1 and np.any(np.diff(arr) < 0):
            raise ContractViolationError(f"{name} segment is not sorted")
    n_ref = ref.shape[0]
    n_test = test.shape[0]
    if n_ref + n_test == 0:
        raise ContractViolationError(
            "bsqi is undefined for two empty segments")
    if n_ref == 0 or n_test == 0:
        return 0.0
    matched = int(kernels.greedy_match_count(ref, test, tolerance_s))
    return matched / (n_ref + n_test - matched)


def window_partition(peaks: RPeakSeries,
                     beats: int = WINDOW_BEATS) -> list[BeatWindow]:
    """Tile the reference peaks into consecutive windows of `beats` peaks."""
    if beats < 2:
        raise ContractViolationError("windows need at least 2 beats")
    times = peaks.times
    n_windows = times.shape[0] // beats
    return [BeatWindow(times=times[i * beats:(i + 1) * beats],
                       window_index=i)
            for i in range(n_windows)]


def score_windows(windows: list[BeatWindow], test_peaks: RPeakSeries,
                  threshold: float = BSQI_THRESHOLD,
                  tolerance_s: float = MATCH_TOLERANCE_S,
                  ) -> tuple[list[BeatWindow], list[WindowQuality]]:
    """Score each window's bsqi against the test detector's peaks.

    The test segment for a window is everything the test detector found
    within the window's time span (inclusive). Returns windows with
    their bsqi stamped, alongside the quality verdicts.
    """
    scored: list[BeatWindow] = []
    qualities: list[WindowQuality] = []
    for w in windows:
        seg = test_peaks.between(w.t_start, w.t_end)
        q = bsqi(w.times, seg, tolerance_s)
        scored.append(BeatWindow(times=w.times, window_index=w.window_index,
                                 bsqi=q))
        qualities.append(WindowQuality(window_index=w.window_index, bsqi=q,
                                       included=q >= threshold))
    return scored, qualities


def qc_recording(peaks: RPeakSeries, window_qualities: list[WindowQuality],
                 min_peaks: int = MIN_REFERENCE_PEAKS,
                 max_exclusion_rate: float = MAX_EXCLUSION_RATE,
                 ) -> RecordingQC:
    """Apply the two recording-level rules, peak count first."""
    n_peaks = len(peaks)
    total = len(window_qualities)
    excluded = sum(1 for q in window_qualities if not q.included)
    rate = excluded / total if total else 0.0
    if n_peaks < min_peaks:
        status = TOO_FEW_PEAKS
    elif rate > max_exclusion_rate:
        status = TOO_NOISY
    else:
        status = ACCEPTED
    return RecordingQC(n_peaks_reference=n_peaks, exclusion_rate=rate,
                       status=status)
