"""Nine-feature summary of a 60-beat window.

The features, in their fixed declared order:

  bsqi   window quality score (carried in from the quality gate)
  cosen  coefficient of sample entropy of the RR series
  afe    AF evidence: ire - orc - 2*pace
  orc    points in the Lorenz-plot bin containing the origin
  ire    nonempty Lorenz-plot bins outside the origin bin
  pace   premature-beat evidence: surplus of nonempty bins in
         quadrants II/IV over I/III, clamped at zero
  avnn   mean RR interval (ms)
  minrr  minimum RR interval (ms)
  medhr  median heart rate (bpm), 60000 / median RR

COSEn is SampEn(m=1, r=30 ms) + ln(2r) - ln(mean rr), with template
pairs counted over ordered pairs i != j and a 0.5 continuity
substitution for zero counts so regular series stay finite.

The Lorenz plot scatters successive RR-difference pairs
(delta rr_i, delta rr_{i-1}) on a uniform 40 ms grid spanning
+-600 ms per axis; out-of-range points clip to the border bins.
59 RR intervals give 58 differences and 57 plot points.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractViolationError

COSEN_R_MS = 30.0
LORENZ_BIN_MS = 40.0
LORENZ_HALF_EXTENT_MS = 600.0
LORENZ_NBINS = 30
_ORIGIN_BIN = int(LORENZ_HALF_EXTENT_MS // LORENZ_BIN_MS)  # = 15

FEATURE_NAMES = ("bsqi", "cosen", "afe", "orc", "ire", "pace",
                 "avnn", "minrr", "medhr")


def feature_order_checksum() -> str:
    """Fingerprint of the declared feature order, stored in model files."""
    return hashlib.sha256(",".join(FEATURE_NAMES).encode()).hexdigest()


@dataclass
class BeatWindow:
    """One run of 60 consecutive reference peaks."""

    times: np.ndarray
    window_index: int
    bsqi: float = 1.0
    rr: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.ndim != 1 or self.times.shape[0] < 2:
            raise ContractViolationError("a window needs at least 2 peaks")
        self.rr = np.diff(self.times) * 1000.0
        if not np.all(self.rr > 0):
            raise ContractViolationError("window peaks must strictly increase")

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])


@dataclass
class FeatureVector:
    bsqi: float
    cosen: float
    afe: int
    orc: int
    ire: int
    pace: int
    avnn: float
    minrr: float
    medhr: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES],
                        dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "FeatureVector":
        values = list(values)
        if len(values) != len(FEATURE_NAMES):
            raise ContractViolationError(
                f"expected {len(FEATURE_NAMES)} values, got {len(values)}")
        kwargs = {}
        for name, v in zip(FEATURE_NAMES, values):
            kwargs[name] = int(v) if name in ("afe", "orc", "ire", "pace") \
                else float(v)
        return cls(**kwargs)


def _check_rr(rr: np.ndarray) -> np.ndarray:
    rr = np.ascontiguousarray(rr, dtype=np.float64)
    if rr.ndim != 1 or rr.shape[0] != 59:
        raise ContractViolationError(
            f"expected 59 RR intervals, got shape {rr.shape}")
    if not np.all(rr > 0):
        raise ContractViolationError("RR intervals must be positive")
    return rr


def cosen(rr: np.ndarray, r: float = COSEN_R_MS) -> float:
    """Coefficient of sample entropy; r in the units of rr."""
    rr = _check_rr(rr)
    b_pairs, a_pairs = kernels.sampen_pair_counts(rr, r)
    # ordered-pair counts (i != j); zero counts take the 0.5 correction
    b = 2.0 * b_pairs if b_pairs > 0 else 0.5
    a = 2.0 * a_pairs if a_pairs > 0 else 0.5
    sampen = math.log(b) - math.log(a)
    return sampen + math.log(2.0 * r) - math.log(float(np.mean(rr)))


def lorenz_features(rr: np.ndarray) -> tuple[int, int, int, int]:
    """(afe, orc, ire, pace) from the binned Lorenz plot of delta-RR."""
    rr = _check_rr(rr)
    dr = np.diff(rr)
    hist = kernels.lorenz_hist(dr, LORENZ_BIN_MS, LORENZ_HALF_EXTENT_MS,
                               LORENZ_NBINS)
    o = _ORIGIN_BIN
    orc = int(hist[o, o])
    nonempty = hist > 0
    ire = int(np.count_nonzero(nonempty)) - (1 if orc > 0 else 0)
    # Quadrants by bin index: bins at index >= o sit on the non-negative
    # side of the axis (the origin bin spans [0, bin_width) on each axis).
    q1 = int(np.count_nonzero(nonempty[o:, o:])) - (1 if orc > 0 else 0)
    q2 = int(np.count_nonzero(nonempty[:o, o:]))
    q3 = int(np.count_nonzero(nonempty[:o, :o]))
    q4 = int(np.count_nonzero(nonempty[o:, :o]))
    pace = max(0, (q2 + q4) - (q1 + q3))
    afe = ire - orc - 2 * pace
    return afe, orc, ire, pace


def simple_stats(rr: np.ndarray) -> tuple[float, float, float]:
    """(avnn, minrr, medhr); the median of 59 values is the sorted middle."""
    rr = _check_rr(rr)
    avnn = float(np.mean(rr))
    minrr = float(np.min(rr))
    median = float(np.sort(rr)[(rr.shape[0] - 1) // 2])
    return avnn, minrr, 60000.0 / median


def featurize(window: BeatWindow, min_bsqi: float = 0.8) -> FeatureVector:
    """Assemble the nine features for a quality-gated window."""
    if window.bsqi < min_bsqi:
        raise ContractViolationError(
            f"window {window.window_index} has bsqi {window.bsqi:.3f} below "
            f"the {min_bsqi} gate; featurize only included windows")
    rr = _check_rr(window.rr)
    c = cosen(rr)
    afe, orc, ire, pace = lorenz_features(rr)
    avnn, minrr, medhr = simple_stats(rr)
    return FeatureVector(bsqi=float(window.bsqi), cosen=c, afe=afe, orc=orc,
                         ire=ire, pace=pace, avnn=avnn, minrr=minrr,
                         medhr=medhr)


def feature_matrix_csv(rows: "list[tuple[str, int, FeatureVector]]") -> str:
    """Serialize (patient_id, window_index, vector) rows as CSV.

    Header is patient_id, window_index, then the nine feature names in
    declared order. Floats use repr so the export is lossless.
    """
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["patient_id", "window_index", *FEATURE_NAMES])
    for patient_id, window_index, vec in rows:
        values = [repr(float(v)) if isinstance(v, float) else str(v)
                  for v in (getattr(vec, name) for name in FEATURE_NAMES)]
        writer.writerow([patient_id, window_index, *values])
    return out.getvalue()
