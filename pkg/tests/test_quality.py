"""Agreement scoring, window tiling, and recording exclusion rules."""

import numpy as np
import pytest

from afscreen import quality
from afscreen.errors import ContractViolationError
from afscreen.features import BeatWindow
from afscreen.qrs import RPeakSeries

from conftest import make_series


def make_test_series(times):
    return RPeakSeries(times=np.asarray(times, dtype=np.float64),
                       source="test")


def oracle_bsqi(ref, test, tol):
    """Greedy one-to-one matching, closest pairs first."""
    pairs = sorted(
        ((abs(r - t), r + t, i, j)
         for i, r in enumerate(ref) for j, t in enumerate(test)
         if abs(r - t) <= tol),
    )
    used_r, used_t = set(), set()
    matched = 0
    for _, _, i, j in pairs:
        if i not in used_r and j not in used_t:
            used_r.add(i)
            used_t.add(j)
            matched += 1
    return matched / (len(ref) + len(test) - matched)


# ---------------------------------------------------------------------------
# bsqi


def test_bsqi_identical_series():
    t = np.arange(60) * 0.8
    assert quality.bsqi(t, t) == 1.0


def test_bsqi_one_side_empty():
    t = np.arange(10) * 0.8
    assert quality.bsqi(t, np.empty(0)) == 0.0
    assert quality.bsqi(np.empty(0), t) == 0.0


def test_bsqi_both_empty_rejected():
    with pytest.raises(ContractViolationError):
        quality.bsqi(np.empty(0), np.empty(0))


def test_bsqi_hand_example():
    # Only 1.0 <-> 1.1 matches at 150 ms: 1 / (3 + 3 - 1).
    got = quality.bsqi(np.array([1.0, 2.0, 3.0]),
                       np.array([1.1, 2.3, 5.0]))
    assert got == pytest.approx(0.2)


def test_bsqi_disjoint_is_zero():
    assert quality.bsqi(np.array([1.0, 2.0]), np.array([10.0, 20.0])) == 0.0


def test_bsqi_exact_tolerance_matches():
    # |dt| == tolerance counts as a match.
    assert quality.bsqi(np.array([1.0]), np.array([1.15])) == 1.0


def test_bsqi_unsorted_rejected():
    with pytest.raises(ContractViolationError):
        quality.bsqi(np.array([2.0, 1.0]), np.array([1.0, 2.0]))
    with pytest.raises(ContractViolationError):
        quality.bsqi(np.array([1.0, 2.0]), np.array([2.0, 1.0]))


@pytest.mark.parametrize("seed", range(8))
def test_bsqi_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    ref = np.sort(rng.uniform(0.0, 30.0, size=rng.integers(1, 50)))
    test = np.sort(rng.uniform(0.0, 30.0, size=rng.integers(1, 50)))
    got = quality.bsqi(ref, test)
    want = oracle_bsqi(ref.tolist(), test.tolist(), 0.150)
    assert got == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_bsqi_symmetric(seed):
    rng = np.random.default_rng(100 + seed)
    a = np.sort(rng.uniform(0.0, 20.0, size=30))
    b = np.sort(rng.uniform(0.0, 20.0, size=25))
    assert quality.bsqi(a, b) == quality.bsqi(b, a)


@pytest.mark.parametrize("seed", range(8))
def test_bsqi_in_unit_interval(seed):
    rng = np.random.default_rng(200 + seed)
    a = np.sort(rng.uniform(0.0, 10.0, size=rng.integers(1, 40)))
    b = np.sort(rng.uniform(0.0, 10.0, size=rng.integers(1, 40)))
    assert 0.0 <= quality.bsqi(a, b) <= 1.0


def test_bsqi_custom_tolerance():
    ref = np.array([1.0, 2.0])
    test = np.array([1.3, 2.3])
    assert quality.bsqi(ref, test, tolerance_s=0.2) == 0.0
    assert quality.bsqi(ref, test, tolerance_s=0.3) == 1.0


# ---------------------------------------------------------------------------
# window partitioning


def test_window_partition_drops_remainder():
    peaks = make_series(np.arange(123) * 0.8)
    windows = quality.window_partition(peaks)
    assert [w.window_index for w in windows] == [0, 1]
    np.testing.assert_array_equal(windows[0].times, peaks.times[:60])
    np.testing.assert_array_equal(windows[1].times, peaks.times[60:120])


def test_window_partition_exact_multiple():
    peaks = make_series(np.arange(180) * 0.8)
    windows = quality.window_partition(peaks)
    assert len(windows) == 3
    assert windows[2].t_start == pytest.approx(120 * 0.8)
    assert windows[2].t_end == pytest.approx(179 * 0.8)


def test_window_partition_too_short_gives_nothing():
    peaks = make_series(np.arange(59) * 0.8)
    assert quality.window_partition(peaks) == []


def test_window_partition_custom_width():
    peaks = make_series(np.arange(10) * 0.8)
    windows = quality.window_partition(peaks, beats=5)
    assert len(windows) == 2
    assert windows[1].times.shape[0] == 5


def test_window_partition_rejects_tiny_width():
    peaks = make_series(np.arange(10) * 0.8)
    with pytest.raises(ContractViolationError):
        quality.window_partition(peaks, beats=1)


# ---------------------------------------------------------------------------
# window scoring


def test_score_windows_perfect_agreement():
    times = np.arange(120) * 0.8
    windows = quality.window_partition(make_series(times))
    scored, verdicts = quality.score_windows(windows, make_test_series(times))
    assert all(w.bsqi == 1.0 for w in scored)
    assert all(v.included for v in verdicts)


def test_score_windows_boundary_bsqi():
    # 48 matching test peaks against 60 reference beats: 48/60 == 0.80,
    # which sits exactly on the inclusive threshold.
    times = np.arange(60) * 0.8
    windows = quality.window_partition(make_series(times))
    scored, verdicts = quality.score_windows(windows, make_test_series(times[:48]))
    assert scored[0].bsqi == pytest.approx(0.8)
    assert verdicts[0].included

    # One match fewer: 47/60 < 0.80, excluded.
    _, verdicts = quality.score_windows(windows, make_test_series(times[:47]))
    assert verdicts[0].bsqi == pytest.approx(47 / 60)
    assert not verdicts[0].included


def test_score_windows_span_is_inclusive():
    times = np.arange(60) * 0.8
    windows = quality.window_partition(make_series(times))
    # Test peaks exactly on the window edges must be scored, not dropped.
    edges = make_test_series([times[0], times[-1]])
    scored, _ = quality.score_windows(windows, edges)
    assert scored[0].bsqi == pytest.approx(2 / 60)


def test_score_windows_ignores_peaks_outside_span():
    times = np.arange(60) * 0.8
    windows = quality.window_partition(make_series(times))
    outside = make_test_series([times[-1] + 5.0, times[-1] + 6.0])
    scored, verdicts = quality.score_windows(windows, outside)
    assert scored[0].bsqi == 0.0
    assert not verdicts[0].included


def test_score_windows_stamps_indices():
    times = np.arange(180) * 0.8
    windows = quality.window_partition(make_series(times))
    _, verdicts = quality.score_windows(windows, make_test_series(times))
    assert [v.window_index for v in verdicts] == [0, 1, 2]


# ---------------------------------------------------------------------------
# recording-level rules


def verdicts(n_bad, n_total):
    return [quality.WindowQuality(window_index=i, bsqi=0.0 if i < n_bad
                                  else 1.0, included=i >= n_bad)
            for i in range(n_total)]


def test_qc_too_few_peaks():
    peaks = make_series(np.arange(999) * 0.8)
    qc = quality.qc_recording(peaks, verdicts(0, 16))
    assert qc.status == quality.TOO_FEW_PEAKS
    assert qc.n_peaks_reference == 999


def test_qc_peak_count_boundary():
    peaks = make_series(np.arange(1000) * 0.8)
    qc = quality.qc_recording(peaks, verdicts(0, 16))
    assert qc.status == quality.ACCEPTED


def test_qc_peak_rule_precedes_noise_rule():
    peaks = make_series(np.arange(999) * 0.8)
    qc = quality.qc_recording(peaks, verdicts(16, 16))
    assert qc.status == quality.TOO_FEW_PEAKS


def test_qc_exclusion_rate_boundary():
    peaks = make_series(np.arange(1000) * 0.8)
    # Exactly 75% excluded is still accepted; the rule is strict.
    qc = quality.qc_recording(peaks, verdicts(3, 4))
    assert qc.exclusion_rate == pytest.approx(0.75)
    assert qc.status == quality.ACCEPTED

    qc = quality.qc_recording(peaks, verdicts(4, 5))
    assert qc.exclusion_rate == pytest.approx(0.8)
    assert qc.status == quality.TOO_NOISY


def test_qc_no_windows_counts_as_clean():
    peaks = make_series(np.arange(1000) * 0.8)
    qc = quality.qc_recording(peaks, [])
    assert qc.exclusion_rate == 0.0
    assert qc.status == quality.ACCEPTED


def test_qc_rejects_unknown_status():
    with pytest.raises(ContractViolationError):
        quality.RecordingQC(n_peaks_reference=0, exclusion_rate=0.0,
                            status="fine")
