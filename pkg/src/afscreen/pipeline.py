"""Per-patient orchestration and cohort batch runs.

One patient flows through: reference detection -> test detection ->
60-beat windowing -> per-window bsqi -> recording-level QC -> features
-> forest inference -> AF burden. The AF burden (afb) is the percentage
of *included* windows classified AF; excluded recordings carry no afb.
A patient is flagged prominent-AF iff afb >= the 20% threshold.

Recordings can also enter as plain RR series (beat times on file); the
dual-detector agreement step then has nothing to compare, so every
window carries bsqi 1.0 and only the peak-count rule can exclude the
recording.

Cohorts run through a process pool. Results are sorted by patient_id
and inference uses no randomness, so output is independent of worker
count and scheduling; per-patient failures land in an error ledger
without aborting the batch.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import quality
from .errors import AfscreenError, ConfigurationError
from .features import featurize
from .forest import ForestModel, LabeledWindow, label_windows, predict_proba
from .qrs import RPeakSeries, detect_reference, detect_test
from .quality import ACCEPTED, TOO_FEW_PEAKS, RecordingQC
from .record_io import (
    AF,
    NON_AF,
    UNKNOWN,
    EcgRecord,
    PatientMeta,
    RhythmAnnotations,
    parse_edf,
    parse_rr_csv,
    parse_wfdb,
)

FORMATS = ("edf", "wfdb", "rr")


@dataclass
class PipelineConfig:
    bsqi_threshold: float = quality.BSQI_THRESHOLD
    afb_threshold_pct: float = 20.0
    match_tolerance_s: float = quality.MATCH_TOLERANCE_S
    min_reference_peaks: int = quality.MIN_REFERENCE_PEAKS
    max_exclusion_rate: float = quality.MAX_EXCLUSION_RATE
    window_beats: int = quality.WINDOW_BEATS
    channel: str | int = "ECG"
    ahi_cutoff: float = 15.0
    ni_margin: float = 0.03
    ni_alpha: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.bsqi_threshold <= 1.0:
            raise ConfigurationError("bsqi threshold must lie in [0, 1]")
        if not 0.0 <= self.afb_threshold_pct <= 100.0:
            raise ConfigurationError("afb threshold must lie in [0, 100]")
        if not 0.0 <= self.max_exclusion_rate <= 1.0:
            raise ConfigurationError("exclusion rate cap must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ManifestEntry:
    path: str
    fmt: str
    patient_id: str
    meta: PatientMeta = field(default_factory=PatientMeta)
    annotations_path: str | None = None


@dataclass
class PatientResult:
    patient_id: str
    qc: RecordingQC
    n_windows_total: int
    n_windows_included: int
    afb: float | None
    prominent_af: bool | None
    per_window: list  # (window_index, bsqi, proba or None, label or None)


@dataclass
class CohortReport:
    n_patients: int
    n_processed: int
    n_excluded: int
    n_prominent: int
    errors: list  # (patient_id, message)


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Load a cohort manifest CSV.

    Required columns: path, format, patient_id. Optional: ahi,
    reference_label, annotations. Relative paths resolve against the
    manifest's own directory.
    """
    path = Path(path)
    base = path.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(
            row for row in fh if not row.startswith("#"))
        required = {"path", "format", "patient_id"}
        fieldnames = set(reader.fieldnames or [])
        if not required <= fieldnames:
            raise ConfigurationError(
                f"manifest must declare columns {sorted(required)}, "
                f"found {sorted(fieldnames)}")
        for i, row in enumerate(reader, start=2):
            fmt = (row["format"] or "").strip().lower()
            if fmt not in FORMATS:
                raise ConfigurationError(
                    f"manifest row {i}: unknown format {row['format']!r} "
                    f"(supported: {', '.join(FORMATS)})")
            pid = (row["patient_id"] or "").strip()
            if not pid:
                raise ConfigurationError(f"manifest row {i}: empty patient_id")
            if pid in seen:
                raise ConfigurationError(
                    f"manifest row {i}: duplicate patient_id {pid!r}")
            seen.add(pid)
            ahi_text = (row.get("ahi") or "").strip()
            label = (row.get("reference_label") or "").strip() or UNKNOWN
            if label not in (AF, NON_AF, UNKNOWN):
                raise ConfigurationError(
                    f"manifest row {i}: reference_label must be {AF!r}, "
                    f"{NON_AF!r}, or empty, got {label!r}")
            meta = PatientMeta(ahi=float(ahi_text) if ahi_text else None,
                               reference_af_label=label)
            ann = (row.get("annotations") or "").strip() or None
            entries.append(ManifestEntry(
                path=str((base / row["path"].strip()).resolve()),
                fmt=fmt,
                patient_id=pid,
                meta=meta,
                annotations_path=str((base / ann).resolve()) if ann else None,
            ))
    return entries


def metas_from_entries(entries: list[ManifestEntry]) -> dict[str, PatientMeta]:
    return {e.patient_id: e.meta for e in entries}


def _load_record(entry: ManifestEntry,
                 config: PipelineConfig) -> EcgRecord:
    if entry.fmt == "edf":
        record = parse_edf(Path(entry.path).read_bytes(),
                           channel=config.channel)
    elif entry.fmt == "wfdb":
        head = Path(entry.path)
        dat = head.with_suffix(".dat")
        record = parse_wfdb(head.read_text(), dat.read_bytes())
    else:
        raise ConfigurationError(f"not a signal format: {entry.fmt}")
    record.patient_id = entry.patient_id
    record.meta = entry.meta
    return record


def _load_annotations(entry: ManifestEntry
                      ) -> tuple[RPeakSeries | None, RhythmAnnotations]:
    """The rhythm truth for a training entry, from its RR CSV."""
    if entry.fmt == "rr":
        ann_path = entry.annotations_path or entry.path
    else:
        ann_path = entry.annotations_path
    if ann_path is None:
        raise ConfigurationError(
            f"patient {entry.patient_id}: training needs rhythm "
            f"annotations, but the manifest row names none")
    peaks, annotations = parse_rr_csv(Path(ann_path).read_text())
    if annotations is None:
        raise ConfigurationError(
            f"patient {entry.patient_id}: {ann_path} has no rhythm column")
    return peaks, annotations


def _finish(patient_id: str, qc: RecordingQC,
            windows, qualities, model: ForestModel,
            config: PipelineConfig) -> PatientResult:
    included = [w for w, q in zip(windows, qualities) if q.included]
    if qc.status == ACCEPTED and not included:
        # nothing survived the gate; report the recording as excluded
        # rather than pretending a burden of zero
        qc = RecordingQC(n_peaks_reference=qc.n_peaks_reference,
                         exclusion_rate=qc.exclusion_rate,
                         status=TOO_FEW_PEAKS)

    per_window = []
    n_af = 0
    for w, q in zip(windows, qualities):
        if qc.status == ACCEPTED and q.included:
            proba = predict_proba(model, featurize(w, config.bsqi_threshold))
            label = AF if proba > 0.5 else NON_AF
            n_af += label == AF
            per_window.append((w.window_index, float(q.bsqi), proba, label))
        else:
            per_window.append((w.window_index, float(q.bsqi), None, None))

    if qc.status != ACCEPTED:
        return PatientResult(patient_id=patient_id, qc=qc,
                             n_windows_total=len(windows),
                             n_windows_included=len(included),
                             afb=None, prominent_af=None,
                             per_window=per_window)
    afb = (100.0 * n_af) / len(included)
    return PatientResult(patient_id=patient_id, qc=qc,
                         n_windows_total=len(windows),
                         n_windows_included=len(included),
                         afb=afb,
                         prominent_af=afb >= config.afb_threshold_pct,
                         per_window=per_window)


def process_patient(record: EcgRecord, model: ForestModel,
                    config: PipelineConfig) -> PatientResult:
    """Run the full signal path for one recording."""
    ref = detect_reference(record)
    test = detect_test(record)
    windows = quality.window_partition(ref, config.window_beats)
    windows, qualities = quality.score_windows(
        windows, test, config.bsqi_threshold, config.match_tolerance_s)
    qc = quality.qc_recording(ref, qualities, config.min_reference_peaks,
                              config.max_exclusion_rate)
    return _finish(record.patient_id, qc, windows, qualities, model, config)


def process_rr(peaks: RPeakSeries, model: ForestModel,
               config: PipelineConfig,
               patient_id: str = "") -> PatientResult:
    """Run the pipeline on an RR series; bsqi is 1.0 throughout."""
    windows = quality.window_partition(peaks, config.window_beats)
    qualities = [quality.WindowQuality(window_index=w.window_index, bsqi=1.0,
                                       included=True) for w in windows]
    qc = quality.qc_recording(peaks, qualities, config.min_reference_peaks,
                              config.max_exclusion_rate)
    return _finish(patient_id, qc, windows, qualities, model, config)


def process_entry(entry: ManifestEntry, model: ForestModel,
                  config: PipelineConfig) -> PatientResult:
    if entry.fmt == "rr":
        peaks, _ = parse_rr_csv(Path(entry.path).read_text())
        return process_rr(peaks, model, config, patient_id=entry.patient_id)
    record = _load_record(entry, config)
    return process_patient(record, model, config)


def _entry_task(args) -> tuple:
    entry, model, config = args
    try:
        return ("ok", process_entry(entry, model, config))
    except (AfscreenError, OSError) as e:
        return ("err", entry.patient_id, f"{type(e).__name__}: {e}")


def run_cohort(entries: list[ManifestEntry], model: ForestModel,
               config: PipelineConfig, workers: int | None = None,
               ) -> tuple[list[PatientResult], CohortReport]:
    """Process every manifest entry; failures go to the error ledger."""
    if workers is None:
        workers = os.cpu_count() or 1
    tasks = [(e, model, config) for e in entries]
    if workers <= 1 or len(entries) <= 1:
        outcomes = [_entry_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_entry_task, tasks))

    results = sorted((o[1] for o in outcomes if o[0] == "ok"),
                     key=lambda r: r.patient_id)
    errors = sorted(((o[1], o[2]) for o in outcomes if o[0] == "err"))
    n_excluded = sum(1 for r in results if r.qc.status != ACCEPTED)
    n_prominent = sum(1 for r in results if r.prominent_af)
    report = CohortReport(n_patients=len(entries),
                          n_processed=len(results),
                          n_excluded=n_excluded,
                          n_prominent=n_prominent,
                          errors=errors)
    return results, report


def collect_training_windows(entries: list[ManifestEntry],
                             config: PipelineConfig,
                             ) -> tuple[list[LabeledWindow], int]:
    """Assemble quality-gated, rhythm-labeled windows for training.

    RR entries use their own rhythm column; signal entries run both
    detectors and need an annotations sidecar named in the manifest.
    Returns the labeled windows plus the count of windows skipped for
    lying outside their recording's annotated span.
    """
    labeled: list[LabeledWindow] = []
    skipped_total = 0
    for entry in entries:
        if entry.fmt == "rr":
            peaks, annotations = _load_annotations(entry)
            windows = quality.window_partition(peaks, config.window_beats)
        else:
            _, annotations = _load_annotations(entry)
            record = _load_record(entry, config)
            ref = detect_reference(record)
            test = detect_test(record)
            windows = quality.window_partition(ref, config.window_beats)
            windows, qualities = quality.score_windows(
                windows, test, config.bsqi_threshold,
                config.match_tolerance_s)
            windows = [w for w, q in zip(windows, qualities) if q.included]
        got, skipped = label_windows(windows, annotations,
                                     patient_id=entry.patient_id,
                                     min_bsqi=config.bsqi_threshold)
        labeled.extend(got)
        skipped_total += skipped
    return labeled, skipped_total


def result_to_dict(result: PatientResult) -> dict:
    """JSON-ready form of one patient's result."""
    return {
        "patient_id": result.patient_id,
        "qc": {
            "status": result.qc.status,
            "n_peaks_reference": result.qc.n_peaks_reference,
            "exclusion_rate": result.qc.exclusion_rate,
        },
        "n_windows_total": result.n_windows_total,
        "n_windows_included": result.n_windows_included,
        "afb": result.afb,
        "prominent_af": result.prominent_af,
        "per_window": [list(row) for row in result.per_window],
    }


def cohort_csv(results: list[PatientResult], header_lines: list[str]) -> str:
    """Cohort summary CSV, one row per patient, sorted by patient_id."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["patient_id", "status", "n_peaks", "exclusion_rate",
                     "n_windows", "n_included", "afb", "prominent_af"])
    for r in results:
        writer.writerow([
            r.patient_id, r.qc.status, r.qc.n_peaks_reference,
            repr(float(r.qc.exclusion_rate)),
            r.n_windows_total, r.n_windows_included,
            "" if r.afb is None else repr(float(r.afb)),
            "" if r.prominent_af is None else str(r.prominent_af).lower(),
        ])
    return buf.getvalue()
