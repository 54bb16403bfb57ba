"""Manifest ingestion, windowing, subject folds, subsampling, synthetic corpora.

Signal files are headerless little-endian float32, channel-major
(``num_channels x num_samples``). A manifest is a UTF-8 text file with one
tab-separated record per line::

    signal_path  num_channels  num_samples  sampling_rate_hz  labels  subject_id

``labels`` is a comma-separated list of numbers or ``-`` when absent. Relative
signal paths resolve against the manifest's directory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .config import SyntheticSpec

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Malformed manifest, signal file or data request."""


@dataclass
class Record:
    signal_path: str
    num_channels: int
    num_samples: int
    sampling_rate_hz: float
    labels: Optional[tuple] = None
    subject_id: str = ""

    def read(self) -> np.ndarray:
        raw = np.fromfile(self.signal_path, dtype="<f4")
        return raw.reshape(self.num_channels, self.num_samples)


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    path: Optional[str] = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def num_channels(self) -> Optional[int]:
        return self.records[0].num_channels if self.records else None

    @property
    def sampling_rate_hz(self) -> Optional[float]:
        return self.records[0].sampling_rate_hz if self.records else None

    @property
    def num_targets(self) -> int:
        for r in self.records:
            if r.labels is not None:
                return len(r.labels)
        return 0

    def subset(self, indices: Sequence[int]) -> "DatasetManifest":
        return DatasetManifest([self.records[i] for i in indices], self.path)


@dataclass
class SignalWindow:
    values: np.ndarray  # [channels, window_len], float32
    source_record: int
    start_sample: int
    labels: Optional[np.ndarray] = None


@dataclass
class FoldSplit:
    fold_assignment: dict  # record index -> fold id
    val_fold: int
    num_folds: int

    def train_indices(self) -> list:
        return sorted(i for i, f in self.fold_assignment.items() if f != self.val_fold)

    def val_indices(self) -> list:
        return sorted(i for i, f in self.fold_assignment.items() if f == self.val_fold)


# ---------------------------------------------------------------------------
# manifest I/O


def _parse_labels(text: str, lineno: int) -> Optional[tuple]:
    text = text.strip()
    if text == "-":
        return None
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise DataError(f"line {lineno}: malformed label vector {text!r}") from None


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and eagerly validate a manifest file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 6:
            raise DataError(f"line {lineno}: expected 6 tab-separated fields, got {len(parts)}")
        sig, nch, nsamp, rate, labels, subject = parts
        try:
            nch_i, nsamp_i, rate_f = int(nch), int(nsamp), float(rate)
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric shape or rate field") from None
        if nch_i < 1 or nsamp_i < 1:
            raise DataError(f"line {lineno}: channel and sample counts must be positive")
        if rate_f <= 0:
            raise DataError(f"line {lineno}: sampling_rate_hz must be positive")
        sig_path = Path(sig)
        if not sig_path.is_absolute():
            sig_path = path.parent / sig_path
        records.append(
            Record(str(sig_path), nch_i, nsamp_i, rate_f, _parse_labels(labels, lineno), subject.strip())
        )
    manifest = DatasetManifest(records, str(path))
    validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: DatasetManifest) -> None:
    if not manifest.records:
        return
    first = manifest.records[0]
    for idx, rec in enumerate(manifest.records):
        if rec.num_channels != first.num_channels:
            raise DataError(f"record {idx}: num_channels {rec.num_channels} differs from {first.num_channels}")
        if rec.sampling_rate_hz != first.sampling_rate_hz:
            raise DataError(f"record {idx}: sampling rate {rec.sampling_rate_hz} differs from {first.sampling_rate_hz}")
        p = Path(rec.signal_path)
        if not p.is_file():
            raise DataError(f"record {idx}: signal file not found: {p}")
        expected = rec.num_channels * rec.num_samples * 4
        actual = p.stat().st_size
        if actual != expected:
            raise DataError(f"record {idx}: {p.name} has {actual} bytes, expected {expected}")


def write_manifest(manifest: DatasetManifest, path: str | Path, relative_to: Optional[Path] = None) -> None:
    path = Path(path)
    base = relative_to if relative_to is not None else path.parent
    lines = []
    for rec in manifest.records:
        sig = Path(rec.signal_path)
        try:
            sig = sig.resolve().relative_to(Path(base).resolve())
        except ValueError:
            pass
        labels = "-" if rec.labels is None else ",".join(repr(float(v)) for v in rec.labels)
        lines.append(f"{sig}\t{rec.num_channels}\t{rec.num_samples}\t{rec.sampling_rate_hz!r}\t{labels}\t{rec.subject_id}")
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def write_signal(values: np.ndarray, path: str | Path) -> None:
    np.ascontiguousarray(values, dtype="<f4").tofile(str(path))


# ---------------------------------------------------------------------------
# windowing


def normalize_window(values: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Per-channel z-normalization; constant channels map to zeros."""
    x = values.astype(np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    out = np.where(std > eps, (x - mean) / np.where(std > eps, std, 1.0), 0.0)
    return out.astype(np.float32)


def window_and_normalize(
    manifest: DatasetManifest, window_len: int = 600, stride: Optional[int] = None
) -> Iterator[SignalWindow]:
    """Yield z-normalized windows record by record; trailing partial windows are dropped."""
    stride = window_len if stride is None else stride
    if stride < 1 or window_len < 1:
        raise DataError("window_len and stride must be positive")
    for idx, rec in enumerate(manifest.records):
        if rec.num_samples < window_len:
            log.warning("record %d shorter than window (%d < %d), skipped", idx, rec.num_samples, window_len)
            continue
        signal = rec.read()
        labels = None if rec.labels is None else np.asarray(rec.labels, dtype=np.float32)
        for start in range(0, rec.num_samples - window_len + 1, stride):
            yield SignalWindow(normalize_window(signal[:, start:start + window_len]), idx, start, labels)


@dataclass
class WindowSet:
    """Dense batch form of a window stream."""

    values: np.ndarray  # [N, C, T]
    record_index: np.ndarray  # [N]
    start_sample: np.ndarray  # [N]
    labels: Optional[np.ndarray] = None  # [N, targets]

    def __len__(self) -> int:
        return len(self.values)

    def take(self, indices) -> "WindowSet":
        indices = np.asarray(indices, dtype=np.int64)
        return WindowSet(
            self.values[indices],
            self.record_index[indices],
            self.start_sample[indices],
            None if self.labels is None else self.labels[indices],
        )


def collect_windows(manifest: DatasetManifest, window_len: int = 600, stride: Optional[int] = None) -> WindowSet:
    wins = list(window_and_normalize(manifest, window_len, stride))
    if not wins:
        channels = manifest.num_channels or 0
        return WindowSet(np.zeros((0, channels, window_len), np.float32), np.zeros(0, np.int64), np.zeros(0, np.int64))
    labels = None
    if all(w.labels is not None for w in wins):
        labels = np.stack([w.labels for w in wins])
    return WindowSet(
        np.stack([w.values for w in wins]),
        np.array([w.source_record for w in wins], dtype=np.int64),
        np.array([w.start_sample for w in wins], dtype=np.int64),
        labels,
    )


# ---------------------------------------------------------------------------
# folds and subsets


def make_folds(manifest: DatasetManifest, num_folds: int = 10, seed: int = 0, val_fold: int = 0) -> FoldSplit:
    """Subject-level fold assignment; fold sizes differ by at most one subject."""
    if num_folds < 2:
        raise DataError("num_folds must be at least 2")
    subjects = sorted({r.subject_id for r in manifest.records})
    if len(subjects) < num_folds:
        raise DataError(f"{len(subjects)} distinct subjects cannot fill {num_folds} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(subjects))
    subject_fold = {subjects[j]: pos % num_folds for pos, j in enumerate(order)}
    assignment = {i: subject_fold[r.subject_id] for i, r in enumerate(manifest.records)}
    return FoldSplit(assignment, val_fold % num_folds, num_folds)


def power_of_two_fractions(count: int) -> list:
    return [1.0 / 2**i for i in range(count)]


def subsample_training_set(num_samples: int, fractions: Sequence[float], seed: int = 0) -> dict:
    """Nested index subsets, one per fraction.

    A single seeded permutation is drawn and each subset is its prefix, so a
    smaller fraction's subset is always contained in a larger one's.
    """
    perm = np.random.default_rng(seed).permutation(num_samples)
    out = {}
    for frac in fractions:
        if not 0.0 < frac <= 1.0:
            raise DataError(f"fraction {frac} outside (0, 1]")
        size = int(round(frac * num_samples))
        if size < 1:
            raise DataError(f"fraction {frac} of {num_samples} samples gives an empty subset")
        out[frac] = np.sort(perm[:size]) if frac < 1.0 else np.arange(num_samples)
    return out


# ---------------------------------------------------------------------------
# synthetic corpora

RATE_BUCKETS = (0.8, 1.2, 1.8, 2.5)  # Hz edges for rate_class
BAND_HZ = (20.0, 30.0)
BAND_AMP = (0.2, 3.0)  # log-uniform amplitude range of the band component


def _pink_noise(rng: np.random.Generator, channels: int, length: int) -> np.ndarray:
    white = rng.standard_normal((channels, length))
    spec = np.fft.rfft(white, axis=-1)
    freqs = np.arange(spec.shape[-1], dtype=np.float64)
    freqs[0] = 1.0
    spec = spec / np.sqrt(freqs)
    noise = np.fft.irfft(spec, n=length, axis=-1)
    return noise / (noise.std(axis=-1, keepdims=True) + 1e-12)


def _band_power(signal: np.ndarray, rate: float, band: tuple) -> float:
    spec = np.abs(np.fft.rfft(signal, axis=-1)) ** 2
    freqs = np.fft.rfftfreq(signal.shape[-1], d=1.0 / rate)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    return float(spec[:, sel].sum() / spec.sum())


def synthesize_records(spec: SyntheticSpec) -> tuple:
    """Generate signals and labels in memory: (signals, labels or None)."""
    if spec.channels < 1:
        raise DataError("synthetic channels must be positive")
    if spec.num_records < 1 or spec.length_samples < 1:
        raise DataError("synthetic num_records and length_samples must be positive")
    rng = np.random.default_rng(spec.seed)
    rate = spec.sampling_rate_hz
    t = np.arange(spec.length_samples) / rate
    signals, base_rates, band_powers = [], [], []
    for _ in range(spec.num_records):
        f0 = rng.uniform(RATE_BUCKETS[0], RATE_BUCKETS[-1])
        gains = rng.normal(1.0, 0.3, size=(spec.channels, 1))
        x = np.zeros((spec.channels, spec.length_samples))
        for h in range(1, 6):
            phase = rng.uniform(0, 2 * np.pi, size=(spec.channels, 1))
            x += gains * (1.0 / h) * np.sin(2 * np.pi * h * f0 * t + phase)
        fb = rng.uniform(BAND_HZ[0] + 1.0, BAND_HZ[1] - 1.0)
        amp = np.exp(rng.uniform(np.log(BAND_AMP[0]), np.log(BAND_AMP[1])))
        band_gain = rng.uniform(0.5, 1.5, size=(spec.channels, 1))
        x += amp * band_gain * np.sin(2 * np.pi * fb * t + rng.uniform(0, 2 * np.pi, size=(spec.channels, 1)))
        x += spec.noise_std * _pink_noise(rng, spec.channels, spec.length_samples)
        signals.append(x.astype(np.float32))
        base_rates.append(f0)
        band_powers.append(_band_power(x, rate, BAND_HZ))
    labels = None
    if spec.task == "band_power":
        med = np.median(band_powers)
        labels = [(float(p > med),) for p in band_powers]
    elif spec.task == "rate_class":
        buckets = np.digitize(base_rates, RATE_BUCKETS[1:-1])
        labels = [tuple(float(b == k) for k in range(len(RATE_BUCKETS) - 1)) for b in buckets]
    return signals, labels


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path, manifest_name: str = "manifest.tsv") -> DatasetManifest:
    """Write a synthetic corpus (signal files + manifest) and return its manifest.

    Signals are per-channel harmonic series at a base rate plus a sinusoid in
    a fixed 20-30 Hz band with log-uniform amplitude, plus pink noise. The
    ``band_power`` label marks records whose relative band power exceeds the
    corpus median; ``rate_class`` one-hot encodes the base-rate bucket.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    signals, labels = synthesize_records(spec)
    records = []
    for i, sig in enumerate(signals):
        name = f"rec{i:06d}.f32"
        write_signal(sig, out_dir / name)
        records.append(
            Record(
                str(out_dir / name),
                spec.channels,
                spec.length_samples,
                float(spec.sampling_rate_hz),
                None if labels is None else labels[i],
                f"s{i // max(spec.records_per_subject, 1):06d}",
            )
        )
    manifest = DatasetManifest(records, str(out_dir / manifest_name))
    write_manifest(manifest, out_dir / manifest_name)
    return manifest


def synthetic_windows(spec: SyntheticSpec, window_len: int = 600) -> WindowSet:
    """In-memory shortcut: synthesize and window without touching disk."""
    signals, labels = synthesize_records(spec)
    vals, recs, starts, labs = [], [], [], []
    for i, sig in enumerate(signals):
        for start in range(0, sig.shape[1] - window_len + 1, window_len):
            vals.append(normalize_window(sig[:, start:start + window_len]))
            recs.append(i)
            starts.append(start)
            if labels is not None:
                labs.append(labels[i])
    return WindowSet(
        np.stack(vals),
        np.array(recs, dtype=np.int64),
        np.array(starts, dtype=np.int64),
        None if labels is None else np.asarray(labs, dtype=np.float32),
    )
