"""Segment ingestion, label schemas, synthetic data, and feature assembly.

Recordings arrive as one comma- or newline-separated text file per band
per segment. A JSON manifest pairs the two band files and carries the
10-class label; the 4-class and 2-class labelings are projections of
it. Feature matrices are cached in a small self-describing binary
container so round-trips are bit-exact.
"""

from __future__ import annotations

import enum
import json
import logging
import re
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DataError,
    DegenerateSpectrumError,
    FormatError,
    InsufficientDataError,
    ParseError,
    RfSentryError,
    SchemaError,
    ShapeError,
)
from .spectrum import (
    Band,
    BandMode,
    _is_power_of_two,
    compute_scaling_factor,
    concatenate_bands,
    segment_spectrum,
    single_band_feature,
)

log = logging.getLogger(__name__)

CASE1_CLASS_NAMES = ("No Drone", "Drone")
CASE2_CLASS_NAMES = ("No Drone", "Bebop", "AR", "Phantom")
CASE3_CLASS_NAMES = (
    "No Drone",
    "Bebop mode 1",
    "Bebop mode 2",
    "Bebop mode 3",
    "Bebop mode 4",
    "AR mode 1",
    "AR mode 2",
    "AR mode 3",
    "AR mode 4",
    "Phantom mode 1",
)

# Published DroneRF segment counts per 10-way class (AR mode 4 ships with
# 18 segments, not 21); reported for comparison, never enforced.
DRONERF_EXPECTED_SEGMENTS = (41, 21, 21, 21, 21, 21, 21, 21, 18, 21)

# DroneRF file stems look like "10011L_42"; the 5-digit code encodes the
# drone type and mode, L/H the band, and the trailing integer the segment.
_BUI_TO_CASE3 = {
    "00000": 0,
    "10000": 1,
    "10001": 2,
    "10010": 3,
    "10011": 4,
    "10100": 5,
    "10101": 6,
    "10110": 7,
    "10111": 8,
    "11000": 9,
}


class Case(enum.Enum):
    """The three classification tasks: presence, presence+type, +mode."""

    I = 1
    II = 2
    III = 3


@dataclass(frozen=True)
class LabelSchema:
    case: Case
    n_classes: int
    class_names: tuple[str, ...]

    @classmethod
    def for_case(cls, case: Case) -> "LabelSchema":
        names = {
            Case.I: CASE1_CLASS_NAMES,
            Case.II: CASE2_CLASS_NAMES,
            Case.III: CASE3_CLASS_NAMES,
        }[case]
        return cls(case=case, n_classes=len(names), class_names=names)

    @classmethod
    def for_n_classes(cls, n_classes: int) -> "LabelSchema":
        by_count = {2: Case.I, 4: Case.II, 10: Case.III}
        if n_classes not in by_count:
            raise SchemaError(f"no label schema with {n_classes} classes")
        return cls.for_case(by_count[n_classes])


@dataclass(frozen=True)
class CaseLabels:
    """Labels for one segment under all three schemas."""

    case1: int
    case2: int
    case3: int

    def for_case(self, case: Case) -> int:
        return {Case.I: self.case1, Case.II: self.case2, Case.III: self.case3}[case]


def label_from_case3(case3: int) -> CaseLabels:
    """Project the 10-way label down the class hierarchy.

    Class ids: 0 = no drone; 1-4 = Bebop modes 1-4; 5-8 = AR modes 1-4;
    9 = Phantom mode 1.
    """
    case3 = int(case3)
    if not (0 <= case3 <= 9):
        raise SchemaError(f"10-way class id must be in 0..9, got {case3}")
    if case3 == 0:
        return CaseLabels(0, 0, 0)
    if 1 <= case3 <= 4:
        return CaseLabels(1, 1, case3)
    if 5 <= case3 <= 8:
        return CaseLabels(1, 2, case3)
    return CaseLabels(1, 3, case3)


@dataclass(frozen=True)
class SegmentRecord:
    """One recorded band of one segment, optionally labeled."""

    segment_id: str
    band: Band
    samples: np.ndarray
    labels: CaseLabels | None = None

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.shape[0] == 0:
            raise InsufficientDataError(
                f"segment {self.segment_id}: needs a non-empty 1-D sample vector"
            )
        if not np.isfinite(samples).all():
            bad = int(np.flatnonzero(~np.isfinite(samples))[0])
            raise DataError(
                f"segment {self.segment_id}: non-finite sample at index {bad}"
            )
        if self.labels is not None and label_from_case3(self.labels.case3) != self.labels:
            raise SchemaError(
                f"segment {self.segment_id}: inconsistent label hierarchy {self.labels}"
            )
        object.__setattr__(self, "samples", samples)


_TOKEN_RE = re.compile(r"[^,\s]+")


def load_segment(path, band: Band) -> SegmentRecord:
    """Read one band file: comma-separated and/or one value per line."""
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise InsufficientDataError(f"{path}: file contains no samples")
    tokens = re.split(r"[,\s]+", text.strip())
    try:
        samples = np.asarray(tokens, dtype=np.float64)
    except ValueError:
        _raise_token_error(path, text)
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        _raise_token_error(path, text, finite_check=True)
    return SegmentRecord(segment_id=path.stem, band=band, samples=samples)


def _raise_token_error(path: Path, text: str, finite_check: bool = False) -> None:
    for offset, match in enumerate(_TOKEN_RE.finditer(text), start=1):
        token = match.group()
        try:
            value = float(token)
        except ValueError:
            line = text.count("\n", 0, match.start()) + 1
            raise ParseError(
                f"{path}: invalid numeric token {token!r} at offset {offset} (line {line})"
            ) from None
        if finite_check and not np.isfinite(value):
            line = text.count("\n", 0, match.start()) + 1
            raise ParseError(
                f"{path}: non-finite sample {token!r} at offset {offset} (line {line})"
            )
    raise ParseError(f"{path}: could not parse numeric data")


@dataclass(frozen=True)
class ManifestEntry:
    lb_path: str
    ub_path: str
    case3: int

    def __post_init__(self) -> None:
        if not self.lb_path or not self.ub_path:
            raise SchemaError("manifest entry must carry both band paths")
        label_from_case3(self.case3)

    @property
    def segment_id(self) -> str:
        return Path(self.lb_path).stem


@dataclass(frozen=True)
class Manifest:
    """Ordered list of segment entries; row order in datasets follows it."""

    entries: tuple[ManifestEntry, ...]
    source: str
    root: Path = Path(".")
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "root", Path(self.root))
        if self.source not in ("DroneRF", "Synthetic"):
            raise SchemaError(f"manifest source must be DroneRF or Synthetic, got {self.source!r}")

    def resolve(self, entry: ManifestEntry) -> tuple[Path, Path]:
        return self.root / entry.lb_path, self.root / entry.ub_path

    def class_counts(self) -> np.ndarray:
        return np.bincount([e.case3 for e in self.entries], minlength=10)

    def table_report(self) -> list[tuple[str, int, int | None]]:
        """Observed per-class counts, with the published ones for DroneRF."""
        counts = self.class_counts()
        expected = DRONERF_EXPECTED_SEGMENTS if self.source == "DroneRF" else None
        return [
            (CASE3_CLASS_NAMES[c], int(counts[c]), expected[c] if expected else None)
            for c in range(10)
        ]


def save_manifest(manifest: Manifest, path) -> None:
    payload = {
        "source": manifest.source,
        "entries": [
            {"lb_path": e.lb_path, "ub_path": e.ub_path, "label": e.case3}
            for e in manifest.entries
        ],
    }
    if manifest.config:
        payload["config"] = manifest.config
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(payload, dict) or "entries" not in payload or "source" not in payload:
        raise SchemaError(f"{path}: manifest needs 'source' and 'entries' keys")
    entries = []
    for i, raw in enumerate(payload["entries"]):
        try:
            entries.append(
                ManifestEntry(
                    lb_path=raw["lb_path"], ub_path=raw["ub_path"], case3=int(raw["label"])
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: bad manifest entry {i}: {exc}") from None
    return Manifest(
        entries=tuple(entries),
        source=payload["source"],
        root=path.parent,
        config=payload.get("config", {}),
    )


def build_dronerf_manifest(root) -> Manifest:
    """Scan a DroneRF download for <BUI>L_<n>.csv / <BUI>H_<n>.csv pairs."""
    root = Path(root)
    stem_re = re.compile(r"^(\d{5})L_(\d+)$")
    found = []
    for lb in root.rglob("*L_*.csv"):
        match = stem_re.match(lb.stem)
        if not match:
            log.debug("skipping %s: not a DroneRF lower-band file name", lb)
            continue
        bui, seg = match.group(1), match.group(2)
        if bui not in _BUI_TO_CASE3:
            raise SchemaError(f"{lb.name}: unknown DroneRF code {bui}")
        ub = lb.with_name(f"{bui}H_{seg}.csv")
        if not ub.exists():
            raise DataError(f"{lb.name}: missing upper-band counterpart {ub.name}")
        found.append((bui, int(seg), lb, ub))
    found.sort(key=lambda item: (item[0], item[1]))
    entries = tuple(
        ManifestEntry(
            lb_path=str(lb.relative_to(root)),
            ub_path=str(ub.relative_to(root)),
            case3=_BUI_TO_CASE3[bui],
        )
        for bui, _, lb, ub in found
    )
    return Manifest(entries=entries, source="DroneRF", root=root)


# ---------------------------------------------------------------------------
# Synthetic desk-scale segments.
#
# All drone classes share a carrier tone per band (any drone occupies
# the channel), every drone type adds its own base tones, and the four
# modes of a type share those and differ only in the spacing of a weaker
# comb. The comb drops out of a random fraction of segments entirely,
# which is what makes the 10-way task genuinely harder than the 4-way
# one. All tone frequencies sit on exact analysis bins of the default
# frame size.
# ---------------------------------------------------------------------------

SYNTH_DEFAULT_LENGTH = 8192

_LB_CARRIER_TONES = ((950, 2.0),)
_UB_CARRIER_TONES = ((100, 1.8),)
_LB_BASE_TONES = {
    0: (),
    1: ((120, 1.0), (340, 0.8), (560, 0.6)),
    2: ((180, 1.0), (420, 0.8), (700, 0.6)),
    3: ((260, 1.0), (500, 0.9), (840, 0.7)),
}
_UB_BASE_TONES = {
    0: (),
    1: ((150, 0.9), (410, 0.7)),
    2: ((220, 0.9), (530, 0.7)),
    3: ((300, 0.9), (660, 0.7)),
}
_LB_COMB_START = {1: 60, 2: 90, 3: 130}
_UB_COMB_START = {1: 700, 2: 740, 3: 780}
_COMB_SPACINGS = (17, 23, 29, 35)
_COMB_TEETH = 5
_LB_COMB_AMP = 0.5
_UB_COMB_AMP = 0.25
_LB_COMB_DROPOUT = 0.25
_UB_COMB_DROPOUT = 0.55


def _mode_index(case3: int) -> int:
    if 1 <= case3 <= 4:
        return case3 - 1
    if 5 <= case3 <= 8:
        return case3 - 5
    return 0


def _comb_tones(start: int, spacing: int, amplitude: float) -> tuple[tuple[int, float], ...]:
    return tuple((start + spacing * (i + 1), amplitude) for i in range(_COMB_TEETH))


def class_tone_bins(class_id: int, band: Band, include_comb: bool = True) -> tuple[int, ...]:
    """Analysis bins carrying deliberate tones for a synthetic class."""
    labels = label_from_case3(class_id)
    if labels.case2 == 0:
        return ()
    lower = band is Band.LOWER
    base = _LB_BASE_TONES if lower else _UB_BASE_TONES
    bins = [b for b, _ in (_LB_CARRIER_TONES if lower else _UB_CARRIER_TONES)]
    bins.extend(b for b, _ in base[labels.case2])
    if include_comb:
        start = (_LB_COMB_START if lower else _UB_COMB_START)[labels.case2]
        spacing = _COMB_SPACINGS[_mode_index(class_id)]
        bins.extend(b for b, _ in _comb_tones(start, spacing, 1.0))
    return tuple(bins)


def _tone_signal(rng, tones, amp_scale, sigma, length, frame_size) -> np.ndarray:
    signal = rng.normal(0.0, sigma, length)
    phases = rng.uniform(0.0, 2.0 * np.pi, len(tones))
    if tones:
        t = np.arange(length)
        for (bin_index, amplitude), phase in zip(tones, phases):
            signal += amp_scale * amplitude * np.cos(
                2.0 * np.pi * bin_index * t / frame_size + phase
            )
    return signal


def synth_segment(
    class_id: int,
    seed: int,
    length: int = SYNTH_DEFAULT_LENGTH,
    index: int = 0,
    frame_size: int = 2048,
) -> tuple[SegmentRecord, SegmentRecord]:
    """Deterministic synthetic (lower, upper) segment pair for one class.

    The counter-based generator is keyed by (seed, class_id, index), so
    parallel generation order cannot change the output.
    """
    labels = label_from_case3(class_id)
    if seed < 0 or index < 0 or index >= 1 << 32:
        raise ConfigurationError("seed and index must be non-negative (index < 2^32)")
    if length < frame_size:
        raise ConfigurationError(
            f"segment length {length} is below the frame size {frame_size}"
        )
    key = np.array([seed, (class_id << 32) | index], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))

    amp_scale = rng.uniform(0.8, 1.25)
    sigma = rng.uniform(0.9, 1.1)
    lb_comb_on = rng.random() >= _LB_COMB_DROPOUT
    ub_comb_on = rng.random() >= _UB_COMB_DROPOUT

    drone_type = labels.case2
    lb_tones: tuple = ()
    ub_tones: tuple = ()
    if drone_type != 0:
        spacing = _COMB_SPACINGS[_mode_index(class_id)]
        lb_tones = _LB_CARRIER_TONES + _LB_BASE_TONES[drone_type]
        ub_tones = _UB_CARRIER_TONES + _UB_BASE_TONES[drone_type]
        if lb_comb_on:
            lb_tones = lb_tones + _comb_tones(_LB_COMB_START[drone_type], spacing, _LB_COMB_AMP)
        if ub_comb_on:
            ub_tones = ub_tones + _comb_tones(_UB_COMB_START[drone_type], spacing, _UB_COMB_AMP)

    lb_samples = _tone_signal(rng, lb_tones, amp_scale, sigma, length, frame_size)
    ub_samples = _tone_signal(rng, ub_tones, amp_scale, sigma, length, frame_size)
    stem = f"synth-c{class_id:02d}-i{index:04d}"
    return (
        SegmentRecord(f"{stem}-lb", Band.LOWER, lb_samples, labels),
        SegmentRecord(f"{stem}-ub", Band.UPPER, ub_samples, labels),
    )


def write_synthetic_corpus(
    out_dir,
    n_per_class: int,
    seed: int,
    length: int = SYNTH_DEFAULT_LENGTH,
    frame_size: int = 2048,
) -> Manifest:
    """Write segment files for all 10 classes plus a manifest referencing them."""
    if n_per_class < 1:
        raise ConfigurationError(f"n_per_class must be >= 1, got {n_per_class}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / ".write-probe"
    probe.write_text("")
    probe.unlink()

    entries = []
    for class_id in range(10):
        for index in range(n_per_class):
            lb, ub = synth_segment(class_id, seed, length=length, index=index, frame_size=frame_size)
            lb_name = f"{class_id:02d}_{index:03d}_lb.csv"
            ub_name = f"{class_id:02d}_{index:03d}_ub.csv"
            _write_segment_file(out_dir / lb_name, lb.samples)
            _write_segment_file(out_dir / ub_name, ub.samples)
            entries.append(ManifestEntry(lb_path=lb_name, ub_path=ub_name, case3=class_id))
    manifest = Manifest(
        entries=tuple(entries),
        source="Synthetic",
        root=out_dir,
        config={
            "n_per_class": n_per_class,
            "seed_data": seed,
            "length": length,
            "frame_size": frame_size,
        },
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def _write_segment_file(path: Path, samples: np.ndarray) -> None:
    path.write_text(",".join(map(str, samples.tolist())) + "\n")


# ---------------------------------------------------------------------------
# Labeled feature matrices and their binary cache.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix plus integer labels under one schema."""

    features: np.ndarray
    labels: np.ndarray
    schema: LabelSchema
    band_mode: BandMode
    frame_size: int = 0
    hop: int = 0
    q: int = 0

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ShapeError(
                f"label count {labels.shape} does not match {features.shape[0]} rows"
            )
        if not np.isfinite(features).all():
            raise ShapeError("features contain non-finite values")
        if labels.size and (labels.min() < 0 or labels.max() >= self.schema.n_classes):
            raise SchemaError(
                f"labels out of range for the {self.schema.n_classes}-class schema"
            )
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def _extract_entry(task) -> tuple[int, np.ndarray]:
    (index, segment_id, lb_path, ub_path, mode_value, frame_size, hop, q, window) = task
    mode = BandMode(mode_value)
    try:
        lb = ub = None
        if mode in (BandMode.LOWER_ONLY, BandMode.CONCATENATED):
            record = load_segment(lb_path, Band.LOWER)
            lb = segment_spectrum(record.samples, Band.LOWER, frame_size, hop, window)
        if mode in (BandMode.UPPER_ONLY, BandMode.CONCATENATED):
            record = load_segment(ub_path, Band.UPPER)
            ub = segment_spectrum(record.samples, Band.UPPER, frame_size, hop, window)
        if mode is BandMode.CONCATENATED:
            try:
                scale = compute_scaling_factor(lb, ub, q)
            except DegenerateSpectrumError:
                log.warning(
                    "entry %d (%s): degenerate upper band, falling back to scale 1",
                    index,
                    segment_id,
                )
                scale = 1.0
            vector = concatenate_bands(lb, ub, scale)
        else:
            vector = single_band_feature(lb if mode is BandMode.LOWER_ONLY else ub)
        return index, vector.values
    except (RfSentryError, OSError) as exc:
        raise DataError(
            f"feature extraction failed for entry {index} ({segment_id}): {exc}"
        ) from exc


def build_dataset(
    manifest: Manifest,
    band_mode: BandMode,
    case: Case,
    frame_size: int = 2048,
    hop: int | None = None,
    q: int = 8,
    window: str = "rectangular",
    jobs: int = 1,
) -> LabeledDataset:
    """Extract one feature row per manifest entry, in manifest order.

    Any failing entry aborts the build; rows are never silently skipped.
    """
    if not manifest.entries:
        raise InsufficientDataError("manifest has no entries")
    if not _is_power_of_two(frame_size):
        raise ConfigurationError(f"frame size must be a power of two, got {frame_size}")
    if hop is None:
        hop = frame_size
    schema = LabelSchema.for_case(case)
    tasks = []
    for index, entry in enumerate(manifest.entries):
        lb_path, ub_path = manifest.resolve(entry)
        tasks.append(
            (
                index,
                entry.segment_id,
                str(lb_path),
                str(ub_path),
                band_mode.value,
                frame_size,
                hop,
                q,
                window,
            )
        )
    features = np.empty((len(tasks), band_mode.feature_length(frame_size)), dtype=np.float64)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for index, values in pool.map(_extract_entry, tasks):
                features[index] = values
    else:
        for task in tasks:
            index, values = _extract_entry(task)
            features[index] = values
    labels = np.array(
        [label_from_case3(e.case3).for_case(case) for e in manifest.entries], dtype=np.int64
    )
    return LabeledDataset(
        features=features,
        labels=labels,
        schema=schema,
        band_mode=band_mode,
        frame_size=frame_size,
        hop=hop,
        q=q,
    )


_FEATURES_MAGIC = b"RFDS"
_FEATURES_VERSION = 1
_FEATURES_HEADER = struct.Struct("<4sHBBIIIII")
_BAND_MODE_CODES = {BandMode.LOWER_ONLY: 0, BandMode.UPPER_ONLY: 1, BandMode.CONCATENATED: 2}
_BAND_MODE_FROM_CODE = {v: k for k, v in _BAND_MODE_CODES.items()}


def save_features(dataset: LabeledDataset, path) -> None:
    """Write the dataset to the binary feature container (little-endian)."""
    header = _FEATURES_HEADER.pack(
        _FEATURES_MAGIC,
        _FEATURES_VERSION,
        dataset.schema.case.value,
        _BAND_MODE_CODES[dataset.band_mode],
        dataset.n_rows,
        dataset.n_features,
        dataset.frame_size,
        dataset.hop,
        dataset.q,
    )
    labels = np.ascontiguousarray(dataset.labels, dtype="<u2").tobytes()
    payload = np.ascontiguousarray(dataset.features, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(labels)
        fh.write(payload)


def load_features(path) -> LabeledDataset:
    """Read a feature container; the round-trip is bit-exact."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _FEATURES_HEADER.size:
        raise FormatError(f"{path}: feature container is truncated")
    magic, version, case_value, band_code, n_rows, n_cols, frame_size, hop, q = (
        _FEATURES_HEADER.unpack_from(buf, 0)
    )
    if magic != _FEATURES_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {_FEATURES_MAGIC!r}")
    if version != _FEATURES_VERSION:
        raise FormatError(f"{path}: unsupported feature container version {version}")
    try:
        case = Case(case_value)
        band_mode = _BAND_MODE_FROM_CODE[band_code]
    except (ValueError, KeyError):
        raise FormatError(f"{path}: bad case or band code in header") from None
    expected = _FEATURES_HEADER.size + 2 * n_rows + 8 * n_rows * n_cols
    if len(buf) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {n_rows}x{n_cols}, found {len(buf)}"
        )
    offset = _FEATURES_HEADER.size
    labels = np.frombuffer(buf, dtype="<u2", count=n_rows, offset=offset).astype(np.int64)
    offset += 2 * n_rows
    features = (
        np.frombuffer(buf, dtype="<f8", count=n_rows * n_cols, offset=offset)
        .reshape(n_rows, n_cols)
        .copy()
    )
    return LabeledDataset(
        features=features,
        labels=labels,
        schema=LabelSchema.for_case(case),
        band_mode=band_mode,
        frame_size=frame_size,
        hop=hop,
        q=q,
    )
