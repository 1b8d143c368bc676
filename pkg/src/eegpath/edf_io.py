"""Reading and writing European Data Format (EDF) recordings.

Only the parts of EDF needed for clinical 10-20 EEG are supported: a
256-byte fixed header, 256 bytes per signal header, and 16-bit
little-endian data records. Channels are normalised to the canonical
19-electrode montage on read.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHANNELS = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8",
    "T3", "C3", "Cz", "C4", "T4",
    "T5", "P3", "Pz", "P4", "T6",
    "O1", "O2",
)

# newer 10-10 nomenclature for the temporal/parietal electrodes
ALIASES = {"T7": "T3", "T8": "T4", "P7": "T5", "P8": "T6"}

_CANONICAL_UPPER = {name.upper(): name for name in CHANNELS}
_ANNOTATION_LABEL = "EDF ANNOTATIONS"


class EdfError(ValueError):
    """Base class for EDF parsing failures."""


class MalformedHeader(EdfError):
    pass


class MissingChannels(EdfError):
    pass


class InconsistentRate(EdfError):
    pass


@dataclass(frozen=True)
class SignalHeader:
    label: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    samples_per_record: int
    transducer: str = ""
    physical_dimension: str = "uV"
    prefiltering: str = ""

    @property
    def gain(self) -> float:
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)

    def calibrate(self, digital: np.ndarray) -> np.ndarray:
        """Map digital sample values to physical units (affine, monotone)."""
        digital = np.asarray(digital, dtype=np.float64)
        return (digital - self.digital_min) * self.gain + self.physical_min


@dataclass(frozen=True)
class EdfHeader:
    version: str
    patient_id: str
    recording_id: str
    start_date: str
    start_time: str
    header_bytes: int
    n_records: int
    record_duration: float
    signals: tuple[SignalHeader, ...]

    @property
    def n_signals(self) -> int:
        return len(self.signals)

    @property
    def record_bytes(self) -> int:
        return 2 * sum(s.samples_per_record for s in self.signals)


@dataclass
class RawRecording:
    """Calibrated multichannel EEG in the canonical channel order.

    ``data`` has shape (n_channels, n_samples) in microvolts.
    """

    labels: tuple[str, ...]
    data: np.ndarray
    rate: float
    source_path: str = ""
    annotations: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.data.shape[1] / self.rate

    @property
    def channels(self):
        return [(lab, self.data[i], self.rate) for i, lab in enumerate(self.labels)]


def canonical_label(label: str) -> str | None:
    """Return the canonical 10-20 name for an EDF signal label, or None.

    Matching is case-insensitive, strips an ``EEG`` prefix and any
    reference suffix (``-REF``, ``-LE``, ...), and resolves T7/T8/P7/P8.

    >>> canonical_label("EEG FP1-REF")
    'Fp1'
    >>> canonical_label("eeg t7-le")
    'T3'
    >>> canonical_label("ECG") is None
    True
    """
    text = label.strip().upper()
    text = re.sub(r"^EEG[\s_:]*", "", text)
    text = re.split(r"[-\s/]", text, maxsplit=1)[0]
    text = ALIASES.get(text, text)
    return _CANONICAL_UPPER.get(text)


def _ascii(raw: bytes, what: str) -> str:
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedHeader(f"non-ASCII bytes in {what}") from exc


def _number(raw: bytes, what: str, kind=float):
    text = _ascii(raw, what).strip()
    try:
        if kind is int:
            return int(text)
        return float(text)
    except ValueError as exc:
        raise MalformedHeader(f"cannot parse {what}: {text!r}") from exc


def parse_header(buf: bytes) -> EdfHeader:
    """Parse the fixed and per-signal header blocks of an EDF byte string."""
    if len(buf) < 256:
        raise MalformedHeader("file shorter than the 256-byte fixed header")
    version = _ascii(buf[0:8], "version").strip()
    if version != "0":
        raise MalformedHeader(f"unsupported EDF version {version!r}")
    patient = _ascii(buf[8:88], "patient id").strip()
    recording = _ascii(buf[88:168], "recording id").strip()
    start_date = _ascii(buf[168:176], "start date").strip()
    start_time = _ascii(buf[176:184], "start time").strip()
    header_bytes = _number(buf[184:192], "header byte count", int)
    n_records = _number(buf[236:244], "number of records", int)
    record_duration = _number(buf[244:252], "record duration")
    ns = _number(buf[252:256], "number of signals", int)
    if ns < 1:
        raise MalformedHeader(f"number of signals must be positive, got {ns}")
    if header_bytes != 256 + 256 * ns:
        raise MalformedHeader(
            f"header byte count {header_bytes} != 256 + 256*{ns}")
    if len(buf) < header_bytes:
        raise MalformedHeader("file truncated inside the signal headers")
    if record_duration <= 0:
        raise MalformedHeader(f"record duration must be positive, got {record_duration}")
    if n_records < 1 and n_records != -1:
        raise MalformedHeader(f"invalid number of records {n_records}")

    widths = [("label", 16), ("transducer", 80), ("dimension", 8),
              ("pmin", 8), ("pmax", 8), ("dmin", 8), ("dmax", 8),
              ("prefilter", 80), ("nsamp", 8), ("reserved", 32)]
    fields: dict[str, list[bytes]] = {}
    pos = 256
    for name, width in widths:
        fields[name] = [buf[pos + i * width: pos + (i + 1) * width] for i in range(ns)]
        pos += width * ns

    signals = []
    for i in range(ns):
        label = _ascii(fields["label"][i], "signal label").strip()
        sig = SignalHeader(
            label=label,
            transducer=_ascii(fields["transducer"][i], "transducer").strip(),
            physical_dimension=_ascii(fields["dimension"][i], "physical dimension").strip(),
            physical_min=_number(fields["pmin"][i], f"physical minimum of {label}"),
            physical_max=_number(fields["pmax"][i], f"physical maximum of {label}"),
            digital_min=_number(fields["dmin"][i], f"digital minimum of {label}", int),
            digital_max=_number(fields["dmax"][i], f"digital maximum of {label}", int),
            prefiltering=_ascii(fields["prefilter"][i], "prefiltering").strip(),
            samples_per_record=_number(fields["nsamp"][i], f"samples per record of {label}", int),
        )
        if sig.digital_min >= sig.digital_max:
            raise MalformedHeader(f"{label}: digital_min must be < digital_max")
        if sig.digital_min < -32768 or sig.digital_max > 32767:
            raise MalformedHeader(f"{label}: digital range outside 16 bits")
        if sig.physical_min == sig.physical_max:
            raise MalformedHeader(f"{label}: physical_min equals physical_max")
        if sig.samples_per_record < 1:
            raise MalformedHeader(f"{label}: samples per record must be positive")
        signals.append(sig)

    header = EdfHeader(version, patient, recording, start_date, start_time,
                       header_bytes, n_records, record_duration, tuple(signals))
    if n_records == -1:
        available = (len(buf) - header_bytes) // header.record_bytes
        header = EdfHeader(version, patient, recording, start_date, start_time,
                           header_bytes, int(available), record_duration, tuple(signals))
    return header


def read_signals(buf: bytes, header: EdfHeader) -> list[np.ndarray]:
    """Decode and calibrate every signal in the file (physical units)."""
    counts = [s.samples_per_record for s in header.signals]
    per_record = sum(counts)
    needed = header.n_records * per_record
    data = np.frombuffer(buf, dtype="<i2", count=needed, offset=header.header_bytes)
    if data.size < needed:
        raise MalformedHeader("file shorter than the declared number of data records")
    data = data.reshape(header.n_records, per_record)
    out = []
    start = 0
    for sig, n in zip(header.signals, counts):
        out.append(sig.calibrate(data[:, start:start + n].reshape(-1)))
        start += n
    return out


def parse_edf(buf: bytes, source_path: str = "") -> tuple[EdfHeader, RawRecording]:
    """Parse an EDF byte string into its header and a canonical 19-channel recording."""
    header = parse_header(buf)
    picks: dict[str, int] = {}
    for i, sig in enumerate(header.signals):
        if sig.label.upper() == _ANNOTATION_LABEL:
            continue
        name = canonical_label(sig.label)
        if name is not None and name not in picks:
            picks[name] = i
    missing = [name for name in CHANNELS if name not in picks]
    if missing:
        raise MissingChannels(f"missing canonical channels: {', '.join(missing)}")

    rates = {header.signals[picks[name]].samples_per_record / header.record_duration
             for name in CHANNELS}
    if len(rates) != 1:
        raise InconsistentRate(f"canonical channels disagree on sampling rate: {sorted(rates)}")

    signals = read_signals(buf, header)
    data = np.stack([signals[picks[name]] for name in CHANNELS])
    recording = RawRecording(CHANNELS, data, rates.pop(), source_path,
                             {"patient_id": header.patient_id,
                              "recording_id": header.recording_id})
    return header, recording


def read_edf(path) -> tuple[EdfHeader, RawRecording]:
    path = Path(path)
    return parse_edf(path.read_bytes(), str(path))


def _field(value, width: int) -> bytes:
    text = str(value)
    if len(text) > width:
        raise ValueError(f"value {text!r} does not fit in {width} characters")
    return text.ljust(width).encode("ascii")


def _format_number(value: float, width: int = 8) -> str:
    """Shortest decimal representation of ``value`` that fits ``width`` characters."""
    if float(value).is_integer() and len(str(int(value))) <= width:
        return str(int(value))
    for digits in range(width, 0, -1):
        text = f"{value:.{digits}g}"
        if len(text) <= width:
            return text
    raise ValueError(f"cannot represent {value} in {width} characters")


def write_edf(data, rate: float, labels=CHANNELS, record_duration: float = 1.0,
              patient_id: str = "X X X X", recording_id: str = "Startdate X X X X",
              start_date: str = "01.01.01", start_time: str = "00.00.00",
              physical_range=None) -> bytes:
    """Serialise physical-unit signals to EDF bytes.

    ``data`` is (n_signals, n_samples); the sample count must be a whole
    number of records. Each channel gets its own physical range (or the
    shared ``physical_range``), quantised onto the full 16-bit digital range.
    Output is byte-for-byte deterministic.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] != len(labels):
        raise ValueError("data must be (n_signals, n_samples) matching labels")
    if not np.all(np.isfinite(data)):
        raise ValueError("signals contain non-finite values")
    per_record = rate * record_duration
    if abs(per_record - round(per_record)) > 1e-9:
        raise ValueError("rate * record_duration must be an integer")
    per_record = int(round(per_record))
    n_signals, n_samples = data.shape
    if n_samples % per_record:
        raise ValueError("signal length is not a whole number of records")
    n_records = n_samples // per_record
    dmin, dmax = -32768, 32767

    sig_headers = []
    digital = np.empty(data.shape, dtype="<i2")
    for i in range(n_signals):
        if physical_range is None:
            lo, hi = float(data[i].min()), float(data[i].max())
            bound = max(abs(lo), abs(hi), 1.0)
            lo, hi = -bound, bound
        else:
            lo, hi = physical_range
        # quantise against the values as they will be read back
        lo = float(_format_number(lo))
        hi = float(_format_number(hi))
        sig = SignalHeader(labels[i], lo, hi, dmin, dmax, per_record)
        scaled = np.round((data[i] - lo) / sig.gain + dmin)
        digital[i] = np.clip(scaled, dmin, dmax).astype("<i2")
        sig_headers.append(sig)

    ns = n_signals
    head = b"".join([
        _field("0", 8), _field(patient_id, 80), _field(recording_id, 80),
        _field(start_date, 8), _field(start_time, 8),
        _field(256 + 256 * ns, 8), _field("", 44),
        _field(n_records, 8), _field(_format_number(record_duration), 8), _field(ns, 4),
    ])
    columns = [
        [_field(s.label, 16) for s in sig_headers],
        [_field(s.transducer, 80) for s in sig_headers],
        [_field(s.physical_dimension, 8) for s in sig_headers],
        [_field(_format_number(s.physical_min), 8) for s in sig_headers],
        [_field(_format_number(s.physical_max), 8) for s in sig_headers],
        [_field(s.digital_min, 8) for s in sig_headers],
        [_field(s.digital_max, 8) for s in sig_headers],
        [_field(s.prefiltering, 80) for s in sig_headers],
        [_field(s.samples_per_record, 8) for s in sig_headers],
        [_field("", 32) for _ in sig_headers],
    ]
    head += b"".join(b"".join(col) for col in columns)
    body = digital.reshape(ns, n_records, per_record).transpose(1, 0, 2)
    return head + np.ascontiguousarray(body).astype("<i2").tobytes()
