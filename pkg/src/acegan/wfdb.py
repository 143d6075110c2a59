"""Reader and writer for WFDB record triplets (``.hea``, format-212 ``.dat``, MIT ``.atr``).

Only the subset of WFDB needed for the MIT-BIH arrhythmia database is supported:
single-segment records, every signal stored interleaved in one format-212 file,
and MIT-format annotation files.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    MalformedHeader,
    NonBeatCode,
    SampleOutOfRange,
    TruncatedAnnotations,
    TruncatedSignal,
    UnknownCode,
    UnsupportedFormat,
)

SUPPORTED_FORMAT = 212
SAMPLE_MIN, SAMPLE_MAX = -2048, 2047


class AamiClass(enum.IntEnum):
    N = 0
    S = 1
    V = 2
    F = 3
    Q = 4


# MIT annotation type codes (ecgcodes.h) for the beat symbols of the AAMI table.
BEAT_CODES = {
    1: ("N", AamiClass.N),
    2: ("L", AamiClass.N),
    3: ("R", AamiClass.N),
    34: ("e", AamiClass.N),
    11: ("j", AamiClass.N),
    8: ("A", AamiClass.S),
    4: ("a", AamiClass.S),
    7: ("J", AamiClass.S),
    9: ("S", AamiClass.S),
    5: ("V", AamiClass.V),
    10: ("E", AamiClass.V),
    6: ("F", AamiClass.F),
    12: ("/", AamiClass.Q),
    38: ("f", AamiClass.Q),
    13: ("Q", AamiClass.Q),
}
SYMBOL_TO_CODE = {sym: code for code, (sym, _) in BEAT_CODES.items()}

# Defined non-beat annotation codes (rhythm, noise, waves, comments...). They
# advance the time base and are kept in the stream but never become beats.
NON_BEAT_CODES = frozenset(
    {14, 16, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31, 32, 33, 35, 36, 37, 39, 40, 41}
)

SKIP, NUM, SUBTYP, CHAN, AUX = 59, 60, 61, 62, 63


def map_class(raw_code: int) -> AamiClass:
    """AAMI class of a raw MIT beat code; raises NonBeatCode for anything else."""
    try:
        return BEAT_CODES[raw_code][1]
    except KeyError:
        raise NonBeatCode(f"annotation code {raw_code} is not a beat code") from None


def is_beat_code(raw_code: int) -> bool:
    return raw_code in BEAT_CODES


@dataclass(frozen=True)
class SignalSpec:
    file_name: str
    format_code: int = SUPPORTED_FORMAT
    gain: float = 200.0
    bit_resolution: int = 12
    adc_zero: int = 0
    initial_value: int = 0
    checksum: int = 0
    block_size: int = 0
    description: str = ""
    baseline: int | None = None

    @property
    def zero(self) -> int:
        return self.adc_zero if self.baseline is None else self.baseline


@dataclass(frozen=True)
class RecordHeader:
    record_name: str
    num_signals: int
    sampling_rate_hz: float
    num_samples: int
    signals: tuple[SignalSpec, ...] = ()


@dataclass(frozen=True)
class Annotation:
    sample: int
    code: int
    subtype: int = 0
    chan: int = 0
    num: int = 0
    aux: bytes = b""


@dataclass(frozen=True)
class Beat:
    sample: int
    beat_class: AamiClass
    raw_code: int


@dataclass(eq=False)
class EcgRecord:
    header: RecordHeader
    samples: np.ndarray  # (num_signals, num_samples) integer ADC values
    annotations: list[Annotation] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.header.record_name

    @property
    def fs(self) -> float:
        return self.header.sampling_rate_hz

    def physical(self, channel: int = 0) -> np.ndarray:
        """Channel converted to mV via ``(adc - baseline) / gain``."""
        spec = self.header.signals[channel]
        return (self.samples[channel].astype(np.float64) - spec.zero) / spec.gain

    def beats(self) -> list[Beat]:
        return [Beat(a.sample, map_class(a.code), a.code) for a in self.annotations if is_beat_code(a.code)]

    def __eq__(self, other):
        if not isinstance(other, EcgRecord):
            return NotImplemented
        return (
            self.header == other.header
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
            and self.annotations == other.annotations
        )


# --------------------------------------------------------------------- header


def _parse_number(token: str, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise MalformedHeader(f"non-numeric {what}: {token!r}") from None


def _parse_int(token: str, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise MalformedHeader(f"non-numeric {what}: {token!r}") from None


def parse_header(data: bytes | str) -> RecordHeader:
    text = data.decode("ascii", errors="replace") if isinstance(data, bytes) else data
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise MalformedHeader("empty header")
    rec = lines[0].split()
    if len(rec) < 4:
        raise MalformedHeader(f"record line needs 'name nsig fs nsamp', got {lines[0]!r}")
    name = rec[0].split("/")[0]
    nsig = _parse_int(rec[1], "signal count")
    if nsig < 1:
        raise MalformedHeader(f"record advertises {nsig} signals")
    fs = _parse_number(rec[2].split("/")[0], "sampling rate")
    if fs <= 0:
        raise MalformedHeader(f"sampling rate must be positive, got {fs}")
    nsamp = _parse_int(rec[3], "sample count")
    if nsamp < 0:
        raise MalformedHeader("negative sample count")
    if len(lines) < 1 + nsig:
        raise MalformedHeader(f"expected {nsig} signal lines, found {len(lines) - 1}")

    signals = []
    for ln in lines[1 : 1 + nsig]:
        tok = ln.split()
        if len(tok) < 6:
            raise MalformedHeader(f"signal line needs file, format, gain, bitres, adczero, initval: {ln!r}")
        fmt_tok = tok[1]
        if not fmt_tok.isdigit():
            raise UnsupportedFormat(f"format specification {fmt_tok!r} not supported")
        fmt = int(fmt_tok)
        if fmt != SUPPORTED_FORMAT:
            raise UnsupportedFormat(f"format {fmt} not supported (only {SUPPORTED_FORMAT})")
        gain_tok = tok[2]
        baseline = None
        gain_str = gain_tok.split("/")[0]
        if "(" in gain_str:
            gain_str, rest = gain_str.split("(", 1)
            baseline = _parse_int(rest.rstrip(")"), "baseline")
        gain = _parse_number(gain_str, "gain") or 200.0
        signals.append(
            SignalSpec(
                file_name=tok[0],
                format_code=fmt,
                gain=gain,
                bit_resolution=_parse_int(tok[3], "bit resolution"),
                adc_zero=_parse_int(tok[4], "adc zero"),
                initial_value=_parse_int(tok[5], "initial value"),
                checksum=_parse_int(tok[6], "checksum") if len(tok) > 6 else 0,
                block_size=_parse_int(tok[7], "block size") if len(tok) > 7 else 0,
                description=" ".join(tok[8:]),
                baseline=baseline,
            )
        )
    if len({s.file_name for s in signals}) != 1:
        raise MalformedHeader("all signals must share one interleaved signal file")
    return RecordHeader(name, nsig, fs, nsamp, tuple(signals))


def format_header(header: RecordHeader) -> bytes:
    fs = header.sampling_rate_hz
    fs_txt = str(int(fs)) if float(fs).is_integer() else repr(fs)
    lines = [f"{header.record_name} {header.num_signals} {fs_txt} {header.num_samples}"]
    for s in header.signals:
        gain = str(int(s.gain)) if float(s.gain).is_integer() else repr(s.gain)
        if s.baseline is not None:
            gain += f"({s.baseline})"
        line = (
            f"{s.file_name} {s.format_code} {gain} {s.bit_resolution} {s.adc_zero} "
            f"{s.initial_value} {s.checksum} {s.block_size}"
        )
        if s.description:
            line += f" {s.description}"
        lines.append(line)
    return ("\n".join(lines) + "\n").encode("ascii")


# ---------------------------------------------------------------- format 212


def decode_format212(data: bytes, num_samples: int, num_signals: int) -> np.ndarray:
    """Unpack interleaved 12-bit samples into a ``(num_signals, num_samples)`` int array."""
    total = num_samples * num_signals
    needed = (3 * total + 1) // 2
    if len(data) < needed:
        raise TruncatedSignal(f"need {needed} bytes for {total} samples, have {len(data)}")
    raw = np.frombuffer(data, dtype=np.uint8, count=needed).astype(np.int32)
    if needed % 3:
        raw = np.concatenate([raw, np.zeros(3 - needed % 3, dtype=np.int32)])
    b = raw.reshape(-1, 3)
    out = np.empty(2 * b.shape[0], dtype=np.int32)
    out[0::2] = b[:, 0] | ((b[:, 1] & 0x0F) << 8)
    out[1::2] = b[:, 2] | ((b[:, 1] & 0xF0) << 4)
    out = out[:total]
    out[out >= 2048] -= 4096
    return out.reshape(num_samples, num_signals).T.astype(np.int64)


def encode_format212(samples: np.ndarray) -> bytes:
    samples = np.asarray(samples)
    if samples.size and (samples.min() < SAMPLE_MIN or samples.max() > SAMPLE_MAX):
        raise SampleOutOfRange(f"samples must lie in [{SAMPLE_MIN}, {SAMPLE_MAX}]")
    flat = samples.T.reshape(-1).astype(np.int64) & 0xFFF
    total = flat.size
    if total % 2:
        flat = np.concatenate([flat, [0]])
    a, c = flat[0::2], flat[1::2]
    b = np.empty((a.size, 3), dtype=np.uint8)
    b[:, 0] = a & 0xFF
    b[:, 1] = ((a >> 8) & 0x0F) | ((c >> 4) & 0xF0)
    b[:, 2] = c & 0xFF
    return b.reshape(-1)[: (3 * total + 1) // 2].tobytes()


# ---------------------------------------------------------------- annotations


def read_annotation_stream(data: bytes) -> list[Annotation]:
    """Every annotation in an MIT annotation file, pseudo-annotations folded in."""
    anns: list[dict] = []
    pos, time, num, chan = 0, 0, 0, 0
    n = len(data)
    while True:
        if pos + 2 > n:
            raise TruncatedAnnotations("annotation stream ends without EOF word")
        word = data[pos] | (data[pos + 1] << 8)
        pos += 2
        code, inc = word >> 10, word & 0x3FF
        if code == 0:
            if inc == 0:
                break
            raise UnknownCode("code 0 with a nonzero increment")
        if code == SKIP:
            if pos + 4 > n:
                raise TruncatedAnnotations("SKIP without its 4-byte interval")
            hi, lo = struct.unpack_from("<HH", data, pos)
            pos += 4
            interval = (hi << 16) | lo
            if interval >= 1 << 31:
                interval -= 1 << 32
            time += interval
        elif code == NUM:
            num = inc
            if anns:
                anns[-1]["num"] = inc
        elif code == SUBTYP:
            if anns:
                anns[-1]["subtype"] = inc
        elif code == CHAN:
            chan = inc
            if anns:
                anns[-1]["chan"] = inc
        elif code == AUX:
            padded = inc + (inc & 1)
            if pos + padded > n:
                raise TruncatedAnnotations("AUX payload runs past end of stream")
            if anns:
                anns[-1]["aux"] = bytes(data[pos : pos + inc])
            pos += padded
        elif code in BEAT_CODES or code in NON_BEAT_CODES:
            time += inc
            anns.append({"sample": time, "code": code, "subtype": 0, "chan": chan, "num": num, "aux": b""})
        else:
            raise UnknownCode(f"annotation code {code} is not supported")
    return [Annotation(**a) for a in anns]


def decode_annotations(data: bytes) -> list[Beat]:
    """Beat annotations only, as (absolute sample, AAMI class, raw code)."""
    beats = [Beat(a.sample, map_class(a.code), a.code) for a in read_annotation_stream(data) if is_beat_code(a.code)]
    return beats


def encode_annotations(annotations: list[Annotation]) -> bytes:
    out = bytearray()
    prev_time, num, chan = 0, 0, 0
    for a in annotations:
        if a.code not in BEAT_CODES and a.code not in NON_BEAT_CODES:
            raise UnknownCode(f"cannot encode annotation code {a.code}")
        for name in ("subtype", "chan", "num"):
            if not 0 <= getattr(a, name) <= 1023:
                raise ValueError(f"{name} must fit 10 bits")
        if len(a.aux) > 1023:
            raise ValueError("aux payload longer than 1023 bytes")
        delta = a.sample - prev_time
        if not 0 <= delta <= 1023:
            if not -(1 << 31) <= delta < 1 << 31:
                raise ValueError("annotation gap does not fit a 32-bit SKIP")
            out += struct.pack("<H", SKIP << 10)
            d = delta & 0xFFFFFFFF
            out += struct.pack("<HH", d >> 16, d & 0xFFFF)
            delta = 0
        out += struct.pack("<H", (a.code << 10) | delta)
        prev_time = a.sample
        if a.num != num:
            out += struct.pack("<H", (NUM << 10) | a.num)
            num = a.num
        if a.subtype != 0:
            out += struct.pack("<H", (SUBTYP << 10) | a.subtype)
        if a.chan != chan:
            out += struct.pack("<H", (CHAN << 10) | a.chan)
            chan = a.chan
        if a.aux:
            out += struct.pack("<H", (AUX << 10) | len(a.aux))
            out += a.aux
            if len(a.aux) & 1:
                out += b"\x00"
    out += b"\x00\x00"
    return bytes(out)


# -------------------------------------------------------------------- records


def _checksum(channel: np.ndarray) -> int:
    s = int(np.sum(channel.astype(np.int64))) & 0xFFFF
    return s - 0x10000 if s >= 0x8000 else s


def make_header(
    name: str,
    samples: np.ndarray,
    fs: float = 360.0,
    gain: float = 200.0,
    adc_zero: int = 1024,
    descriptions: tuple[str, ...] = (),
) -> RecordHeader:
    """Header consistent with ``samples``: initial values and checksums filled in."""
    nsig, nsamp = samples.shape
    specs = []
    for ch in range(nsig):
        desc = descriptions[ch] if ch < len(descriptions) else ""
        specs.append(
            SignalSpec(
                file_name=f"{name}.dat",
                gain=gain,
                adc_zero=adc_zero,
                initial_value=int(samples[ch, 0]) if nsamp else 0,
                checksum=_checksum(samples[ch]),
                description=desc,
            )
        )
    return RecordHeader(name, nsig, fs, nsamp, tuple(specs))


def encode_record(record: EcgRecord) -> tuple[bytes, bytes, bytes]:
    """(header, signal, annotation) bytes for ``record``."""
    samples = np.asarray(record.samples)
    h = record.header
    if samples.shape != (h.num_signals, h.num_samples):
        raise ValueError(f"samples shape {samples.shape} disagrees with header")
    return format_header(h), encode_format212(samples), encode_annotations(record.annotations)


def decode_record(hea: bytes, dat: bytes, atr: bytes) -> EcgRecord:
    header = parse_header(hea)
    samples = decode_format212(dat, header.num_samples, header.num_signals)
    anns = read_annotation_stream(atr)
    for a in anns:
        if is_beat_code(a.code) and not 0 <= a.sample < max(header.num_samples, 1):
            raise MalformedHeader(f"beat annotation at {a.sample} outside record of {header.num_samples} samples")
    return EcgRecord(header, samples, anns)


def write_record(record: EcgRecord, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    hea, dat, atr = encode_record(record)
    name = record.header.record_name
    paths = [directory / f"{name}.hea", directory / record.header.signals[0].file_name, directory / f"{name}.atr"]
    for path, payload in zip(paths, (hea, dat, atr)):
        path.write_bytes(payload)
    return paths


def read_record(directory: str | Path, name: str, annotator: str = "atr") -> EcgRecord:
    directory = Path(directory)
    hea = (directory / f"{name}.hea").read_bytes()
    header = parse_header(hea)
    dat = (directory / header.signals[0].file_name).read_bytes()
    atr = (directory / f"{name}.{annotator}").read_bytes()
    return decode_record(hea, dat, atr)
