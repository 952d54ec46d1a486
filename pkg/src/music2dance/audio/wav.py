"""PCM WAV reading/writing and linear resampling."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


class WavDecodeError(ValueError):
    """Raised when a WAV file cannot be decoded; carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D samples)")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _parse_fmt(body: bytes, offset: int):
    if len(body) < 16:
        raise WavDecodeError("fmt chunk shorter than 16 bytes", offset)
    fmt_tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", body)
    if fmt_tag == _EXTENSIBLE:
        if len(body) < 40:
            raise WavDecodeError("truncated WAVE_FORMAT_EXTENSIBLE fmt chunk", offset)
        # first two bytes of the subformat GUID hold the actual format tag
        (fmt_tag,) = struct.unpack_from("<H", body, 24)
    if channels == 0:
        raise WavDecodeError("channel count is zero", offset + 2)
    if rate == 0:
        raise WavDecodeError("sample rate is zero", offset + 4)
    if (fmt_tag, bits) not in ((_PCM, 16), (_IEEE_FLOAT, 32)):
        raise WavDecodeError(
            f"unsupported encoding (format tag {fmt_tag}, {bits} bits); "
            "only 16-bit PCM and 32-bit float are accepted",
            offset,
        )
    if block_align != channels * bits // 8:
        raise WavDecodeError("block alignment inconsistent with channels/bit depth", offset + 12)
    return fmt_tag, channels, rate, bits


def decode_wav(data: bytes) -> Waveform:
    if len(data) < 12:
        raise WavDecodeError("file shorter than RIFF header", len(data))
    if data[0:4] != b"RIFF":
        raise WavDecodeError("missing RIFF magic", 0)
    if data[8:12] != b"WAVE":
        raise WavDecodeError("missing WAVE form type", 8)

    fmt = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if chunk_id == b"fmt ":
            if body_start + size > len(data):
                raise WavDecodeError("fmt chunk runs past end of file", pos)
            fmt = _parse_fmt(data[body_start:body_start + size], body_start)
        elif chunk_id == b"data":
            if fmt is None:
                raise WavDecodeError("data chunk before fmt chunk", pos)
            fmt_tag, channels, rate, bits = fmt
            # tolerate writers that leave a bogus size on a trailing data chunk
            size = min(size, len(data) - body_start)
            frame_bytes = channels * bits // 8
            usable = size - size % frame_bytes
            raw = data[body_start:body_start + usable]
            if fmt_tag == _PCM:
                pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
            else:
                pcm = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            pcm = pcm.reshape(-1, channels).mean(axis=1)
            if not np.all(np.isfinite(pcm)):
                bad = int(np.argmin(np.isfinite(pcm)))
                raise WavDecodeError("non-finite float sample", body_start + bad * frame_bytes)
            return Waveform(pcm, rate)
        pos = body_start + size + (size & 1)
    if fmt is None:
        raise WavDecodeError("no fmt chunk found", pos)
    raise WavDecodeError("no data chunk found", pos)


def load_wav(path) -> Waveform:
    """Read a 16-bit PCM or 32-bit float WAV file, averaging channels to mono."""
    return decode_wav(Path(path).read_bytes())


def encode_wav(w: Waveform, float32: bool = False) -> bytes:
    if float32:
        body = w.samples.astype("<f4").tobytes()
        fmt_tag, bits = _IEEE_FLOAT, 32
    else:
        pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
        body = pcm.tobytes()
        fmt_tag, bits = _PCM, 16
    block_align = bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, 1, w.sample_rate, w.sample_rate * block_align,
                      block_align, bits)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    chunks += b"data" + struct.pack("<I", len(body)) + body
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


def write_wav(path, w: Waveform, float32: bool = False) -> None:
    Path(path).write_bytes(encode_wav(w, float32=float32))


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Linear-interpolation resampling to ``target_rate``."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    n = len(w.samples)
    if n == 0:
        return Waveform(np.zeros(0), target_rate)
    n_out = int(round(n * target_rate / w.sample_rate))
    positions = np.arange(n_out) * (w.sample_rate / target_rate)
    return Waveform(np.interp(positions, np.arange(n), w.samples), target_rate)
