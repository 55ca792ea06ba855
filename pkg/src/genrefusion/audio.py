"""PCM audio to fixed-size log-mel spectrograms, plus the spectrogram cache format."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GRID_MELS = 500
GRID_FRAMES = 1500

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE

CACHE_MAGIC = b"MSPC"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sHII")
# refuse headers that claim more than 2**31 values
_CACHE_MAX_VALUES = 1 << 31


class AudioFormatError(ValueError):
    """Malformed or unsupported WAV data; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SignalLengthError(ValueError):
    """Signal shorter than one analysis frame."""


class SpectrogramConfigError(ValueError):
    pass


class CacheFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PcmSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SpectrogramConfig:
    """STFT/mel settings. Defaults give ~1500 frames for a 30 s clip at 22050 Hz."""

    sample_rate: int = 22050
    n_fft: int = 2048
    hop: int = 441
    n_mels: int = GRID_MELS
    fmin: float = 20.0
    fmax: float = 11025.0
    floor_db: float = -80.0
    frames: int = GRID_FRAMES

    def __post_init__(self):
        if not 0 < self.hop <= self.n_fft:
            raise SpectrogramConfigError(f"need 0 < hop <= n_fft, got hop={self.hop}, n_fft={self.n_fft}")
        if self.n_mels < 2:
            raise SpectrogramConfigError("n_mels must be at least 2")
        if not 0 <= self.fmin < self.fmax:
            raise SpectrogramConfigError(f"need 0 <= fmin < fmax, got {self.fmin}, {self.fmax}")
        if self.fmax > self.sample_rate / 2:
            raise SpectrogramConfigError(
                f"fmax {self.fmax} Hz exceeds the Nyquist frequency {self.sample_rate / 2} Hz")


# --- WAV ---------------------------------------------------------------------

def decode_wav(data: bytes) -> PcmSignal:
    """Parse a RIFF/WAVE byte string holding 16-bit PCM or 32-bit float samples.

    Multichannel audio is mean-downmixed to mono; samples are scaled into [-1, 1].
    """
    if len(data) < 12:
        raise AudioFormatError("truncated RIFF header", 0)
    if data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioFormatError("not a RIFF/WAVE file", 0)
    pos = 12
    fmt = None
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = pos + 8
        if cid == b"fmt ":
            if size < 16 or body + size > len(data):
                raise AudioFormatError("truncated fmt chunk", pos)
            tag, channels, rate, _, block, bits = struct.unpack_from("<HHIIHH", data, body)
            if tag == _EXTENSIBLE and size >= 40:
                tag = struct.unpack_from("<H", data, body + 24)[0]
            if tag == _PCM and bits == 16:
                dtype = np.dtype("<i2")
            elif tag == _IEEE_FLOAT and bits == 32:
                dtype = np.dtype("<f4")
            else:
                raise AudioFormatError(f"unsupported codec tag {tag:#x} with {bits} bits", body)
            if channels < 1 or rate == 0 or block != channels * dtype.itemsize:
                raise AudioFormatError("inconsistent fmt chunk", body)
            fmt = (dtype, channels, rate)
        elif cid == b"data":
            if fmt is None:
                raise AudioFormatError("data chunk before fmt chunk", pos)
            dtype, channels, rate = fmt
            if size == 0:
                raise AudioFormatError("zero-length data chunk", pos)
            if body + size > len(data):
                raise AudioFormatError(
                    f"data chunk declares {size} bytes but only {len(data) - body} remain", body)
            frame = dtype.itemsize * channels
            n = size // frame
            if n == 0:
                raise AudioFormatError("data chunk holds no complete sample frame", body)
            raw = np.frombuffer(data, dtype=dtype, count=n * channels, offset=body)
            x = raw.reshape(n, channels).astype(np.float64)
            if dtype.kind == "i":
                x /= 32768.0
            x = x.mean(axis=1) if channels > 1 else x[:, 0]
            if not np.all(np.isfinite(x)):
                raise AudioFormatError("non-finite float samples", body)
            return PcmSignal(np.clip(x, -1.0, 1.0), int(rate))
        pos = body + size + (size & 1)
    raise AudioFormatError("no data chunk found" if fmt else "no fmt chunk found", pos)


def encode_wav(sig: PcmSignal, sample_format: str = "pcm16") -> bytes:
    """Mono WAV bytes; ``sample_format`` is ``"pcm16"`` or ``"float32"``."""
    x = np.asarray(sig.samples, dtype=np.float64)
    if sample_format == "pcm16":
        payload = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = _PCM, 16
    elif sample_format == "float32":
        payload = x.astype("<f4").tobytes()
        tag, bits = _IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown sample format {sample_format!r}")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, sig.sample_rate, sig.sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt \
        + b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def read_wav(path) -> PcmSignal:
    return decode_wav(Path(path).read_bytes())


# --- spectra -------------------------------------------------------------------

def frame_count(n_samples: int, n_fft: int, hop: int) -> int:
    return 1 + (n_samples - n_fft) // hop


def stft_magnitude(sig: PcmSignal, cfg: SpectrogramConfig, window: np.ndarray | None = None
                   ) -> np.ndarray:
    """Magnitude of the one-sided DFT of Hann-windowed frames, shape (n_fft//2+1, frames).

    ``window`` overrides the periodic Hann window (e.g. ``np.ones`` for a
    rectangular window).
    """
    x = np.asarray(sig.samples, dtype=np.float64)
    if len(x) < cfg.n_fft:
        raise SignalLengthError(f"signal has {len(x)} samples, fewer than n_fft={cfg.n_fft}")
    if window is None:
        window = hann(cfg.n_fft)
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.n_fft)[::cfg.hop]
    return np.abs(np.fft.rfft(frames * window, axis=1)).T


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges(cfg: SpectrogramConfig) -> np.ndarray:
    """The n_mels + 2 band edges in Hz, evenly spaced on the mel scale."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))


def mel_filterbank(cfg: SpectrogramConfig, sample_rate: int | None = None) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft//2+1), peak weight 1.

    A filter narrower than the FFT bin spacing can miss every bin centre; such a
    row gets a single unit weight on the bin nearest its centre frequency so that
    no mel band is identically empty.
    """
    sr = cfg.sample_rate if sample_rate is None else sample_rate
    if cfg.fmax > sr / 2:
        raise SpectrogramConfigError(f"fmax {cfg.fmax} Hz exceeds the Nyquist frequency {sr / 2} Hz")
    freqs = np.arange(cfg.n_fft // 2 + 1) * sr / cfg.n_fft
    edges = mel_edges(cfg)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    for m in np.flatnonzero(fb.max(axis=1) == 0):
        fb[m, np.argmin(np.abs(freqs - mid[m, 0]))] = 1.0
    return fb


def log_mel_spectrogram(sig: PcmSignal, cfg: SpectrogramConfig) -> np.ndarray:
    """10*log10(mel power + 1e-10) clamped below at ``cfg.floor_db``; shape (n_mels, frames)."""
    if sig.sample_rate != cfg.sample_rate:
        raise SpectrogramConfigError(
            f"signal is {sig.sample_rate} Hz but config expects {cfg.sample_rate} Hz (no resampling)")
    power = stft_magnitude(sig, cfg) ** 2
    mel = mel_filterbank(cfg) @ power
    return np.maximum(10.0 * np.log10(mel + 1e-10), cfg.floor_db)


def fit_to_grid(spec: np.ndarray, cfg: SpectrogramConfig | None = None) -> np.ndarray:
    """Center-crop or right-pad (with floor_db) the time axis to ``cfg.frames``."""
    cfg = cfg or SpectrogramConfig()
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[0] != cfg.n_mels:
        raise SpectrogramConfigError(
            f"expected {cfg.n_mels} mel rows, got array of shape {spec.shape}")
    T = spec.shape[1]
    if T > cfg.frames:
        start = (T - cfg.frames) // 2
        return spec[:, start:start + cfg.frames].copy()
    out = np.full((cfg.n_mels, cfg.frames), cfg.floor_db, dtype=spec.dtype)
    out[:, :T] = spec
    return out


def spectrogram_from_wav(data: bytes, cfg: SpectrogramConfig | None = None) -> np.ndarray:
    """Full pipeline: WAV bytes to a fitted float32 grid of shape (n_mels, frames)."""
    cfg = cfg or SpectrogramConfig()
    return fit_to_grid(log_mel_spectrogram(decode_wav(data), cfg), cfg).astype(np.float32)


# --- cache files ---------------------------------------------------------------

def save_spectrogram(spec: np.ndarray, path) -> None:
    spec = np.asarray(spec)
    if spec.ndim != 2:
        raise CacheFormatError(f"spectrogram must be 2-D, got shape {spec.shape}")
    mels, frames = spec.shape
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, mels, frames)
    Path(path).write_bytes(header + spec.astype("<f4").tobytes())


def load_spectrogram(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise CacheFormatError(f"{path}: truncated header")
    magic, version, mels, frames = _CACHE_HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise CacheFormatError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheFormatError(f"{path}: unsupported version {version}")
    if mels * frames >= _CACHE_MAX_VALUES:
        raise CacheFormatError(f"{path}: dimensions {mels}x{frames} overflow")
    expected = _CACHE_HEADER.size + 4 * mels * frames
    if len(raw) != expected:
        raise CacheFormatError(f"{path}: header says {mels}x{frames} ({expected} bytes) "
                               f"but file has {len(raw)} bytes")
    payload = np.frombuffer(raw, dtype="<f4", offset=_CACHE_HEADER.size)
    return payload.reshape(mels, frames).astype(np.float32)
