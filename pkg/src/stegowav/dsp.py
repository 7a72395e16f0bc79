"""Short-time transforms between waveforms and spectrograms.

Two bases share one framing scheme: the complex STFT (magnitude + phase,
Nyquist bin dropped so F = N/2) and the orthonormal DCT-II STDCT (a single
signed plane, F = N).  Analysis zero-pads one hop in front of the signal and
whatever is needed at the tail; the periodic Hann window vanishes at its
first sample, so without the leading pad the first waveform sample would be
annihilated and no overlap-add inverse could recover it.  With the pad, the
squared-window overlap-add denominator is strictly positive at every
retained sample for any hop < N, which makes the inverses exact to machine
precision.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.fft

from .errors import ConfigError, DataError, UsageError


def hann_window(n):
    """Periodic Hann weights w[k] = 0.5 - 0.5*cos(2*pi*k/n)."""
    if n < 4 or n % 2:
        raise ConfigError(f"hann_window: frame length must be even and >= 4, got {n}")
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


@dataclass(frozen=True)
class StftConfig:
    frame_length: int
    hop: int
    window: str = "hann_periodic"

    def __post_init__(self):
        if self.frame_length < 4 or self.frame_length % 2:
            raise ConfigError(f"frame length must be even and >= 4, got {self.frame_length}")
        if not (1 <= self.hop <= self.frame_length):
            raise ConfigError(f"hop must be in [1, {self.frame_length}], got {self.hop}")
        if self.window != "hann_periodic":
            raise ConfigError(f"unknown window {self.window!r}")

    @property
    def freq_bins(self):
        return self.frame_length // 2

    def window_weights(self):
        return hann_window(self.frame_length)

    def frame_count(self, num_samples):
        """Frames covering the front-padded signal (one leading hop of zeros)."""
        n, r = self.frame_length, self.hop
        if num_samples < n:
            raise UsageError(f"waveform of {num_samples} samples is shorter than one frame ({n})")
        return int(np.ceil((num_samples + r - n) / r)) + 1

    def samples_for_frames(self, frames):
        """Largest sample count that yields exactly `frames` frames."""
        if frames < 1:
            raise UsageError("frame count must be >= 1")
        return (frames - 1) * self.hop + self.frame_length - self.hop


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise UsageError(f"waveform must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise UsageError("waveform contains NaN or Inf")
        if self.sample_rate <= 0:
            raise UsageError(f"sample rate must be positive, got {self.sample_rate}")
        self.samples = arr

    def __len__(self):
        return self.samples.size


@dataclass
class Spectrogram:
    """Magnitude/phase planes of shape (F, T) plus the transform setup.

    kind == "stdct" stores signed DCT coefficients in `magnitude` and keeps
    `phase` all-zero.  The magnitude invariant (>= 0) holds for transform
    output; stego spectrograms built by residual addition may dip negative,
    which the inverse handles as a phase flip.
    """

    magnitude: np.ndarray
    phase: np.ndarray
    config: StftConfig
    kind: str
    num_samples: int
    sample_rate: int

    def __post_init__(self):
        if self.kind not in ("stft", "stdct"):
            raise UsageError(f"unknown spectrogram kind {self.kind!r}")
        if self.magnitude.shape != self.phase.shape:
            raise ConfigError(
                f"magnitude/phase shapes differ: {self.magnitude.shape} vs {self.phase.shape}")

    @property
    def shape(self):
        return self.magnitude.shape

    def with_planes(self, magnitude=None, phase=None):
        return replace(
            self,
            magnitude=self.magnitude if magnitude is None else magnitude,
            phase=self.phase if phase is None else phase,
        )


def _frame_signal(x, cfg):
    """Window the front/tail padded signal into (T, N) frames."""
    n, r = cfg.frame_length, cfg.hop
    t = cfg.frame_count(x.size)
    padded = np.zeros((t - 1) * r + n)
    padded[r:r + x.size] = x
    idx = np.arange(n)[None, :] + (np.arange(t) * r)[:, None]
    return padded[idx] * cfg.window_weights()


def _overlap_add(frames, cfg, num_samples):
    """Squared-window-normalized overlap-add; trims the pads back off."""
    t, n = frames.shape
    r = cfg.hop
    win = cfg.window_weights()
    total = (t - 1) * r + n
    acc = np.zeros(total)
    den = np.zeros(total)
    wsq = win * win
    for m in range(t):
        acc[m * r:m * r + n] += frames[m] * win
        den[m * r:m * r + n] += wsq
    kept = slice(r, r + num_samples)
    if np.any(den[kept] <= 0.0):
        raise ConfigError(
            f"overlap-add denominator vanishes inside the signal (hop {r} too large for frame {n})")
    return acc[kept] / den[kept]


def stft(w, cfg):
    """Windowed per-frame DFT; bins 0..N/2-1 kept (Nyquist dropped)."""
    if len(w) == 0:
        raise UsageError("stft: empty waveform")
    frames = _frame_signal(w.samples, cfg)
    spec = np.fft.rfft(frames, axis=1)[:, :cfg.freq_bins]
    return Spectrogram(
        magnitude=np.abs(spec).T.copy(),
        phase=np.angle(spec).T.copy(),
        config=cfg,
        kind="stft",
        num_samples=len(w),
        sample_rate=w.sample_rate,
    )


def istft(s):
    """Inverse STFT via weighted overlap-add; the dropped Nyquist bin is zero."""
    if s.kind != "stft":
        raise UsageError(f"istft expects kind='stft', got {s.kind!r}")
    z = s.magnitude * np.exp(1j * s.phase)
    zfull = np.concatenate([z, np.zeros((1, z.shape[1]), dtype=complex)], axis=0)
    frames = np.fft.irfft(zfull.T, n=s.config.frame_length, axis=1)
    samples = _overlap_add(frames, s.config, s.num_samples)
    return Waveform(samples, s.sample_rate)


def stdct(w, cfg):
    """Short-time orthonormal DCT-II; all N bins kept as a signed plane."""
    if len(w) == 0:
        raise UsageError("stdct: empty waveform")
    frames = _frame_signal(w.samples, cfg)
    coeff = scipy.fft.dct(frames, type=2, axis=1, norm="ortho")
    return Spectrogram(
        magnitude=coeff.T.copy(),
        phase=np.zeros_like(coeff.T),
        config=cfg,
        kind="stdct",
        num_samples=len(w),
        sample_rate=w.sample_rate,
    )


def istdct(s):
    if s.kind != "stdct":
        raise UsageError(f"istdct expects kind='stdct', got {s.kind!r}")
    frames = scipy.fft.idct(s.magnitude.T, type=2, axis=1, norm="ortho")
    samples = _overlap_add(frames, s.config, s.num_samples)
    return Waveform(samples, s.sample_rate)


def transform(w, cfg, kind):
    if kind == "stft":
        return stft(w, cfg)
    if kind == "stdct":
        return stdct(w, cfg)
    raise UsageError(f"unknown transform kind {kind!r}")


def inverse_transform(s):
    return istft(s) if s.kind == "stft" else istdct(s)


def log_view(s):
    """log(1 + |magnitude|) normalized to [0, 1]; a one-way display mapping."""
    v = np.log1p(np.abs(s.magnitude))
    peak = v.max()
    return v / peak if peak > 0 else v


def write_spectrogram_pgm(s, path):
    """8-bit P5 raster of log_view; low frequencies at the bottom row."""
    v = log_view(s)
    raster = np.flipud(np.round(v * 255.0).astype(np.uint8))
    h, w = raster.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(raster.tobytes())


def read_pgm(path):
    """Read a binary P5 pixmap back into a [0,1] float plane (top row first)."""
    with open(path, "rb") as f:
        data = f.read()
    magic, rest = _pnm_token(data, 0)
    if magic != b"P5":
        raise DataError(f"{path}: not a P5 pixmap (magic {magic!r})")
    w, rest = _pnm_token(data, rest)
    h, rest = _pnm_token(data, rest)
    maxval, rest = _pnm_token(data, rest)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}")
    raw = data[rest:rest + w * h]
    if len(raw) < w * h:
        raise DataError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def _pnm_token(data, pos):
    """Next whitespace-delimited token, skipping '#' comments; returns (token, next_pos)."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise DataError("truncated pixmap header")
    return data[start:pos], pos + 1
