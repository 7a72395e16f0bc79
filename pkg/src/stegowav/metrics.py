"""Evaluation metrics: SSIM/PSNR for images, SNR for audio, RGB histograms.

The RGB density histogram distance stands in for subjective color-restoration
judgements: a revealed image that lost its colors shows collapsed channel
densities and a large L1 gap to the secret's histograms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, UsageError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr_db(a, b):
    """10*log10(1/MSE) for [0,1]-range images; +inf when identical."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"psnr: shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_plane(x, y):
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    def filt(z):
        patches = sliding_window_view(z, (SSIM_WINDOW, SSIM_WINDOW))
        return np.tensordot(patches, win, axes=([2, 3], [0, 1]))

    mx, my = filt(x), filt(y)
    mxx, myy, mxy = filt(x * x), filt(y * y), filt(x * y)
    vx = mxx - mx * mx
    vy = myy - my * my
    cov = mxy - mx * my
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def ssim(a, b):
    """Mean structural similarity, 11x11 Gaussian window (sigma 1.5), L=1.

    Computed per channel then averaged; accepts (H,W) or (3,H,W).
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"ssim: shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise UsageError(f"ssim: image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    return float(np.mean([_ssim_plane(a[c], b[c]) for c in range(a.shape[0])]))


def snr_db(reference, signal):
    """10*log10(sum(ref^2)/sum((ref-sig)^2)); asymmetric in its arguments."""
    reference = np.asarray(reference, dtype=float)
    signal = np.asarray(signal, dtype=float)
    if reference.shape != signal.shape:
        raise ConfigError(f"snr: shapes differ: {reference.shape} vs {signal.shape}")
    ref_energy = float(np.sum(reference ** 2))
    if ref_energy == 0.0:
        raise UsageError("snr: reference signal has zero energy")
    noise = float(np.sum((reference - signal) ** 2))
    if noise == 0.0:
        return float("inf")
    return float(10.0 * np.log10(ref_energy / noise))


def rgb_histogram(img, bins=256):
    """Per-channel density histogram over [0,1]; each row sums to 1."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 3 or img.shape[0] != 3:
        raise UsageError(f"expected (3, H, W) image, got {img.shape}")
    out = np.empty((3, bins))
    for c in range(3):
        counts, _ = np.histogram(img[c], bins=bins, range=(0.0, 1.0))
        out[c] = counts / counts.sum()
    return out


def histogram_l1(h1, h2):
    """Mean over channels of the per-channel L1 histogram distance."""
    h1, h2 = np.asarray(h1, dtype=float), np.asarray(h2, dtype=float)
    if h1.shape != h2.shape:
        raise ConfigError(f"histogram_l1: shapes differ: {h1.shape} vs {h2.shape}")
    return float(np.mean(np.sum(np.abs(h1 - h2), axis=-1)))


METRICS_CSV_HEADER = "method,container,beta,lambda,ssim,psnr_db,snr_db,waveform_loss,hist_l1"


@dataclass
class MetricsRow:
    method: str
    container: str
    beta: float
    lam: float
    revealed_ssim: float
    revealed_psnr: float
    stego_snr: float
    waveform_loss: float
    histogram_l1: float

    def to_csv(self):
        return ",".join([
            self.method,
            self.container,
            _fmt(self.beta),
            _fmt(self.lam),
            _fmt(self.revealed_ssim),
            _fmt(self.revealed_psnr),
            _fmt(self.stego_snr),
            _fmt(self.waveform_loss),
            _fmt(self.histogram_l1),
        ])


def _fmt(x):
    if x == float("inf"):
        return "inf"
    return format(float(x), ".12g")
