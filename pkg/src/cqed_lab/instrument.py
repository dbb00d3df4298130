"""Instrument response kernels, convolution, and Fourier deconvolution.

Spectrometer kernels live on spectral grids (ueV), detector kernels on
temporal grids (ns).  Deconvolution divides in the Fourier domain inside a
low-pass band with a raised-cosine edge; the band defaults to the region
where the kernel transform keeps at least 10% of its peak magnitude, which
keeps the division well conditioned in the presence of noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import irfft, rfft, rfftfreq

from .errors import DeconvolutionError, GridError
from .units import HC_UEV_NM

__all__ = [
    "SampledSignal",
    "IrfKernel",
    "gaussian_irf",
    "irf_fwhm_from_q",
    "convolve",
    "deconvolve",
    "irf_band_limit",
    "read_signal",
    "write_signal",
    "read_irf",
]

_DOMAINS = ("spectral", "temporal")


def _check_uniform(grid: np.ndarray, what: str, jitter: float = 1e-6) -> float:
    d = np.diff(grid)
    if d.size == 0 or d.min() <= 0:
        raise GridError(f"{what}: grid must be strictly increasing")
    step = float(d.mean())
    if np.ptp(d) > jitter * step:
        raise GridError(f"{what}: grid not uniform (step jitter "
                        f"{np.ptp(d) / step:.2e} exceeds {jitter:.0e})")
    return step


@dataclass
class SampledSignal:
    """Real samples on a uniform grid, tagged spectral (ueV) or temporal (ns)."""

    grid: np.ndarray
    values: np.ndarray
    domain: str = "spectral"

    def __post_init__(self):
        if self.domain not in _DOMAINS:
            raise ValueError(f"domain must be one of {_DOMAINS}")
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.shape != self.values.shape:
            raise GridError("grid and values must have matching shape")
        _check_uniform(self.grid, "signal")

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])


@dataclass
class IrfKernel:
    """Normalized instrument response on its own uniform grid.

    Weights are non-negative and integrate (sum times step) to 1.
    """

    grid: np.ndarray
    weights: np.ndarray
    domain: str = "spectral"

    def __post_init__(self):
        if self.domain not in _DOMAINS:
            raise ValueError(f"domain must be one of {_DOMAINS}")
        self.grid = np.asarray(self.grid, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.grid.shape != self.weights.shape:
            raise GridError("grid and weights must have matching shape")
        _check_uniform(self.grid, "IRF")
        if self.weights.min() < 0:
            raise ValueError("IRF weights must be non-negative")
        total = self.weights.sum() * self.step
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"IRF weights integrate to {total:.12g}, not 1; "
                             "use IrfKernel.from_samples to renormalize")

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @classmethod
    def from_samples(cls, grid, counts, domain: str = "spectral") -> "IrfKernel":
        """Build a kernel from raw counts, rejecting negatives, renormalizing."""
        grid = np.asarray(grid, dtype=float)
        counts = np.asarray(counts, dtype=float)
        if counts.min() < 0:
            raise ValueError("measured IRF contains negative counts")
        step = _check_uniform(grid, "IRF")
        total = counts.sum() * step
        if total <= 0:
            raise ValueError("measured IRF carries no weight")
        return cls(grid=grid, weights=counts / total, domain=domain)


def irf_fwhm_from_q(wavelength_nm: float, q: float) -> float:
    """Spectral FWHM (ueV) of a resolution specified as a Q factor."""
    if wavelength_nm <= 0 or q <= 0:
        raise ValueError("wavelength and Q must be positive")
    return (HC_UEV_NM / wavelength_nm) / q


def gaussian_irf(fwhm: float, grid: np.ndarray,
                 domain: str = "spectral") -> IrfKernel:
    """Normalized Gaussian kernel of the given FWHM sampled on ``grid``.

    The kernel is centered on the middle grid sample.  Raises
    :class:`GridError` if the FWHM is under-resolved (less than two steps).
    """
    grid = np.asarray(grid, dtype=float)
    step = _check_uniform(grid, "IRF")
    if fwhm < 2.0 * step:
        raise GridError(f"under-resolved kernel: fwhm={fwhm:g} below two "
                        f"grid steps ({2 * step:g})")
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    center = grid[grid.size // 2]
    w = np.exp(-0.5 * ((grid - center) / sigma) ** 2)
    return IrfKernel(grid=grid, weights=w / (w.sum() * step), domain=domain)


def _aligned_offset(signal: SampledSignal, irf: IrfKernel) -> int:
    """Integer grid offset of the kernel origin; validates compatibility."""
    if signal.domain != irf.domain:
        raise GridError(f"domain mismatch: signal is {signal.domain}, "
                        f"IRF is {irf.domain}")
    h = signal.step
    if abs(irf.step - h) > 1e-9 * h:
        raise GridError(f"grid step mismatch: signal {h:g} vs IRF {irf.step:g}")
    k0 = irf.grid[0] / h
    k0_int = int(round(k0))
    if abs(k0 - k0_int) > 1e-6:
        raise GridError("IRF grid is not sample-aligned with the signal grid")
    return k0_int


def convolve(signal: SampledSignal, irf: IrfKernel) -> SampledSignal:
    """Discrete linear convolution of a signal with an IRF, same grid.

    Area-preserving for signals with compact support inside the grid;
    values needed beyond the grid edges are treated as zero.
    """
    k0 = _aligned_offset(signal, irf)
    h = signal.step
    full = np.convolve(signal.values, irf.weights) * h
    n = signal.values.size
    out = np.zeros(n)
    lo = max(0, k0)
    hi = min(n, full.size + k0)
    if lo < hi:
        out[lo:hi] = full[lo - k0:hi - k0]
    return SampledSignal(grid=signal.grid.copy(), values=out,
                         domain=signal.domain)


def _kernel_transform(irf: IrfKernel, n_fft: int, k0: int, h: float):
    """rfft of the kernel embedded circularly at its sample offset."""
    k = np.zeros(n_fft)
    idx = (np.arange(irf.weights.size) + k0) % n_fft
    np.add.at(k, idx, irf.weights * h)
    return rfft(k)


def irf_band_limit(irf: IrfKernel, floor: float = 0.1,
                   n_fft: int = 1 << 14) -> float:
    """Default deconvolution band: where |IRF transform| falls to ``floor``.

    Returned in cycles per grid unit (the conjugate of the kernel's grid).
    """
    h = irf.step
    transform = np.abs(_kernel_transform(irf, n_fft, 0, h))
    freqs = rfftfreq(n_fft, h)
    peak = transform.max()
    below = np.nonzero(transform < floor * peak)[0]
    if below.size == 0:
        return float(freqs[-1])
    return float(freqs[below[0]])


def deconvolve(signal: SampledSignal, irf: IrfKernel,
               band_limit: float | None = None) -> SampledSignal:
    """Fourier-domain deconvolution with band-limited noise suppression.

    Transforms the signal, divides by the kernel transform for frequencies
    up to ``band_limit`` (cycles per grid unit) with a raised-cosine edge
    spanning the upper 10% of the band, zeroes everything beyond, and
    transforms back.  The default band limit comes from
    :func:`irf_band_limit`.

    Raises
    ------
    DeconvolutionError
        If the kernel transform vanishes inside the requested passband.
    """
    k0 = _aligned_offset(signal, irf)
    h = signal.step
    n = signal.values.size
    m = irf.weights.size
    n_fft = 1 << (n + m - 1).bit_length()

    if band_limit is None:
        band_limit = irf_band_limit(irf)
    nyquist = 0.5 / h
    band = min(float(band_limit), nyquist)
    if band <= 0:
        raise DeconvolutionError("band limit must be positive")

    x_hat = rfft(signal.values, n_fft)
    h_hat = _kernel_transform(irf, n_fft, k0, h)
    freqs = rfftfreq(n_fft, h)

    window = np.zeros(freqs.size)
    edge = 0.1 * band
    flat = freqs <= band - edge
    window[flat] = 1.0
    roll = (freqs > band - edge) & (freqs <= band)
    window[roll] = 0.5 * (1.0 + np.cos(math.pi * (freqs[roll] - band + edge) / edge))

    active = window > 0
    h_mag = np.abs(h_hat[active])
    if h_mag.size and h_mag.min() < 1e-2 * np.abs(h_hat).max():
        raise DeconvolutionError(
            "IRF transform falls below 1% of its peak inside the passband "
            "(a transform zero); deconvolution is ill-posed at this band "
            "limit")

    y_hat = np.zeros_like(x_hat)
    y_hat[active] = x_hat[active] / h_hat[active] * window[active]
    out = irfft(y_hat, n_fft)[:n]
    return SampledSignal(grid=signal.grid.copy(), values=out,
                         domain=signal.domain)


def write_signal(sig: SampledSignal, path, metadata: dict | None = None) -> None:
    """Write a signal to two-column whitespace text with '#' comments."""
    lines = ["# cqed-lab signal v1", f"# domain = {sig.domain}"]
    for key in sorted(metadata or {}):
        lines.append(f"# {key} = {metadata[key]}")
    for x, v in zip(sig.grid, sig.values):
        lines.append(f"{x:.12g} {v:.12g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_columns(path) -> tuple[np.ndarray, np.ndarray, dict]:
    meta: dict[str, str] = {}
    xs, ys = [], []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, val = body.partition("=")
                    meta[key.strip()] = val.strip()
                continue
            parts = line.split()
            if len(parts) < 2:
                raise GridError(f"{path}: malformed data line {line!r}")
            xs.append(float(parts[0]))
            ys.append(float(parts[1]))
    if len(xs) < 2:
        raise GridError(f"{path}: fewer than two samples")
    return np.array(xs), np.array(ys), meta


def read_signal(path, domain: str | None = None) -> tuple[SampledSignal, dict]:
    """Read a two-column signal file; returns the signal and its metadata."""
    xs, ys, meta = _read_columns(path)
    dom = domain or meta.get("domain", "spectral")
    return SampledSignal(grid=xs, values=ys, domain=dom), meta


def read_irf(path, domain: str | None = None) -> IrfKernel:
    """Read a measured IRF file; negative counts are rejected, rest renormalized."""
    xs, ys, meta = _read_columns(path)
    dom = domain or meta.get("domain", "spectral")
    return IrfKernel.from_samples(xs, ys, domain=dom)
