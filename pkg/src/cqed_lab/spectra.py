"""Emission spectra from two-time correlations.

Two-time field correlations of the linear single-excitation model evolve in
the time difference tau under a 2x2 generator (quantum regression).  The
detected spectrum is the half-range Fourier transform of the time-integrated
first-order correlation, evaluated in closed form through the resolvent of
that generator; the detected field mixes the cavity and emitter channels
with complex collection coefficients, which produces interference terms on
top of the two channel spectra.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .errors import GridError, PeakError
from .model import SystemParams, Trajectory, propagate
from .units import HBAR_UEV_NS

__all__ = [
    "DetectionCoefficients",
    "Spectrum",
    "CorrelationKernel",
    "correlation_kernel",
    "resolvent_transform",
    "emission_spectrum",
    "default_grid",
    "background_fraction",
    "rabi_splitting",
    "write_spectrum",
    "read_spectrum",
]


@dataclass(frozen=True)
class DetectionCoefficients:
    """Collection coefficients of the cavity and emitter fields.

    ``background_fraction`` is the fraction of the total cavity-channel
    area carried by an incoherent cavity-shaped pedestal (cavity feeding
    by off-resonant emitters).
    """

    eta_ca: complex = 1.0
    eta_qd: complex = 0.0
    background_fraction: float = 0.0

    def __post_init__(self):
        if abs(self.eta_ca) ** 2 + abs(self.eta_qd) ** 2 <= 0:
            raise ValueError("at least one collection coefficient must be nonzero")
        if not 0.0 <= self.background_fraction < 1.0:
            raise ValueError("background_fraction must lie in [0, 1)")


@dataclass
class Spectrum:
    """Intensity samples on a uniform frequency grid (ueV).

    ``frame="offset"`` means the grid is relative to the emitter energy;
    ``frame="absolute"`` means absolute photon energies.
    """

    omega: np.ndarray
    intensity: np.ndarray
    frame: str = "offset"
    omega_qd: float | None = None

    def __post_init__(self):
        if self.frame not in ("offset", "absolute"):
            raise ValueError("frame must be 'offset' or 'absolute'")
        d = np.diff(self.omega)
        if d.size and (d.min() <= 0 or np.ptp(d) > 1e-6 * abs(d.mean())):
            raise GridError("frequency grid must be uniform and increasing")

    def to_absolute(self) -> "Spectrum":
        """Shift the grid to absolute energies using omega_qd."""
        if self.frame == "absolute":
            return self
        if self.omega_qd is None:
            raise ValueError("omega_qd required to produce an absolute frame")
        return Spectrum(self.omega + self.omega_qd, self.intensity.copy(),
                        frame="absolute", omega_qd=self.omega_qd)


@dataclass
class CorrelationKernel:
    """Generator of the tau-evolution of detected-field correlations.

    ``matrix`` drives the vector of cavity and emitter two-time
    correlations in the frame rotating at the emitter energy (ns^-1);
    ``v0`` holds the time-integrated equal-time correlations of the cavity
    channel, (int rho_ca dt, int conj(rho_po) dt), in ns.
    """

    matrix: np.ndarray
    v0: np.ndarray


def correlation_kernel(params: SystemParams,
                       trajectory: Trajectory | None = None) -> CorrelationKernel:
    """Build the two-time correlation generator and its initial vector.

    At g=0 the cavity entry evolves as exp((-kappa/2 - i*delta) tau) and the
    emitter entry as exp(-(gamma/2 + gamma_dp) tau); the off-diagonal
    coupling has magnitude g with signs matching the population dynamics.
    """
    kt = params.kappa / HBAR_UEV_NS
    gm = params.gamma / HBAR_UEV_NS
    gdp = params.gamma_dp / HBAR_UEV_NS
    gt = params.g / HBAR_UEV_NS
    dl = params.delta / HBAR_UEV_NS
    a = np.array([
        [-kt / 2.0 - 1j * dl, gt],
        [-gt, -(gm / 2.0 + gdp)],
    ])
    if trajectory is None:
        trajectory = propagate(params)
    _, i_ca, i_po = trajectory.integrals()
    return CorrelationKernel(matrix=a, v0=np.array([i_ca, np.conj(i_po)]))


def resolvent_transform(matrix: np.ndarray, v0: np.ndarray,
                        omega: np.ndarray) -> np.ndarray:
    """Half-range transform int_0^inf e^(-i w tau) e^(A tau) v0 dtau.

    ``omega`` is in ueV; the result is the 2-vector -(A - i w/hbar)^(-1) v0
    evaluated in closed form at every grid point, shape (2, len(omega)).
    """
    w = np.asarray(omega, dtype=float) / HBAR_UEV_NS
    a00, a01 = matrix[0, 0], matrix[0, 1]
    a10, a11 = matrix[1, 0], matrix[1, 1]
    det = (a00 - 1j * w) * (a11 - 1j * w) - a01 * a10
    if np.any(np.abs(det) == 0.0):
        raise ZeroDivisionError("singular resolvent; generator is not dissipative")
    r0 = -((a11 - 1j * w) * v0[0] - a01 * v0[1]) / det
    r1 = -(-a10 * v0[0] + (a00 - 1j * w) * v0[1]) / det
    return np.vstack([r0, r1])


def default_grid(params: SystemParams, n: int = 4096) -> np.ndarray:
    """Uniform offset grid spanning +-20x the largest linewidth scale."""
    span = 20.0 * max(params.kappa, params.gamma + 2.0 * params.gamma_dp,
                      2.0 * params.g)
    return np.linspace(-span, span, n)


def background_fraction(g2_zero: float) -> float:
    """Cavity-feeding background fraction implied by a measured g2(0).

    For a thermal photon background the fraction of the cavity intensity
    not coming from the single emitter is g2(0) / (2 - g2(0)).
    """
    if not 0.0 <= g2_zero < 2.0:
        raise ValueError("g2(0) must lie in [0, 2)")
    return g2_zero / (2.0 - g2_zero)


def emission_spectrum(params: SystemParams,
                      det: DetectionCoefficients | None = None,
                      grid: np.ndarray | None = None,
                      trajectory: Trajectory | None = None) -> Spectrum:
    """Detected emission spectrum for an initially excited emitter.

    The spectrum is assembled from the resolvent of the correlation
    generator with the channel weights kappa, gamma, sqrt(kappa*gamma), and
    is normalized so that each channel integrates to its emitted photon
    number.  With ``det.background_fraction`` > 0 an incoherent Lorentzian
    pedestal (bare cavity width, centered on the cavity) is added carrying
    that fraction of the total cavity-channel area.

    Parameters
    ----------
    params : SystemParams
    det : DetectionCoefficients, optional
        Defaults to pure cavity detection (eta_ca=1, eta_qd=0).
    grid : ndarray, optional
        Offset frequency grid in ueV; defaults to :func:`default_grid`.
    trajectory : Trajectory, optional
        Reuse a propagated trajectory for the time-integrated correlations.

    Returns
    -------
    Spectrum
        In the offset frame (relative to the emitter energy).
    """
    if det is None:
        det = DetectionCoefficients()
    if grid is None:
        grid = default_grid(params)
    grid = np.asarray(grid, dtype=float)
    qd_width = params.gamma + 2.0 * params.gamma_dp
    lo_need = min(0.0, -params.delta) - 5.0 * max(params.kappa, qd_width)
    hi_need = max(0.0, -params.delta) + 5.0 * max(params.kappa, qd_width)
    if grid[0] > lo_need or grid[-1] < hi_need:
        raise GridError(
            f"grid [{grid[0]:g}, {grid[-1]:g}] ueV too narrow; need "
            f"[{lo_need:g}, {hi_need:g}] to cover both resonances")

    if trajectory is None:
        trajectory = propagate(params)
    i_qd, i_ca, i_po = trajectory.integrals()
    kernel = correlation_kernel(params, trajectory)
    v_ca = kernel.v0
    v_qd = np.array([i_po, i_qd])

    kt = params.kappa / HBAR_UEV_NS
    gm = params.gamma / HBAR_UEV_NS
    eca, eqd = complex(det.eta_ca), complex(det.eta_qd)
    r_ca = resolvent_transform(kernel.matrix, v_ca, grid)
    terms = abs(eca) ** 2 * kt * r_ca[0]
    if eqd != 0:
        r_qd = resolvent_transform(kernel.matrix, v_qd, grid)
        root = math.sqrt(kt * gm)
        terms = (terms
                 + abs(eqd) ** 2 * gm * r_qd[1]
                 + np.conj(eca) * eqd * root * r_qd[0]
                 + np.conj(eqd) * eca * root * r_ca[1])
    intensity = terms.real / (math.pi * HBAR_UEV_NS)

    peak = float(np.abs(intensity).max()) or 1.0
    if intensity.min() < -1e-9 * peak:
        warnings.warn(
            "interference terms drove the spectrum negative beyond numerical "
            f"tolerance (min {intensity.min():.3g} vs peak {peak:.3g}); "
            "reported unclipped", stacklevel=2)

    frac = det.background_fraction
    if frac > 0.0:
        area_ca = abs(eca) ** 2 * kt * i_ca
        pedestal_area = frac / (1.0 - frac) * area_ca
        half = params.kappa / 2.0
        pedestal = pedestal_area * (half / math.pi) / (
            (grid + params.delta) ** 2 + half ** 2)
        intensity = intensity + pedestal

    return Spectrum(omega=grid, intensity=intensity, frame="offset",
                    omega_qd=params.omega_qd)


def rabi_splitting(spec: Spectrum, prominence: float = 0.05) -> float:
    """Frequency separation (ueV) of the two spectral maxima.

    Peaks must exceed ``prominence`` (relative to the global maximum); the
    two positions are refined by local quadratic interpolation.

    Raises
    ------
    PeakError
        If the spectrum does not show exactly two qualifying maxima.
    """
    y = spec.intensity
    idx, _ = find_peaks(y, prominence=prominence * float(y.max()))
    if idx.size != 2:
        raise PeakError(
            f"expected exactly two spectral maxima, found {idx.size}")
    step = float(spec.omega[1] - spec.omega[0])
    positions = []
    for i in idx:
        if 0 < i < y.size - 1:
            denom = y[i - 1] - 2.0 * y[i] + y[i + 1]
            shift = 0.5 * (y[i - 1] - y[i + 1]) / denom if denom != 0 else 0.0
        else:
            shift = 0.0
        positions.append(spec.omega[i] + shift * step)
    return float(abs(positions[1] - positions[0]))


def write_spectrum(spec: Spectrum, path, metadata: dict | None = None) -> None:
    """Write a spectrum to two-column text with '#' header lines."""
    lines = ["# cqed-lab spectrum v1", f"# frame = {spec.frame}"]
    if spec.omega_qd is not None:
        lines.append(f"# omega_qd_ueV = {spec.omega_qd:.12g}")
    for key in sorted(metadata or {}):
        lines.append(f"# {key} = {metadata[key]}")
    lines.append("# columns: omega_ueV intensity")
    for x, v in zip(spec.omega, spec.intensity):
        lines.append(f"{x:.12g} {v:.12g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_spectrum(path) -> tuple[Spectrum, dict]:
    """Read a spectrum file; returns the spectrum and its header metadata."""
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
    frame = meta.get("frame", "offset")
    omega_qd = float(meta["omega_qd_ueV"]) if "omega_qd_ueV" in meta else None
    spec = Spectrum(np.array(xs), np.array(ys), frame=frame, omega_qd=omega_qd)
    return spec, meta
