"""Nonlinear least-squares fitting of spectra and decay curves.

Lorentzian-pair and multiexponential models carry analytic Jacobians; the
emitter-cavity spectral model is differentiated by central finite
differences.  All fits run damped least squares with the convergence
contract: relative parameter change below 1e-8 or gradient norm below
1e-10, at most 500 residual evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import f as f_dist

from .errors import FitError
from .instrument import IrfKernel, SampledSignal, _aligned_offset
from .model import SystemParams, propagate
from .spectra import (DetectionCoefficients, correlation_kernel,
                      resolvent_transform)
from .units import HBAR_UEV_NS, HC_UEV_NM

__all__ = [
    "FitResult",
    "LorentzianPairParams",
    "DecayModelParams",
    "SweepRecord",
    "CouplingClassification",
    "CouplingComparison",
    "lorentzian",
    "decay_model",
    "fit_lorentzian_pair",
    "seed_lorentzian_pair",
    "extract_sweep_record",
    "fit_decay",
    "fit_jc_cavity_spectrum",
    "classify_coupling",
    "compare_coupling_estimates",
]

_XTOL = 1e-8
_GTOL = 1e-10
_MAX_NFEV = 500


@dataclass
class FitResult:
    """Converged parameter estimates with curvature-based standard errors."""

    estimates: dict
    errors: dict
    residual_sum: float
    iterations: int
    converged: bool
    messages: tuple = ()

    def to_text(self) -> str:
        """key=value record, one line per field."""
        lines = [f"converged = {self.converged}",
                 f"residual_sum = {self.residual_sum:.12g}",
                 f"iterations = {self.iterations}"]
        for k in self.estimates:
            lines.append(f"{k} = {self.estimates[k]:.12g}")
            lines.append(f"{k}_stderr = {self.errors[k]:.12g}")
        for i, msg in enumerate(self.messages):
            lines.append(f"message_{i} = {msg}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "residual_sum": self.residual_sum,
            "iterations": self.iterations,
            "estimates": dict(self.estimates),
            "errors": dict(self.errors),
            "messages": list(self.messages),
        }


@dataclass(frozen=True)
class LorentzianPairParams:
    """Two Lorentzian peaks: centers, FWHMs, and peak heights (6 parameters)."""

    centers: tuple
    fwhms: tuple
    heights: tuple

    def __post_init__(self):
        if not (len(self.centers) == len(self.fwhms) == len(self.heights) == 2):
            raise ValueError("exactly two peaks required")
        if min(self.fwhms) <= 0:
            raise ValueError("FWHMs must be positive")
        if min(self.heights) < 0:
            raise ValueError("heights must be non-negative")


@dataclass(frozen=True)
class DecayModelParams:
    """Multiexponential decay: rates (ns^-1, descending) and amplitudes."""

    rates: tuple
    amplitudes: tuple
    baseline: float = 0.0

    def __post_init__(self):
        if len(self.rates) != len(self.amplitudes) or not self.rates:
            raise ValueError("rates and amplitudes must pair up")
        if min(self.rates) <= 0:
            raise ValueError("rates must be strictly positive")
        if list(self.rates) != sorted(self.rates, reverse=True):
            raise ValueError("rates must be sorted descending")
        if min(self.amplitudes) < 0:
            raise ValueError("amplitudes must be non-negative")


@dataclass
class SweepRecord:
    """Per-detuning quantities extracted from a two-peak spectral fit.

    The narrower peak is labeled as the emitter line, the wider one as the
    cavity line; relative areas are normalized pairwise.
    """

    detuning: float
    energy_qd: float
    energy_ca: float
    fwhm_qd: float
    fwhm_ca: float
    q_qd: float
    q_ca: float
    rel_area_qd: float
    rel_area_ca: float
    source: str = ""

    @property
    def separation(self) -> float:
        return abs(self.energy_qd - self.energy_ca)


@dataclass
class CouplingClassification:
    label: str
    min_separation: float
    threshold: float


@dataclass
class CouplingComparison:
    g_spectral: float
    g_dynamical: float
    ratio: float
    spectral_verdict: str
    dynamical_verdict: str
    threshold: float

    def to_dict(self) -> dict:
        return {
            "g_spectral_ueV": self.g_spectral,
            "g_dynamical_ueV": self.g_dynamical,
            "ratio": self.ratio,
            "spectral_verdict": self.spectral_verdict,
            "dynamical_verdict": self.dynamical_verdict,
            "strong_coupling_threshold_ueV": self.threshold,
        }


def lorentzian(x: np.ndarray, center: float, fwhm: float,
               height: float) -> np.ndarray:
    """Lorentzian with peak value ``height``; area = (pi/2) height fwhm."""
    q = fwhm / 2.0
    return height * q * q / ((x - center) ** 2 + q * q)


def decay_model(t: np.ndarray, params: DecayModelParams) -> np.ndarray:
    """Multiexponential decay switched on at t=0, plus a flat baseline."""
    t = np.asarray(t, dtype=float)
    out = np.full(t.size, params.baseline)
    on = t >= 0.0
    for r, a in zip(params.rates, params.amplitudes):
        out[on] += a * np.exp(-r * t[on])
    return out


def _finish(res, names, weights=None) -> FitResult:
    """Assemble a FitResult with curvature standard errors."""
    jac = res.jac
    m, p = jac.shape
    ssr = float(2.0 * res.cost)
    dof = max(m - p, 1)
    messages = []
    jtj = jac.T @ jac
    try:
        cond = np.linalg.cond(jtj)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e14:
        messages.append("singular-curvature")
        cov = np.linalg.pinv(jtj) * (ssr / dof)
    else:
        cov = np.linalg.inv(jtj) * (ssr / dof)
    err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    converged = res.status > 0
    if not converged:
        messages.append("max-evaluations-reached")
    return FitResult(
        estimates=dict(zip(names, (float(v) for v in res.x))),
        errors=dict(zip(names, (float(e) for e in err))),
        residual_sum=ssr,
        iterations=int(res.nfev),
        converged=converged,
        messages=tuple(messages),
    )


class _IrfApplier:
    """Applies an IRF to model columns evaluated on an extended grid."""

    def __init__(self, grid: np.ndarray, irf: IrfKernel | None, domain: str):
        self.n = grid.size
        h = float(grid[1] - grid[0])
        if irf is None:
            self.grid_ext = grid
            self.pad = 0
            self._weights = None
            return
        sig = SampledSignal(grid=grid, values=np.zeros_like(grid), domain=domain)
        self.k0 = _aligned_offset(sig, irf)
        self.pad = irf.weights.size
        left = grid[0] - h * np.arange(self.pad, 0, -1)
        right = grid[-1] + h * np.arange(1, self.pad + 1)
        self.grid_ext = np.concatenate([left, grid, right])
        self._weights = irf.weights * h

    def __call__(self, values_ext: np.ndarray) -> np.ndarray:
        if self._weights is None:
            return values_ext
        full = np.convolve(values_ext, self._weights)
        start = self.pad - self.k0
        return full[start:start + self.n]

    def columns(self, mat_ext: np.ndarray) -> np.ndarray:
        if self._weights is None:
            return mat_ext
        return np.column_stack([self(mat_ext[:, j])
                                for j in range(mat_ext.shape[1])])


def _pair_model_jac(x: np.ndarray, p: np.ndarray):
    """Pair-of-Lorentzians + baseline model and its analytic Jacobian."""
    model = np.full(x.size, p[6])
    jac = np.empty((x.size, 7))
    jac[:, 6] = 1.0
    for k in (0, 1):
        c, w, h = p[3 * k], p[3 * k + 1], p[3 * k + 2]
        q = w / 2.0
        dx = x - c
        denom = dx * dx + q * q
        model += h * q * q / denom
        jac[:, 3 * k] = 2.0 * h * q * q * dx / denom ** 2
        jac[:, 3 * k + 1] = h * q * dx * dx / denom ** 2
        jac[:, 3 * k + 2] = q * q / denom
    return model, jac


def fit_lorentzian_pair(spec: SampledSignal, init: LorentzianPairParams,
                        irf: IrfKernel | None = None) -> FitResult:
    """Fit two Lorentzians plus a flat baseline to a spectrum.

    If ``irf`` is given the model is convolved with it before comparing to
    the data.  Degenerate outcomes (merged centers, singular curvature) are
    flagged in ``messages`` rather than silently accepted.
    """
    x, y = spec.grid, spec.values
    if not np.all(np.isfinite(list(init.centers) + list(init.fwhms)
                              + list(init.heights))):
        raise ValueError("initial parameters must be finite")
    app = _IrfApplier(x, irf, spec.domain)
    xe = app.grid_ext

    def residual(p):
        model, _ = _pair_model_jac(xe, p)
        return app(model) - y

    def jacobian(p):
        _, jac = _pair_model_jac(xe, p)
        return app.columns(jac)

    p0 = np.array([init.centers[0], init.fwhms[0], init.heights[0],
                   init.centers[1], init.fwhms[1], init.heights[1], 0.0])
    lo = [-np.inf, 1e-12, 0.0, -np.inf, 1e-12, 0.0, -np.inf]
    hi = [np.inf] * 7
    res = least_squares(residual, p0, jac=jacobian, bounds=(lo, hi),
                        method="trf", xtol=_XTOL, gtol=_GTOL, ftol=1e-14,
                        max_nfev=_MAX_NFEV)
    names = ["center_1", "fwhm_1", "height_1",
             "center_2", "fwhm_2", "height_2", "baseline"]
    out = _finish(res, names)
    if not out.converged:
        raise FitError("Lorentzian-pair fit did not converge")
    c1, c2 = out.estimates["center_1"], out.estimates["center_2"]
    w_min = min(out.estimates["fwhm_1"], out.estimates["fwhm_2"])
    if abs(c1 - c2) < 0.05 * w_min:
        out.messages = out.messages + ("merged-centers",)
    return out


def seed_lorentzian_pair(spec: SampledSignal,
                         smooth: int = 5) -> LorentzianPairParams:
    """Initial pair guess by fitting one Lorentzian and peeling it off.

    The dominant peak is fit first; the second seed comes from the largest
    positive residual.  If nothing significant remains the single peak is
    split into two overlapping seeds.
    """
    x, y = spec.grid, spec.values
    ys = np.convolve(y, np.ones(smooth) / smooth, "same") if smooth > 1 else y
    c1, w1, h1 = _single_peak_guess(x, ys)

    def r1(p):
        return lorentzian(x, *p) - y

    f1 = least_squares(r1, [c1, w1, h1], max_nfev=200)
    resid = y - lorentzian(x, *f1.x)
    resid_s = np.convolve(np.clip(resid, 0.0, None),
                          np.ones(2 * smooth + 1) / (2 * smooth + 1), "same")
    c2, w2, h2 = _single_peak_guess(x, resid_s)
    if h2 < 0.005 * y.max():
        c0, w0, h0 = f1.x
        return LorentzianPairParams(
            centers=(c0 - w0 / 4.0, c0 + w0 / 4.0),
            fwhms=(abs(w0), abs(w0)), heights=(abs(h0), abs(h0)))
    return LorentzianPairParams(
        centers=(float(f1.x[0]), c2),
        fwhms=(abs(float(f1.x[1])), max(w2, x[1] - x[0])),
        heights=(abs(float(f1.x[2])), h2))


def _single_peak_guess(x: np.ndarray, y: np.ndarray):
    i = int(np.argmax(y))
    top = y[i]
    above = np.nonzero(y >= top / 2.0)[0]
    if above.size >= 2:
        width = x[above[-1]] - x[above[0]]
    else:
        width = 0.0
    if width <= 0:
        width = 10.0 * (x[1] - x[0])
    return float(x[i]), float(width), float(top)


def extract_sweep_record(fit: FitResult, wavelength_nm: float,
                         detuning: float = math.nan,
                         source: str = "") -> SweepRecord:
    """Peak energies, Q factors, and relative areas from a pair fit."""
    if not fit.converged:
        raise FitError("cannot extract sweep quantities from an unconverged fit")
    photon = HC_UEV_NM / wavelength_nm
    peaks = []
    for k in (1, 2):
        c = fit.estimates[f"center_{k}"]
        w = fit.estimates[f"fwhm_{k}"]
        h = fit.estimates[f"height_{k}"]
        peaks.append((c, w, h, (math.pi / 2.0) * h * w))
    peaks.sort(key=lambda t: t[1])  # narrow first: emitter line
    (c_qd, w_qd, _, a_qd), (c_ca, w_ca, _, a_ca) = peaks
    total = a_qd + a_ca
    if total <= 0:
        raise FitError("fitted areas vanish; nothing to record")
    return SweepRecord(
        detuning=detuning,
        energy_qd=c_qd, energy_ca=c_ca,
        fwhm_qd=w_qd, fwhm_ca=w_ca,
        q_qd=photon / w_qd, q_ca=photon / w_ca,
        rel_area_qd=a_qd / total, rel_area_ca=a_ca / total,
        source=source)


def _decay_model_jac(t: np.ndarray, p: np.ndarray, n_comp: int):
    """Step-at-zero multiexponential + baseline and analytic Jacobian."""
    on = t >= 0.0
    model = np.full(t.size, p[-1])
    jac = np.zeros((t.size, 2 * n_comp + 1))
    jac[:, -1] = 1.0
    for k in range(n_comp):
        r, a = p[2 * k], p[2 * k + 1]
        e = np.where(on, np.exp(-r * np.where(on, t, 0.0)), 0.0)
        model += a * e
        jac[:, 2 * k] = -a * t * e
        jac[:, 2 * k + 1] = e
    return model, jac


def seed_decay(curve: SampledSignal, n_comp: int):
    """Initial rates/amplitudes by log-linear regression and tail peeling."""
    t, y = curve.grid, curve.values
    tail = max(3, y.size // 20)
    baseline = float(np.median(y[-tail:]))
    work = y - baseline
    i0 = int(np.argmax(work))
    if work[i0] <= 0:
        raise FitError("no decaying component in the input")
    rates, amps = [], []
    sub = work.copy()
    for k in range(n_comp):
        pos = (sub > max(1e-12, 1e-3 * work[i0])) & (t >= t[i0])
        idx = np.nonzero(pos)[0]
        if idx.size < 4:
            rate = rates[-1] * 3.0 if rates else 1.0
            amp = max(work[i0] / (k + 1.0), 1e-9)
        else:
            take = idx[-max(4, idx.size // 2):] if k == 0 else idx[:max(4, idx.size // 3)]
            slope, intercept = np.polyfit(t[take], np.log(sub[take]), 1)
            rate = max(-slope, 1e-6)
            amp = max(math.exp(intercept), 1e-9)
        rates.append(rate)
        amps.append(amp)
        sub = np.clip(sub - amp * np.exp(-rate * np.clip(t, 0.0, None)), 1e-300, None)
    if rates[0] <= 0:
        raise FitError("no decaying component in the input")
    return rates, amps, baseline


def _fit_decay_order(curve, irf, n_comp, seeds=None):
    t, y = curve.grid, curve.values
    app = _IrfApplier(t, irf, curve.domain)
    te = app.grid_ext
    sigma = np.sqrt(np.maximum(y, 1.0))

    def residual(p):
        model, _ = _decay_model_jac(te, p, n_comp)
        return (app(model) - y) / sigma

    def jacobian(p):
        _, jac = _decay_model_jac(te, p, n_comp)
        return app.columns(jac) / sigma[:, None]

    if seeds is None:
        rates, amps, baseline = seed_decay(curve, n_comp)
    else:
        rates, amps, baseline = seeds
    p0, lo, hi = [], [], []
    for r, a in zip(rates, amps):
        p0 += [r, a]
        lo += [1e-9, 0.0]
        hi += [np.inf, np.inf]
    p0.append(baseline)
    lo.append(-np.inf)
    hi.append(np.inf)
    res = least_squares(residual, p0, jac=jacobian, bounds=(lo, hi),
                        method="trf", xtol=_XTOL, gtol=_GTOL, ftol=1e-14,
                        max_nfev=_MAX_NFEV)
    return res


def _order_names(n_comp):
    names = []
    for k in range(n_comp):
        names += [f"rate_{k + 1}", f"amplitude_{k + 1}"]
    names.append("baseline")
    return names


def _sorted_result(res, n_comp) -> FitResult:
    perm = np.argsort(-res.x[0:2 * n_comp:2])
    order = [2 * k + off for k in perm for off in (0, 1)] + [2 * n_comp]
    res.x = res.x[order]
    res.jac = res.jac[:, order]
    return _finish(res, _order_names(n_comp))


def fit_decay(curve: SampledSignal, irf: IrfKernel | None = None,
              mode: str = "single") -> FitResult:
    """Fit an IRF-convolved multiexponential decay to a measured curve.

    Residuals carry Poisson weights 1/sqrt(max(counts, 1)).  ``mode`` is
    ``"single"``, ``"bi"``, or ``"multi"``; the multi mode selects 1-3
    components by a residual F-test at 5% significance.  Rates come back
    sorted descending; a pair of rates collapsing within 1% triggers a
    refit with one component fewer, flagged ``rate-collapse``.
    """
    if mode not in ("single", "bi", "multi"):
        raise ValueError("mode must be 'single', 'bi', or 'multi'")
    if curve.domain != "temporal":
        raise ValueError("decay fitting needs a temporal-domain signal")
    if curve.values.min() < 0:
        raise ValueError("counts must be non-negative")

    if mode == "single":
        n_comp = 1
        res = _fit_decay_order(curve, irf, 1)
    elif mode == "bi":
        n_comp = 2
        res = _fit_decay_order(curve, irf, 2)
    else:
        res = _fit_decay_order(curve, irf, 1)
        n_comp = 1
        m = curve.values.size
        for cand in (2, 3):
            try:
                trial = _fit_decay_order(curve, irf, cand)
            except FitError:
                break
            dof = m - (2 * cand + 1)
            if dof <= 0 or trial.cost >= res.cost:
                break
            fstat = ((res.cost - trial.cost) / 2.0) / (trial.cost / dof)
            if f_dist.sf(fstat, 2, dof) >= 0.05:
                break
            res, n_comp = trial, cand

    collapsed = False
    rates = sorted((float(res.x[2 * k]) for k in range(n_comp)), reverse=True)
    for a, b in zip(rates, rates[1:]):
        if abs(a - b) <= 0.01 * a:
            collapsed = True
    if collapsed and n_comp > 1:
        n_comp -= 1
        res = _fit_decay_order(curve, irf, n_comp)
    out = _sorted_result(res, n_comp)
    if collapsed:
        out.messages = out.messages + ("rate-collapse",)
    if not out.converged:
        raise FitError("decay fit did not converge")
    return out


def fit_jc_cavity_spectrum(spec: SampledSignal, fixed: dict,
                           init_g: float,
                           background_fraction: float = 0.0) -> FitResult:
    """Extract the coupling strength from a near-resonance cavity spectrum.

    All rates except g are held at their measured values
    (``fixed`` supplies kappa, gamma, gamma_dp, delta, in ueV); the free
    parameters are g plus an overall amplitude and center offset.  The
    forward model is the cavity-detected emission spectrum (eta_qd = 0).
    """
    for key in ("kappa", "gamma", "gamma_dp", "delta"):
        if key not in fixed or not math.isfinite(fixed[key]):
            raise ValueError(f"fixed parameter {key!r} missing or not finite")
    x, y = spec.grid, spec.values
    det = DetectionCoefficients(eta_ca=1.0, eta_qd=0.0,
                                background_fraction=background_fraction)

    def forward(p):
        g, amp, offset = p
        params = SystemParams(g=g, kappa=fixed["kappa"], gamma=fixed["gamma"],
                              gamma_dp=fixed["gamma_dp"], delta=fixed["delta"])
        vals = _model_spectrum_values(params, det, x - offset)
        return amp * vals

    def residual(p):
        return forward(p) - y

    model0 = forward([init_g, 1.0, 0.0])
    peak0 = float(np.abs(model0).max()) or 1.0
    amp0 = float(np.abs(y).max()) / peak0
    p0 = [init_g, amp0, 0.0]
    res = least_squares(residual, p0, jac="3-point",
                        bounds=([0.0, 0.0, -np.inf], [np.inf] * 3),
                        method="trf", xtol=_XTOL, gtol=_GTOL, ftol=1e-14,
                        max_nfev=_MAX_NFEV)
    out = _finish(res, ["g", "amplitude", "center_offset"])
    if not out.converged:
        raise FitError("coupling-strength fit did not converge")
    return out


def _model_spectrum_values(params: SystemParams, det: DetectionCoefficients,
                           grid: np.ndarray) -> np.ndarray:
    """Spectrum model on an arbitrary (possibly narrow) fitting window."""
    traj = propagate(params)
    i_qd, i_ca, i_po = traj.integrals()
    kernel = correlation_kernel(params, traj)
    kt = params.kappa / HBAR_UEV_NS
    vals = (abs(det.eta_ca) ** 2 * kt
            * resolvent_transform(kernel.matrix, kernel.v0, grid)[0].real
            / (math.pi * HBAR_UEV_NS))
    frac = det.background_fraction
    if frac > 0:
        area = abs(det.eta_ca) ** 2 * kt * i_ca
        half = params.kappa / 2.0
        vals = vals + (frac / (1.0 - frac) * area) * (half / math.pi) / (
            (grid + params.delta) ** 2 + half ** 2)
    return vals


def classify_coupling(records: list[SweepRecord],
                      threshold: float | None = None) -> CouplingClassification:
    """Label a detuning sweep as 'crossing' or 'anti_crossing'.

    Anti-crossing requires the minimum fitted peak separation across the
    sweep to exceed the threshold (default: half the mean fitted cavity
    FWHM).  Needs at least five records covering both detuning signs.
    """
    if len(records) < 5:
        raise ValueError("need at least five sweep records")
    detunings = [r.detuning for r in records]
    if min(detunings) >= 0 or max(detunings) <= 0:
        raise ValueError("sweep must cover both detuning signs")
    min_sep = min(r.separation for r in records)
    if threshold is None:
        threshold = 0.5 * float(np.mean([r.fwhm_ca for r in records]))
    label = "anti_crossing" if min_sep > threshold else "crossing"
    return CouplingClassification(label=label, min_separation=min_sep,
                                  threshold=threshold)


def compare_coupling_estimates(g_spectral: float, g_dynamical: float,
                               kappa: float, gamma: float,
                               gamma_dp: float) -> CouplingComparison:
    """Compare coupling strengths from spectra and from dynamics.

    The strong/weak verdict uses the oscillatory-eigenvalue condition of
    the coupled-mode matrix, g > |kappa - gamma - 2*gamma_dp| / 4, applied
    with the shared rates.
    """
    if g_spectral <= 0 or g_dynamical <= 0:
        raise ValueError("coupling strengths must be positive")
    threshold = abs(kappa - gamma - 2.0 * gamma_dp) / 4.0

    def verdict(g):
        return "strong" if g > threshold else "weak"

    return CouplingComparison(
        g_spectral=g_spectral, g_dynamical=g_dynamical,
        ratio=g_spectral / g_dynamical,
        spectral_verdict=verdict(g_spectral),
        dynamical_verdict=verdict(g_dynamical),
        threshold=threshold)
