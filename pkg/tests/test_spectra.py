import math

import numpy as np
import pytest

from cqed_lab import (HBAR_UEV_NS, DetectionCoefficients, GridError,
                      PeakError, Spectrum, SystemParams, background_fraction,
                      correlation_kernel, default_grid, emission_spectrum,
                      lorentzian, propagate, rabi_splitting, read_spectrum,
                      resolvent_transform, write_spectrum)
from oracles import fft_half_range_spectrum, simpson_integral


class TestDetectionCoefficients:
    def test_defaults_are_cavity_only(self):
        det = DetectionCoefficients()
        assert det.eta_ca == 1.0 and det.eta_qd == 0.0

    def test_both_zero_rejected(self):
        with pytest.raises(ValueError):
            DetectionCoefficients(eta_ca=0.0, eta_qd=0.0)

    def test_background_range(self):
        with pytest.raises(ValueError):
            DetectionCoefficients(background_fraction=1.0)
        with pytest.raises(ValueError):
            DetectionCoefficients(background_fraction=-0.1)


class TestBackgroundFraction:
    def test_paper_value_four_digits(self):
        assert background_fraction(0.345) == pytest.approx(0.2085, abs=5e-5)

    def test_limits(self):
        assert background_fraction(0.0) == 0.0
        assert background_fraction(1.0) == 1.0

    def test_domain(self):
        with pytest.raises(ValueError):
            background_fraction(2.0)
        with pytest.raises(ValueError):
            background_fraction(-0.01)


class TestCorrelationKernel:
    def test_decoupled_diagonal(self):
        params = SystemParams(g=0.0, kappa=110.0, gamma=1.3, gamma_dp=6.3,
                              delta=40.0)
        kern = correlation_kernel(params)
        a = kern.matrix
        assert a[0, 1] == 0.0 and a[1, 0] == 0.0
        assert a[0, 0] == pytest.approx((-55.0 - 40.0j) / HBAR_UEV_NS)
        assert a[1, 1] == pytest.approx(-(0.65 + 6.3) / HBAR_UEV_NS)

    def test_lossless_rabi_doublet(self):
        # dissipation-free limit: eigenvalues +-i g/hbar
        params = SystemParams(g=30.0, kappa=1e-9, gamma=0.0)
        kern = correlation_kernel(params, trajectory=propagate(
            params, t_max=1.0, dt=1e-4))
        eig = np.linalg.eigvals(kern.matrix)
        assert sorted(eig.imag) == pytest.approx(
            [-30.0 / HBAR_UEV_NS, 30.0 / HBAR_UEV_NS], rel=1e-6)

    def test_off_diagonal_magnitude(self, micropillar):
        kern = correlation_kernel(micropillar)
        assert abs(kern.matrix[0, 1]) == pytest.approx(22.6 / HBAR_UEV_NS)
        assert abs(kern.matrix[1, 0]) == pytest.approx(22.6 / HBAR_UEV_NS)
        assert kern.matrix[0, 1] == -kern.matrix[1, 0]

    def test_v0_matches_trajectory_integrals(self, micropillar):
        traj = propagate(micropillar)
        kern = correlation_kernel(micropillar, traj)
        _, i_ca, i_po = traj.integrals()
        assert kern.v0[0] == pytest.approx(i_ca, rel=1e-12)
        assert kern.v0[1] == pytest.approx(np.conj(i_po), rel=1e-12)

    def test_dissipative_eigenvalues_decay(self, micropillar, pc_cavity):
        for params in (micropillar, pc_cavity):
            eig = np.linalg.eigvals(correlation_kernel(params).matrix)
            assert np.all(eig.real < 0)

    def test_eigenvalue_splitting_matches_resolved_peaks(self):
        # deep strong coupling: spectral maxima sit at the eigenfrequencies
        params = SystemParams(g=500.0, kappa=20.0, gamma=0.2, gamma_dp=0.0)
        kern = correlation_kernel(params)
        eig = np.linalg.eigvals(kern.matrix)
        pred = abs(eig.imag[0] - eig.imag[1]) * HBAR_UEV_NS
        grid = np.linspace(-5100.0, 5100.0, 32769)
        spec = emission_spectrum(params, grid=grid)
        assert rabi_splitting(spec) == pytest.approx(pred, rel=0.01)

    def test_micropillar_is_overdamped_at_resonance(self, micropillar):
        # crossing regime: purely real eigenvalues, single spectral peak
        eig = np.linalg.eigvals(correlation_kernel(micropillar).matrix)
        assert np.abs(eig.imag).max() < 1e-9
        spec = emission_spectrum(micropillar)
        with pytest.raises(PeakError):
            rabi_splitting(spec)


class TestResolventTransform:
    @pytest.mark.parametrize("name", ["micropillar", "pc_cavity"])
    def test_agrees_with_fft_path(self, name, request):
        params = request.getfixturevalue(name)
        kern = correlation_kernel(params)
        span = 6.0 * max(params.kappa, 2 * params.g)
        kt = params.kappa / HBAR_UEV_NS
        omega, oracle = fft_half_range_spectrum(kern.matrix, kern.v0, span, kt)
        direct = kt * resolvent_transform(kern.matrix, kern.v0, omega)[0].real \
            / (math.pi * HBAR_UEV_NS)
        assert np.abs(direct - oracle).max() <= 1e-6 * np.abs(oracle).max()

    def test_decoupled_cavity_lorentzian(self):
        # unit cavity correlation through the g=0 kernel: bare cavity line
        params = SystemParams(g=0.0, kappa=110.0, gamma=1.3, gamma_dp=6.3,
                              delta=40.0)
        kern = correlation_kernel(params)
        grid = np.linspace(-1500.0, 1500.0, 240001)
        vals = resolvent_transform(kern.matrix, np.array([1.0, 0.0]), grid)[0].real
        expected = (1.0 / (params.kappa / 2 / HBAR_UEV_NS)) * \
            lorentzian(grid, -40.0, 110.0, 1.0)
        assert np.abs(vals - expected).max() < 1e-3 * expected.max()


class TestEmissionSpectrum:
    def test_decoupled_cavity_channel_is_dark(self):
        # with the emitter initially excited and g=0, nothing reaches the cavity
        params = SystemParams(g=0.0, kappa=110.0, gamma=1.3, gamma_dp=6.3,
                              delta=40.0)
        spec = emission_spectrum(params)
        assert np.abs(spec.intensity).max() < 1e-15

    def test_decoupled_emitter_line(self):
        params = SystemParams(g=0.0, kappa=110.0, gamma=1.3, gamma_dp=6.3,
                              delta=40.0)
        det = DetectionCoefficients(eta_ca=0.0, eta_qd=1.0)
        grid = np.linspace(-1200.0, 1200.0, 480001)
        spec = emission_spectrum(params, det, grid)
        width = 1.3 + 2 * 6.3
        imax = np.argmax(spec.intensity)
        assert abs(spec.omega[imax]) < 0.01
        half = spec.intensity > 0.5 * spec.intensity[imax]
        fwhm = spec.omega[half].max() - spec.omega[half].min()
        assert fwhm == pytest.approx(width, rel=0.001)

    def test_pc_doublet_splitting(self, pc_cavity):
        spec = emission_spectrum(pc_cavity)
        assert rabi_splitting(spec) == pytest.approx(114.0, rel=0.10)

    def test_cavity_channel_area_counts_photons(self, micropillar):
        params = micropillar.with_(delta=30.0)
        traj = propagate(params)
        spec = emission_spectrum(params, grid=default_grid(params, 32768),
                                 trajectory=traj)
        _, i_ca, _ = traj.integrals()
        photons = params.kappa / HBAR_UEV_NS * i_ca
        area = simpson_integral(spec.intensity, spec.omega)
        assert area == pytest.approx(photons, rel=0.01)

    def test_emitter_channel_area_counts_photons(self, micropillar):
        params = micropillar.with_(delta=30.0)
        det = DetectionCoefficients(eta_ca=0.0, eta_qd=1.0)
        traj = propagate(params)
        spec = emission_spectrum(params, det, default_grid(params, 32768),
                                 trajectory=traj)
        i_qd, _, _ = traj.integrals()
        photons = params.gamma / HBAR_UEV_NS * i_qd
        area = simpson_integral(spec.intensity, spec.omega)
        assert area == pytest.approx(photons, rel=0.01)

    def test_symmetric_at_zero_detuning(self, pc_cavity):
        grid = np.linspace(-2000.0, 2000.0, 8193)
        spec = emission_spectrum(pc_cavity, grid=grid)
        assert np.abs(spec.intensity - spec.intensity[::-1]).max() \
            <= 1e-9 * spec.intensity.max()

    def test_background_pedestal_area(self, micropillar):
        params = micropillar.with_(delta=40.0)
        grid = np.linspace(-30000.0, 30000.0, 65537)
        traj = propagate(params)
        base = emission_spectrum(params, DetectionCoefficients(), grid,
                                 trajectory=traj)
        frac = 0.208
        with_bg = emission_spectrum(
            params, DetectionCoefficients(background_fraction=frac), grid,
            trajectory=traj)
        added = simpson_integral(with_bg.intensity - base.intensity, grid)
        coherent = simpson_integral(base.intensity, grid)
        # pedestal carries the requested fraction of the total cavity area
        assert added / (added + coherent) == pytest.approx(frac, rel=0.005)

    def test_pedestal_scales_linearly(self, micropillar):
        params = micropillar.with_(delta=40.0)
        grid = np.linspace(-30000.0, 30000.0, 65537)
        traj = propagate(params)
        base = emission_spectrum(params, DetectionCoefficients(), grid,
                                 trajectory=traj)
        f1 = 0.1
        f2 = 2 * f1 / (1 + f1)  # doubles the pedestal odds f/(1-f)
        s1 = emission_spectrum(params,
                               DetectionCoefficients(background_fraction=f1),
                               grid, trajectory=traj)
        s2 = emission_spectrum(params,
                               DetectionCoefficients(background_fraction=f2),
                               grid, trajectory=traj)
        added1 = s1.intensity - base.intensity
        added2 = s2.intensity - base.intensity
        assert np.abs(added2 - 2.0 * added1).max() < 1e-12 * base.intensity.max()

    def test_narrow_grid_rejected(self, pc_cavity):
        with pytest.raises(GridError):
            emission_spectrum(pc_cavity, grid=np.linspace(-100.0, 100.0, 512))

    def test_weak_coupling_emitter_linewidth(self):
        # gamma_tot >= 20 g, far detuned: emitter line width approaches the
        # bare width plus the cavity-induced (Purcell) broadening
        params = SystemParams(g=3.0, kappa=160.0, gamma=1.0, gamma_dp=2.0,
                              delta=300.0)
        det = DetectionCoefficients(eta_ca=0.0, eta_qd=1.0)
        grid = np.linspace(-4000.0, 4000.0, 1600001)
        spec = emission_spectrum(params, det, grid)
        sel = np.abs(grid) < 50.0
        y, x = spec.intensity[sel], grid[sel]
        imax = np.argmax(y)
        half = y > 0.5 * y[imax]
        fwhm = x[half].max() - x[half].min()
        bare = params.gamma + 2 * params.gamma_dp
        drive = params.kappa / 2 - params.gamma / 2 - params.gamma_dp
        purcell = 2 * params.g ** 2 * drive / (drive ** 2 + params.delta ** 2)
        assert fwhm == pytest.approx(bare + purcell, rel=0.05)

    def test_interference_terms_enter_with_both_channels(self, micropillar):
        params = micropillar.with_(delta=40.0)
        det_mix = DetectionCoefficients(eta_ca=1.0, eta_qd=0.4)
        both = emission_spectrum(params, det_mix)
        ca_only = emission_spectrum(params, DetectionCoefficients())
        qd_only = emission_spectrum(
            params, DetectionCoefficients(eta_ca=0.0, eta_qd=0.4))
        incoherent_sum = ca_only.intensity + qd_only.intensity
        assert np.abs(both.intensity - incoherent_sum).max() > \
            0.01 * both.intensity.max()


class TestRabiSplitting:
    def test_constructed_doublet(self):
        x = np.linspace(-400.0, 400.0, 4001)
        y = lorentzian(x, -57.0, 30.0, 1.0) + lorentzian(x, 57.0, 30.0, 1.0)
        spec = Spectrum(x, y)
        assert rabi_splitting(spec) == pytest.approx(114.0, abs=0.2)

    def test_single_peak_errors(self):
        x = np.linspace(-400.0, 400.0, 4001)
        spec = Spectrum(x, lorentzian(x, 0.0, 60.0, 1.0))
        with pytest.raises(PeakError):
            rabi_splitting(spec)

    def test_three_peaks_error(self):
        x = np.linspace(-400.0, 400.0, 4001)
        y = (lorentzian(x, -100.0, 20.0, 1.0) + lorentzian(x, 0.0, 20.0, 0.9)
             + lorentzian(x, 100.0, 20.0, 1.0))
        with pytest.raises(PeakError):
            rabi_splitting(Spectrum(x, y))


class TestSerialization:
    def test_round_trip(self, tmp_path, pc_cavity):
        spec = emission_spectrum(pc_cavity, grid=default_grid(pc_cavity, 512))
        path = tmp_path / "spec.txt"
        write_spectrum(spec, path, metadata={"detuning_ueV": "0"})
        back, meta = read_spectrum(path)
        assert back.frame == "offset"
        assert meta["detuning_ueV"] == "0"
        assert np.allclose(back.omega, spec.omega, rtol=1e-12)
        assert np.allclose(back.intensity, spec.intensity, rtol=1e-10)

    def test_absolute_frame_preserved(self, tmp_path):
        spec = Spectrum(np.linspace(0.0, 10.0, 11) + 1.342e6,
                        np.ones(11), frame="absolute", omega_qd=1.342e6)
        path = tmp_path / "abs.txt"
        write_spectrum(spec, path)
        back, _ = read_spectrum(path)
        assert back.frame == "absolute"
        assert back.omega_qd == pytest.approx(1.342e6)

    def test_nonuniform_grid_rejected(self):
        with pytest.raises(GridError):
            Spectrum(np.array([0.0, 1.0, 3.0]), np.zeros(3))
