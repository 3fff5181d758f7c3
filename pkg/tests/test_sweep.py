"""Spectrum/FWHM machinery against analytic line shapes and small exact solves."""

import math

import numpy as np
import pytest

from cavityeit.hilbert import build_space
from cavityeit.model import SystemParams
from cavityeit.observables import ObservableSet
from cavityeit.sweep import (
    FwhmResult,
    QuantumPointSolver,
    Spectrum,
    WindowError,
    default_window,
    fwhm,
    min_fwhm,
    resolve_fock_dim,
    spectrum,
    sweep_control,
)


def fake_point(t: float) -> ObservableSet:
    return ObservableSet(
        transmission=t,
        transmission_paper=4.0 * t,
        mean_photons=t,
        pop11=1.0,
        pop22=0.0,
        pop33=0.0,
        g2=1.0,
        photon_dist=np.array([1.0, 0.0]),
        p21=float("nan"),
    )


def lorentzian(width: float, height: float = 1.0, center: float = 0.0):
    def f(d):
        return height / (1.0 + (2.0 * (d - center) / width) ** 2)

    return f


def synthetic_spectrum(f, lo=-3.0, hi=3.0, n=61) -> Spectrum:
    d = np.linspace(lo, hi, n)
    return Spectrum(
        detunings=d,
        points=tuple(fake_point(f(x)) for x in d),
        method="quantum-steady",
    )


def test_lorentzian_fwhm_exact():
    # half-height separation of height/(1 + (2 d / w)^2) is w by construction
    f = lorentzian(width=1.0)
    res = fwhm(synthetic_spectrum(f), f)
    assert res.refined
    assert abs(res.fwhm - 1.0) < 1e-3
    assert abs(res.peak_location) < 1e-3
    assert abs(res.peak_height - 1.0) < 1e-6
    assert res.uncertainty is None
    assert res.notes == ()


def test_symmetric_crossings():
    f = lorentzian(width=0.7)
    res = fwhm(synthetic_spectrum(f), f)
    assert abs(abs(res.left_cross) - res.right_cross) < 2e-3


def test_height_rescaling_leaves_width():
    f1 = lorentzian(width=0.8, height=1.0)
    f2 = lorentzian(width=0.8, height=17.3)
    r1 = fwhm(synthetic_spectrum(f1), f1)
    r2 = fwhm(synthetic_spectrum(f2), f2)
    assert abs(r1.fwhm - r2.fwhm) < 2e-3


def test_grid_interpolation_fallback():
    f = lorentzian(width=1.0)
    res = fwhm(synthetic_spectrum(f), None)
    assert not res.refined
    assert "grid-interpolated" in res.notes
    assert abs(res.fwhm - 1.0) < 0.05


def test_merged_sidebands_flagged():
    # shoulders at +-0.5 stay above half of the central maximum, so the
    # outward walk crosses a rising stretch before dropping below half
    def f(d):
        return (
            lorentzian(0.3)(d)
            + lorentzian(0.6, height=0.95, center=-0.5)(d)
            + lorentzian(0.6, height=0.95, center=0.5)(d)
        )

    res = fwhm(synthetic_spectrum(f, n=121), f)
    assert "merged-peaks" in res.notes
    assert res.fwhm > 1.0  # spans the shoulder structure


def test_noise_floor_clamps_bisection():
    f = lorentzian(width=1.0)
    res = fwhm(synthetic_spectrum(f), f, noise_se=0.02)
    assert res.uncertainty is not None
    assert res.uncertainty > 0
    assert abs(res.fwhm - 1.0) < 0.2


def test_window_error_when_half_not_reached():
    f = lorentzian(width=50.0)  # essentially flat across the window
    with pytest.raises(WindowError):
        fwhm(synthetic_spectrum(f), f)


def test_spectrum_type_validation():
    d = np.linspace(-1, 1, 41)
    pts = tuple(fake_point(1.0) for _ in d)
    with pytest.raises(ValueError):
        Spectrum(detunings=d[::-1], points=pts, method="quantum-steady")
    with pytest.raises(ValueError):
        Spectrum(detunings=d[:10], points=pts[:10], method="quantum-steady")
    with pytest.raises(ValueError):
        Spectrum(detunings=d, points=pts, method="nonsense")
    with pytest.raises(ValueError):
        Spectrum(detunings=d, points=pts[:-1], method="quantum-steady")


def test_fwhm_result_validation():
    with pytest.raises(ValueError):
        FwhmResult(
            fwhm=1.0, peak_location=2.0, peak_height=1.0,
            left_cross=0.5, right_cross=1.5, refined=True,
        )


def test_scan_window_must_contain_zero():
    p = SystemParams(g=0.0, omega_c=0.5, epsilon=0.1)
    with pytest.raises(ValueError):
        spectrum(p, 1, window=(0.5, 2.0), fock_dim=4)
    with pytest.raises(ValueError):
        spectrum(p, 1, n_points=11, fock_dim=4)


def test_default_window_floor():
    p = SystemParams(g=0.0, omega_c=0.0, epsilon=0.1)
    assert default_window(p) == (-2.0, 2.0)
    p2 = SystemParams(g=3.0, omega_c=4.0, epsilon=0.1)
    assert default_window(p2) == (-10.0, 10.0)


def test_resolve_fock_dim_is_minimal():
    # decoupled atoms (g = 0) leave a coherently driven cavity whose photon
    # tail is Poissonian; the resolved truncation must pass the tail rule
    # while two fewer levels must fail it
    p = SystemParams(g=0.0, omega_c=0.5, epsilon=0.3)
    fock = resolve_fock_dim(p, 1)
    assert fock >= 6

    def worst_tail(fd):
        solver = QuantumPointSolver(p, build_space(1, fd), enforce_tail=False)
        return max(solver(d)[0].photon_dist[-1] for d in (0.0, -0.5, 0.5))

    assert worst_tail(fock) < 1e-6
    assert worst_tail(fock - 2) >= 1e-6


def test_empty_cavity_pipeline_fwhm_is_kappa():
    # end to end: auto truncation, scan, refinement, bisection; the bare
    # cavity Lorentzian has FWHM = kappa exactly
    p = SystemParams(g=0.0, omega_c=0.5, epsilon=0.3)
    spec = spectrum(p, 1)
    solver = QuantumPointSolver(p, build_space(1, len(spec.points[0].photon_dist)))

    def refine(d):
        return solver(d)[0].transmission

    res = fwhm(spec, refine)
    assert abs(res.fwhm - 1.0) < 5e-3
    assert abs(res.peak_location) < 5e-3
    assert abs(res.peak_height - 1.0) < 1e-6


def test_sideband_locations_single_atom():
    # weak probe: transmission maxima at the dressed-state splitting
    g, omega = 2.0, 0.8
    p = SystemParams(g=g, omega_c=omega, epsilon=0.2)
    spec = spectrum(p, 1, fock_dim=7)
    side = math.hypot(g, omega)
    t = spec.transmission
    d = spec.detunings
    peaks = [
        d[i]
        for i in range(1, len(d) - 1)
        if t[i] >= t[i - 1] and t[i] >= t[i + 1]
    ]
    step = (d[-1] - d[0]) / 40  # base grid spacing before refinement
    assert any(abs(x - side) <= step for x in peaks)
    assert any(abs(x + side) <= step for x in peaks)


def _width_factory(width_of_omega):
    """Point-solver factory producing an analytic Lorentzian per omega_c."""

    def factory(params):
        w = width_of_omega(params.omega_c)

        def solver(delta):
            return fake_point(1.0 / (1.0 + (2.0 * delta / w) ** 2)), 0.0

        return solver

    return factory


def test_sweep_control_and_g_scaling():
    p = SystemParams(g=2.0, omega_c=1.0, epsilon=0.1)
    factory = _width_factory(lambda o: 0.5 + o)
    res = sweep_control(
        p, 4, [0.5, 1.0], point_solver_factory=factory,
        g_rule="inverse-sqrt-n", window=(-3.0, 3.0),
    )
    assert [r.fwhm for _, r in res] == pytest.approx([1.0, 1.5], abs=3e-3)
    with pytest.raises(ValueError):
        sweep_control(p, 1, [1.0], g_rule="per-capita")
    with pytest.raises(ValueError):
        sweep_control(p, 1, [])


def test_min_fwhm_interior_minimum():
    p = SystemParams(g=1.0, omega_c=1.0, epsilon=0.1)
    factory = _width_factory(lambda o: 0.5 + (o - 1.1) ** 2)
    omega_star, res = min_fwhm(
        p, 1, (0.2, 2.0), point_solver_factory=factory, window=(-4.0, 4.0),
    )
    assert abs(omega_star - 1.1) < 2e-2
    assert abs(res.fwhm - 0.5) < 1e-2


def test_min_fwhm_edge_minimum_falls_back_to_grid():
    p = SystemParams(g=1.0, omega_c=1.0, epsilon=0.1)
    factory = _width_factory(lambda o: 0.5 + o)
    with pytest.warns(UserWarning, match="grid scan"):
        omega_star, res = min_fwhm(
            p, 1, (0.3, 1.5), point_solver_factory=factory, window=(-5.0, 5.0),
        )
    assert omega_star == pytest.approx(0.3)
    assert res.fwhm == pytest.approx(0.8, abs=1e-2)
