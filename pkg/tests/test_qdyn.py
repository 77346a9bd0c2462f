import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from photoest.errors import DomainError, NoEmissionError
from photoest.qdyn import (
    DensityKernel,
    SystemParams,
    classical_moments,
    liouvillian,
    steady_state_population,
    waiting_time_cdf,
    waiting_time_density,
    wtd,
    wtd_survival,
)

# w(2) at delta=0, omega=1 from the closed form (8/15) e^{-1} (1 - cos(sqrt(15)))
W_2_RESONANT = 0.34222524990816544


def reference_density(tau, delta, omega):
    """Direct evaluation of exp(L tau)-based density via the 4x4 Liouvillian."""
    from scipy.linalg import expm

    p = SystemParams(delta, omega)
    lm = liouvillian(p, p).entries
    # jump superoperator J rho = sigma rho sigma^dag; start from |0><0|
    rho0 = np.zeros(4, complex)
    rho0[0] = 1.0
    # conditional evolution L0 = L - J, with J mapping rho11 -> rho00
    jump = np.zeros((4, 4), complex)
    jump[0, 3] = 1.0
    rho = expm((lm - jump) * tau) @ rho0
    # click rate gamma * rho_11 with gamma = 1
    return float(np.real(rho[3]))


def test_resonant_value_frozen():
    assert waiting_time_density(2.0, SystemParams(0.0, 1.0)) == pytest.approx(W_2_RESONANT, abs=1e-14)


def test_antibunching():
    assert waiting_time_density(0.0, SystemParams(0.7, 1.3)) == 0.0


@pytest.mark.parametrize("delta,omega", [(0.0, 1.0), (0.8, 1.0), (2.0, 0.3), (0.0, 0.25), (1.5, 4.0)])
def test_density_matches_liouvillian_propagation(delta, omega):
    for tau in (0.1, 1.0, 3.7, 12.0):
        assert wtd(tau, delta, omega) == pytest.approx(reference_density(tau, delta, omega), rel=1e-9, abs=1e-14)


def test_exceptional_point_is_continuous():
    tau = np.linspace(0.01, 20, 50)
    at = wtd(tau, 0.0, 0.25)
    near = wtd(tau, 0.0, 0.25 + 1e-7)
    assert np.allclose(at, near, rtol=1e-5, atol=1e-12)


@given(st.floats(0.0, 3.0), st.floats(0.25, 5.0), st.floats(0.0, 60.0))
@settings(max_examples=60, deadline=None)
def test_cdf_and_survival_are_complementary(delta, omega, tau):
    c = waiting_time_cdf(tau, SystemParams(delta, omega))
    s = wtd_survival(tau, delta, omega)
    assert 0.0 <= c <= 1.0
    # the split closed form loses ~eps/R digits right next to the exceptional point
    assert c + s == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("delta,omega", [(0.4, 1.0), (3.0, 0.5)])
def test_cdf_matches_quadrature(delta, omega):
    for tau in (0.5, 2.0, 9.0):
        val, _ = quad(lambda t: wtd(t, delta, omega), 0, tau, epsabs=1e-13, limit=200)
        assert waiting_time_cdf(tau, SystemParams(delta, omega)) == pytest.approx(val, abs=1e-11)


def test_density_is_even_in_delta():
    tau = np.linspace(0, 10, 21)
    assert np.allclose(wtd(tau, 0.9, 1.0), wtd(tau, -0.9, 1.0), rtol=0, atol=1e-15)


def test_kernel_agrees_with_scalar_density():
    deltas = np.linspace(0, 3, 7)
    kern = DensityKernel(deltas, 1.0)
    tau = np.array([[0.3], [2.0], [7.5]])
    assert np.allclose(kern.density(tau), wtd(tau, deltas, 1.0), rtol=1e-12, atol=1e-15)
    with np.errstate(divide="ignore"):
        assert np.allclose(kern.log_density(tau), np.log(wtd(tau, deltas, 1.0)), rtol=1e-10)


def test_classical_moments_resonant():
    m = classical_moments(SystemParams(0.0, 1.0), 48)
    assert m.mu == pytest.approx(2.25, rel=1e-14)
    assert m.sigma**2 == pytest.approx(57 / 768, rel=1e-12)


def test_mean_matches_first_moment():
    p = SystemParams(1.1, 0.7)
    val, _ = quad(lambda t: t * wtd(t, p.delta, p.omega), 0, np.inf, limit=400)
    assert classical_moments(p, 1).mu == pytest.approx(val, rel=1e-7)


def test_steady_state_population_matches_liouvillian_null_vector():
    p = SystemParams(0.6, 1.4)
    rho = liouvillian(p, p).steady_state()
    assert steady_state_population(p) == pytest.approx(float(np.real(rho[1, 1])), rel=1e-10)


def test_liouvillian_is_trace_preserving():
    p = SystemParams(0.3, 0.8)
    lm = liouvillian(p, p).entries
    trace_row = np.array([1, 0, 0, 1])
    assert np.allclose(trace_row @ lm, 0, atol=1e-14)


def test_domain_errors():
    with pytest.raises(DomainError):
        SystemParams(0.1, -1.0)
    with pytest.raises(DomainError):
        SystemParams(0.1, 1.0, gamma=0.0)
    with pytest.raises(DomainError):
        waiting_time_density(-1.0, SystemParams(0.0, 1.0))
    with pytest.raises((DomainError, NoEmissionError)):
        waiting_time_density(1.0, SystemParams(0.0, 0.0))


def test_gamma_scaling():
    # rates scale with gamma, times inversely
    g = 2.5
    tau = np.array([0.2, 1.0, 4.0])
    assert np.allclose(wtd(tau / g, 0.8 * g, 1.1 * g, g), g * wtd(tau, 0.8, 1.1, 1.0), rtol=1e-12)
