"""Closed-form spin-correlation predictions and coincidence-ratio models.

Everything in this module is analytic: joint outcome probabilities for a
spin-singlet pair measured along two axes, detection probabilities behind
imperfect oriented-axis polarizers, the Gaussian pair-correlation function,
its convolution with a one-sided exponential detector response, and the
CH / CHSH inequality functionals.  All functions are pure and reentrant.

Angles are radians and times are seconds throughout; degree and nanosecond
conversions happen once at the configuration/CLI boundary.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import erfc, erfcx

__all__ = [
    "PolarizerPair",
    "CorrelationParams",
    "ResponseParams",
    "WindowParams",
    "JointOutcomeProbs",
    "ChScanResult",
    "fold_relative_angle",
    "theta_from_degrees",
    "singlet_joint_outcome_probs",
    "p12_ideal",
    "p12_all_pairs_perfect",
    "p12_paper",
    "p12_projector",
    "piecewise_coincidence_amplitudes",
    "correlation_c",
    "effective_t_w",
    "convolved_correlation",
    "coincidence_model",
    "ch_functional",
    "ch_violates",
    "ch_geometry_scan",
    "chsh_functional",
]

_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
_SQRT_TWO_PI = math.sqrt(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# angle handling
# ---------------------------------------------------------------------------

def _check_theta(theta) -> np.ndarray:
    """Validate a relative analyzer angle (radians) against [0, pi]."""
    th = np.asarray(theta, dtype=float)
    if np.any(th < -1e-12) or np.any(th > np.pi + 1e-12):
        raise ValueError(f"relative angle must lie in [0, pi], got {theta!r}")
    return np.clip(th, 0.0, np.pi)


def fold_relative_angle(theta):
    """Fold any real angle (radians) into [0, pi] using 2*pi periodicity and parity.

    Silent; meant for relative-angle arithmetic inside the inequality
    functionals where e.g. a - b' may be negative or exceed pi.
    """
    t = np.abs(np.asarray(theta, dtype=float)) % (2.0 * np.pi)
    folded = np.where(t > np.pi, 2.0 * np.pi - t, t)
    if np.ndim(theta) == 0:
        return float(folded)
    return folded


def theta_from_degrees(theta_deg: float) -> float:
    """Convert a stage angle in degrees to radians in [0, pi].

    The rotation stage covers 0..360 degrees; angles above 180 are folded to
    360 - theta by symmetry of the predictions, with a warning.  Angles
    outside [0, 360] raise instead of being wrapped silently.
    """
    if not -1e-9 <= theta_deg <= 360.0 + 1e-9:
        raise ValueError(f"stage angle must lie in [0, 360] degrees, got {theta_deg!r}")
    if theta_deg > 180.0:
        folded = 360.0 - theta_deg
        warnings.warn(
            f"stage angle {theta_deg:g} deg folded to {folded:g} deg by symmetry",
            stacklevel=2,
        )
        theta_deg = folded
    return math.radians(max(theta_deg, 0.0))


# ---------------------------------------------------------------------------
# parameter records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolarizerPair:
    """Transmittances of the two oriented analyzers and their relative angle.

    ``epsN_down`` is the transmittance for a neutron whose measured spin
    component is antiparallel to analyzer N's axis, ``epsN_up`` for parallel.
    ``theta`` is the relative angle of the two polarization axes in radians.
    """

    eps1_down: float
    eps1_up: float
    eps2_down: float
    eps2_up: float
    theta: float = 0.0

    def __post_init__(self):
        for name in ("eps1_down", "eps1_up", "eps2_down", "eps2_up"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {val!r}")
        if self.eps1_total == 0.0 or self.eps2_total == 0.0:
            raise ValueError("total transmittance of each analyzer must be positive")
        _check_theta(self.theta)

    @property
    def eps1_total(self) -> float:
        return self.eps1_down + self.eps1_up

    @property
    def eps2_total(self) -> float:
        return self.eps2_down + self.eps2_up

    @classmethod
    def identical(cls, eps_down: float, eps_up: float, theta: float = 0.0) -> "PolarizerPair":
        return cls(eps_down, eps_up, eps_down, eps_up, theta)

    @classmethod
    def from_degrees(cls, eps1_down, eps1_up, eps2_down, eps2_up, theta_deg) -> "PolarizerPair":
        return cls(eps1_down, eps1_up, eps2_down, eps2_up, theta_from_degrees(theta_deg))

    def with_theta(self, theta: float) -> "PolarizerPair":
        return replace(self, theta=theta)


@dataclass(frozen=True)
class CorrelationParams:
    """Gaussian pair-correlation dip: amplitude ``alpha`` and coherence time ``tau_c`` (s)."""

    alpha: float
    tau_c: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha!r}")
        if self.tau_c <= 0.0:
            raise ValueError(f"tau_c must be positive, got {self.tau_c!r}")


@dataclass(frozen=True)
class ResponseParams:
    """Effective one-sided exponential detector response time ``t_w`` (s)."""

    t_w: float

    def __post_init__(self):
        if self.t_w <= 0.0:
            raise ValueError(f"t_w must be positive, got {self.t_w!r}")

    @classmethod
    def from_capture_and_decay(cls, t_c: float, t_d: float) -> "ResponseParams":
        return cls(effective_t_w(t_c, t_d))


@dataclass(frozen=True)
class WindowParams:
    """Coincidence time window width (s)."""

    delta_window: float

    def __post_init__(self):
        if self.delta_window <= 0.0:
            raise ValueError(f"delta_window must be positive, got {self.delta_window!r}")


# ---------------------------------------------------------------------------
# joint outcome probabilities and detection probabilities
# ---------------------------------------------------------------------------

class JointOutcomeProbs(NamedTuple):
    p_dd: float
    p_du: float
    p_ud: float
    p_uu: float


def singlet_joint_outcome_probs(theta) -> JointOutcomeProbs:
    """Joint probabilities of the four spin outcomes for a singlet pair.

    Spins are projected on two axes at relative angle ``theta``.  Equal
    outcomes carry probability sin^2(theta/2)/2 each, opposite outcomes
    cos^2(theta/2)/2 each; the four sum to one.
    """
    th = _check_theta(theta)
    same = 0.5 * np.sin(th / 2.0) ** 2
    diff = 0.5 * np.cos(th / 2.0) ** 2
    return JointOutcomeProbs(same, diff, diff, same)


def p12_ideal(theta):
    """Short-delay pair-detection probability for perfect analyzers and a
    source emitting only singlet pairs: (1 - cos theta) / 4."""
    th = _check_theta(theta)
    return (1.0 - np.cos(th)) / 4.0


def p12_all_pairs_perfect(theta):
    """As :func:`p12_ideal` but relative to all four spin-pair states of an
    unpolarized source, i.e. (1 - cos theta) / 16."""
    return p12_ideal(theta) / 4.0


def piecewise_coincidence_amplitudes(theta, pol: PolarizerPair):
    """Short-delay and plateau coincidence amplitudes for general analyzers.

    Returns ``(c_short, c_plateau)`` up to the common single-rate factor:
    ``c_plateau = eps1_t * eps2_t / 4`` and
    ``c_short = [eps1_t * eps2_t - X(theta) * cos(theta)] / 16`` with the
    cross-transmittance term switching at 90 degrees:
    ``X = eps1_down*eps2_up + eps1_up*eps2_down`` below, and
    ``X = eps1_up*eps2_up + eps1_down*eps2_down`` above.
    """
    th = _check_theta(theta)
    et = pol.eps1_total * pol.eps2_total
    x_low = pol.eps1_down * pol.eps2_up + pol.eps1_up * pol.eps2_down
    x_high = pol.eps1_up * pol.eps2_up + pol.eps1_down * pol.eps2_down
    x = np.where(th <= np.pi / 2.0, x_low, x_high)
    c_short = (et - x * np.cos(th)) / 16.0
    c_plateau = np.broadcast_to(et / 4.0, np.shape(c_short))
    if np.ndim(theta) == 0:
        return float(c_short), et / 4.0
    return c_short, np.array(c_plateau)


def p12_paper(theta, pol: PolarizerPair):
    """Piecewise short-to-plateau coincidence ratio for oriented-axis analyzers.

    Ratio of the two amplitudes of :func:`piecewise_coincidence_amplitudes`;
    for identical polarizers it reduces to
    (1/4) * [1 - 2*eps_down*eps_up*cos(theta)/eps_t^2] below 90 degrees and
    (1/4) * [1 - (eps_up^2 + eps_down^2)*cos(theta)/eps_t^2] above, and is
    continuous with value exactly 1/4 at 90 degrees.
    """
    c_short, c_plateau = piecewise_coincidence_amplitudes(theta, pol)
    return c_short / c_plateau


def p12_projector(theta, pol: PolarizerPair):
    """Short-to-plateau ratio from projector-weighted transmission.

    Weights the singlet joint-outcome probabilities by the four transmittance
    products and normalizes by the uncorrelated joint transmission
    ``eps1_t * eps2_t / 4``, keeping the leading 1/4 scale of the piecewise
    prediction:

        (1/4) * [1 - cos(theta) * (eps1_d - eps1_u)(eps2_d - eps2_u) / (eps1_t eps2_t)]

    Coincides with :func:`p12_paper` at 90 degrees and reduces to
    :func:`p12_ideal` for perfect analyzers.  This is the curve the
    event-level simulation converges to.
    """
    th = _check_theta(theta)
    d1 = pol.eps1_down - pol.eps1_up
    d2 = pol.eps2_down - pol.eps2_up
    et = pol.eps1_total * pol.eps2_total
    return 0.25 * (1.0 - np.cos(th) * d1 * d2 / et)


# ---------------------------------------------------------------------------
# time correlation and detector response
# ---------------------------------------------------------------------------

def correlation_c(delta, params: CorrelationParams):
    """Pair correlation versus emission-time difference:
    1 - alpha * exp(-delta^2 / (2 tau_c^2)).  Even in ``delta``."""
    d = np.asarray(delta, dtype=float)
    out = 1.0 - params.alpha * np.exp(-(d * d) / (2.0 * params.tau_c**2))
    return float(out) if np.ndim(delta) == 0 else out


def effective_t_w(t_c: float, t_d: float) -> float:
    """Combine capture time and light-decay time into one effective response
    time: (1/t_c + 1/t_d)^-1."""
    if t_c <= 0.0 or t_d <= 0.0:
        raise ValueError("capture and decay times must be positive")
    return 1.0 / (1.0 / t_c + 1.0 / t_d)


def _smeared_gaussian(t, tau: float, t_w: float):
    """One-sided exponential response applied to a unit-peak Gaussian.

    G(t) = int_0^inf (1/t_w) exp(-s/t_w) exp(-(t-s)^2/(2 tau^2)) ds
         = (tau/t_w) sqrt(pi/2) exp(tau^2/(2 t_w^2) - t/t_w) erfc(q),
    q = (tau/t_w - t/tau)/sqrt(2).  Evaluated through erfcx on the branch
    where the direct form would overflow.
    """
    t = np.asarray(t, dtype=float)
    q = (tau / t_w - t / tau) / _SQRT2
    pref = (tau / t_w) * _SQRT_HALF_PI
    out = np.empty_like(t)
    pos = q >= 0.0
    out[pos] = pref * np.exp(-t[pos] ** 2 / (2.0 * tau * tau)) * erfcx(q[pos])
    neg = ~pos
    b = tau * tau / (2.0 * t_w * t_w) - t[neg] / t_w
    out[neg] = pref * np.exp(b) * erfc(q[neg])
    return out


def _smeared_gaussian_upper(x, tau: float, t_w: float):
    """S(x) = int_x^inf G(t) dt / (sqrt(2 pi) tau), the upper-tail mass of the
    exponential-response-smeared Gaussian (a unit-mass density in t)."""
    x = np.asarray(x, dtype=float)
    gauss_tail = 0.5 * erfc(x / (tau * _SQRT2))
    v = (tau / t_w - x / tau) / _SQRT2
    term = np.empty_like(x)
    pos = v >= 0.0
    term[pos] = 0.5 * np.exp(-x[pos] ** 2 / (2.0 * tau * tau)) * erfcx(v[pos])
    neg = ~pos
    b = tau * tau / (2.0 * t_w * t_w) - x[neg] / t_w
    term[neg] = 0.5 * np.exp(b) * erfc(v[neg])
    return gauss_tail + term


def _window_average_one_sided(delta, width: float, tau: float, t_w: float):
    """(1/width) * int_delta^{delta+width} G(t) dt via the closed-form tail mass."""
    d = np.asarray(delta, dtype=float)
    mass = _smeared_gaussian_upper(d, tau, t_w) - _smeared_gaussian_upper(d + width, tau, t_w)
    return _SQRT_TWO_PI * tau / width * mass


def _window_average_two_sided(delta, width: float, tau: float, t_w: float):
    """Window average of the two-sided profile (G(t) + G(-t))/2.

    This is the Gaussian smeared by the *difference* of two independent
    exponential delays (a symmetric Laplace kernel), which is what the delay
    between two independently-responding detectors actually follows.
    """
    d = np.asarray(delta, dtype=float)
    up = _smeared_gaussian_upper(d, tau, t_w) - _smeared_gaussian_upper(d + width, tau, t_w)
    lo = _smeared_gaussian_upper(-d - width, tau, t_w) - _smeared_gaussian_upper(-d, tau, t_w)
    return _SQRT_TWO_PI * tau / (2.0 * width) * (up + lo)


def convolved_correlation(t, corr: CorrelationParams, resp: ResponseParams):
    """The response-broadened correlation [w * c](t) with w normalized to unit
    integral: 1 - alpha * G(t)."""
    tt = np.asarray(t, dtype=float)
    out = 1.0 - corr.alpha * _smeared_gaussian(tt, corr.tau_c, resp.t_w)
    return float(out) if np.ndim(t) == 0 else out


def coincidence_model(delta, win: WindowParams, corr: CorrelationParams, resp: ResponseParams):
    """Expected coincidence ratio C(theta, delta) / C(theta, inf).

    Averages the response-broadened correlation over the coincidence window:
    (1/D) * int_delta^{delta+D} [w * c](t') dt', with the one-sided response
    w(s) = exp(-s/t_w)/t_w.  The integrals are evaluated in closed form
    (stabilized complementary-error-function expressions), so the result is
    exact to floating-point accuracy; it tends to 1 as delta grows and lies
    in [1 - alpha, 1].
    """
    d = np.asarray(delta, dtype=float)
    if np.any(d < 0.0):
        raise ValueError("delta must be non-negative")
    avg = _window_average_one_sided(d, win.delta_window, corr.tau_c, resp.t_w)
    out = 1.0 - corr.alpha * avg
    return float(out) if np.ndim(delta) == 0 else out


# ---------------------------------------------------------------------------
# inequality functionals
# ---------------------------------------------------------------------------

def ch_functional(p12: Callable, p1, p2, a, a_prime, b, b_prime):
    """Clauser-Horne combination of joint and single detection probabilities.

    S = p12(a-b) - p12(a-b') + p12(a'-b) + p12(a'-b') - p1 - p2,
    with ``p12`` a function of the relative angle only (angles are folded
    into [0, pi] before evaluation).  Local realistic models obey
    -1 <= S <= 0.  Accepts scalar or broadcastable array angles.
    """
    s = (
        p12(fold_relative_angle(np.subtract(a, b)))
        - p12(fold_relative_angle(np.subtract(a, b_prime)))
        + p12(fold_relative_angle(np.subtract(a_prime, b)))
        + p12(fold_relative_angle(np.subtract(a_prime, b_prime)))
        - p1
        - p2
    )
    return s


def ch_violates(s: float) -> bool:
    """True when S falls outside the local-realist interval [-1, 0]."""
    return bool(s < -1.0 or s > 0.0)


class ChScanResult(NamedTuple):
    phi: np.ndarray
    s: np.ndarray
    s_min: float
    phi_at_min: float
    s_max: float
    phi_at_max: float

    @property
    def any_violation(self) -> bool:
        return ch_violates(self.s_min) or ch_violates(self.s_max)


def ch_geometry_scan(p12: Callable, p1: float, p2: float, phi) -> ChScanResult:
    """Scan the one-parameter geometry a=0, b=phi, a'=2*phi, b'=3*phi.

    Returns S over the grid together with its extrema; the most negative S is
    the usual probe of the -1 bound.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    s = ch_functional(p12, p1, p2, 0.0, 2.0 * phi, phi, 3.0 * phi)
    i_min = int(np.argmin(s))
    i_max = int(np.argmax(s))
    return ChScanResult(phi, s, float(s[i_min]), float(phi[i_min]), float(s[i_max]), float(phi[i_max]))


def chsh_functional(correlation: Callable, a, a_prime, b, b_prime) -> float:
    """|E(a-b) - E(a-b') + E(a'-b) + E(a'-b')| for a correlation function E of
    the relative angle; bounded by 2 classically and 2*sqrt(2) quantum mechanically."""
    s = (
        correlation(fold_relative_angle(np.subtract(a, b)))
        - correlation(fold_relative_angle(np.subtract(a, b_prime)))
        + correlation(fold_relative_angle(np.subtract(a_prime, b)))
        + correlation(fold_relative_angle(np.subtract(a_prime, b_prime)))
    )
    return float(np.abs(s))
