"""Deterministic order-0 and order-1 parametrix terms, Beta-type integrals and
truncation envelopes.

Order-1 terms are time-space double integrals with two integrable endpoint
singularities: a kernel of width sqrt(t1) at the start of the time interval
and one of width sqrt(t - t1) at its end.  The time interval is split in half;
on the first half t1 = u^2 and the space variable is scaled by sqrt(t1) around
the start kernel's centre, on the second half t - t1 = u^2 and the space
variable is scaled by sqrt(t - t1) around the end kernel's centre (or below
the barrier).  Both substituted integrands are bounded, and nested adaptive
quadrature (scipy ``quad``) evaluates them.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.special import gamma, gammaln

from .coefficients import CoefficientSet, validate
from .kernels import exit_time_density_raw, gauss_raw, killed_density_raw
from .weights_backward import BackwardWeightContext, exit_kernel_raw, vartheta_hat_raw
from .weights_forward import ForwardWeightContext, boundary_kernel_K, theta_bar_raw

METHODS = ("forward", "backward")
KINDS = ("K", "D")


class QuadratureError(RuntimeError):
    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved error {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class SeriesTerm:
    method: str
    order: int
    kind: str
    value: float
    abs_error_estimate: float
    # named parts of the term, e.g. the boundary and interior pieces of forward K
    components: dict = field(default_factory=dict)

    def to_row(self, query):
        return {"method": self.method, "order": self.order, "kind": self.kind, "query_point": query,
                "value": self.value, "abs_error_estimate": self.abs_error_estimate}


# --- nested quadrature over (t1, y) ----------------------------------------------

_FINE = np.polynomial.legendre.leggauss(128)
_COARSE = np.polynomial.legendre.leggauss(96)


def _legendre(fn, lo, hi, rule):
    nodes, weights = rule
    half = 0.5 * (hi - lo)
    return half * float(np.dot(weights, fn(lo + half * (nodes + 1.0))))


class _InnerRule:
    """Gauss-Legendre over a window of the scaled space variable.

    The scaled integrand decays at least like exp(-w^2 a_min / (2 a_max)),
    so it is cut at |w| = window.  The worst gap between the 128- and 96-node
    results is kept as the error estimate of the inner integrals.
    """

    def __init__(self, window):
        self.window = window
        self.error = 0.0

    def __call__(self, fn, lo, hi):
        lo, hi = max(lo, -self.window), min(hi, self.window)
        if hi <= lo:
            return 0.0
        fine = _legendre(fn, lo, hi, _FINE)
        self.error = max(self.error, abs(fine - _legendre(fn, lo, hi, _COARSE)))
        return fine


def time_space_integral(fn, t, L, start, end, tol, window=12.0):
    """Integrate fn(t1, y) over t1 in (0, t) and y in (-inf, L).

    ``fn`` is vectorized in y.  ``start = (centre, variance)`` describes the
    kernel that concentrates at y = centre with width sqrt(variance * t1) as
    t1 -> 0.  ``end`` is either ``("point", centre, variance)`` (width
    sqrt(variance * (t - t1)) around centre) or ``("barrier", variance)``
    (same width below L).  Returns (value, error estimate).
    """
    half = np.sqrt(0.5 * t)
    inner = _InnerRule(window)
    c0, s0 = start[0], np.sqrt(start[1])

    def first_half(u):
        if u == 0.0:
            return 0.0
        t1 = u * u
        val = inner(lambda w: fn(t1, c0 + s0 * u * w), -np.inf, (L - c0) / (s0 * u))
        return 2.0 * s0 * u * u * val

    def second_half(u):
        if u == 0.0:
            return 0.0
        t1 = t - u * u
        if end[0] == "barrier":
            s1 = np.sqrt(end[1])
            val = inner(lambda v: fn(t1, L - s1 * u * v), 0.0, np.inf)
        else:
            c1, s1 = end[1], np.sqrt(end[2])
            val = inner(lambda w: fn(t1, c1 + s1 * u * w), -np.inf, (L - c1) / (s1 * u))
        return 2.0 * s1 * u * u * val

    # a missed tolerance surfaces as QuadratureError in the caller
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        a, ea = quad(first_half, 0.0, half, epsabs=0.5 * tol, epsrel=0.0, limit=200)
        b, eb = quad(second_half, 0.0, half, epsabs=0.5 * tol, epsrel=0.0, limit=200)
    return a + b, ea + eb + t * inner.error


def _finish(method, order, kind, value, err, tol, components=None):
    if not np.isfinite(value) or err > tol:
        raise QuadratureError(f"{method} order-{order} {kind} term missed tolerance {tol:.1e}", err)
    return SeriesTerm(method, order, kind, float(value), float(err), components or {})


def _check_args(order, kind, tol):
    if order not in (0, 1):
        raise ValueError("quadrature covers orders 0 and 1 only")
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if not tol > 0:
        raise ValueError("tol must be > 0")


def _window(model):
    return 12.0 * np.sqrt(model.ellipticity_upper / model.ellipticity_lower)


# --- forward terms -----------------------------------------------------------------

def term_forward(order, kind, x0, query, T, model: CoefficientSet, tol=1e-6) -> SeriesTerm:
    """Order-0 or order-1 forward term of the hitting density (K, query = t)
    or of the killed density at time T (D, query = z)."""
    _check_args(order, kind, tol)
    ctx = ForwardWeightContext(model)
    L = ctx.barrier
    x0 = float(x0)
    a0 = float(ctx.a(np.array(x0)))
    if kind == "K" and not 0 < query <= T:
        raise ValueError("query time must lie in (0, T]")
    if order == 0:
        if kind == "K":
            value = float(exit_time_density_raw(a0, L, x0, float(query)))
        else:
            value = float(killed_density_raw(a0, L, T, x0, float(query)))
        return SeriesTerm("forward", 0, kind, value, 0.0)
    if x0 >= L:
        return SeriesTerm("forward", 1, kind, 0.0, 0.0)

    def start_kernel(t1, z):
        # S_bar_t1(x0, z)
        return theta_bar_raw(t1, x0, z, a0, ctx.values(z), L) * gauss_raw(a0 * t1, z - x0)

    if kind == "K":
        t = float(query)
        boundary = float(boundary_kernel_K(t, x0, ctx))

        def fn(t1, z):
            z = np.minimum(z, L)
            return start_kernel(t1, z) * exit_time_density_raw(ctx.a(z), L, z, t - t1)

        interior, err = time_space_integral(fn, t, L, (x0, a0), ("barrier", model.ellipticity_upper), tol,
                                            _window(model))
        return _finish("forward", 1, "K", boundary + interior, err, tol,
                       {"boundary": boundary, "interior": interior})
    z = float(query)
    if z >= L:
        return SeriesTerm("forward", 1, "D", 0.0, 0.0)

    def fn(t1, z1):
        z1 = np.minimum(z1, L)
        return start_kernel(t1, z1) * killed_density_raw(ctx.a(z1), L, T - t1, z1, z)

    value, err = time_space_integral(fn, T, L, (x0, a0), ("point", z, float(ctx.a(np.array(z)))), tol,
                                     _window(model))
    return _finish("forward", 1, "D", value, err, tol)


# --- backward terms ------------------------------------------------------------------

def term_backward(order, kind, x0, query, T, model: CoefficientSet, tol=1e-6) -> SeriesTerm:
    """Order-0 or order-1 backward term (freeze at the end point / barrier)."""
    _check_args(order, kind, tol)
    ctx = BackwardWeightContext(model)
    L = ctx.barrier
    a_L = ctx.a_barrier
    x0 = float(x0)
    if kind == "K" and not 0 < query <= T:
        raise ValueError("query time must lie in (0, T]")
    if order == 0:
        if kind == "K":
            value = float(exit_time_density_raw(a_L, L, x0, float(query)))
        else:
            a_z = float(ctx.a(np.array(query)))
            value = float(killed_density_raw(a_z, L, T, x0, float(query)))
        return SeriesTerm("backward", 0, kind, value, 0.0)
    if x0 >= L:
        return SeriesTerm("backward", 1, kind, 0.0, 0.0)
    a0 = float(ctx.a(np.array(x0)))
    if kind == "K":
        t = float(query)

        def fn(s, y):
            y = np.minimum(y, L)
            a_y = ctx.a(y)
            return killed_density_raw(a_y, L, s, x0, y) * exit_kernel_raw(t - s, y, a_y, ctx.b(y), a_L, L)

        value, err = time_space_integral(fn, t, L, (x0, a0), ("barrier", a_L), tol, _window(model))
        return _finish("backward", 1, "K", value, err, tol)
    z = float(query)
    if z >= L:
        return SeriesTerm("backward", 1, "D", 0.0, 0.0)
    a_z = float(ctx.a(np.array(z)))

    def fn(s, y):
        y = np.minimum(y, L)
        a_y = ctx.a(y)
        kern = vartheta_hat_raw(s, z, y, a_z, a_y, ctx.b(y), L) * gauss_raw(a_z * s, y - z)
        return kern * killed_density_raw(a_y, L, T - s, x0, y)

    value, err = time_space_integral(fn, T, L, (z, a_z), ("point", x0, a0), tol, _window(model))
    return _finish("backward", 1, "D", value, err, tol)


def series_terms(method, kind, x0, queries, T, model, tol=1e-6):
    """Orders 0 and 1 at each query point, as a list of SeriesTerm pairs."""
    fn = term_forward if method == "forward" else term_backward
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    return [(q, fn(0, kind, x0, q, T, model, tol), fn(1, kind, x0, q, T, model, tol)) for q in queries]


# --- Beta-type integrals -------------------------------------------------------------

def beta_type_integral(n, a, b, t0):
    """Closed form of  int over t0 > t_1 > ... > t_n > 0 of t_n^b prod_j (t_j - t_{j+1})^{-a}."""
    return float(np.exp(_log_beta_type(n, a, b, t0)))


def _log_beta_type(n, a, b, t0):
    if not (b > -1 and 0 <= a < 1 and t0 > 0 and n >= 1):
        raise ValueError("need b > -1, 0 <= a < 1, t0 > 0, n >= 1")
    r = 1.0 - a
    return (b + n * r) * np.log(t0) + n * gammaln(r) + gammaln(1 + b) - gammaln(1 + b + n * r)


def nested_beta_integral(n, a, b, t0, tol=1e-13):
    """The same integral by n nested adaptive quadratures.

    Each level integrates (t_k - s)^{-a} F(s) over (0, t_k) with the
    algebraic end-point weight of ``quad``; the innermost level carries s^b
    in the weight as well.  No level uses the closed form of the levels below.
    """
    if n < 1:
        raise ValueError("n must be >= 1")

    def level(k, tk):
        if k == n - 1:
            val, _ = quad(lambda s: 1.0, 0.0, tk, weight="alg", wvar=(b, -a), epsabs=tol, epsrel=tol, limit=200)
            return val
        val, _ = quad(lambda s: level(k + 1, s), 0.0, tk, weight="alg", wvar=(0.0, -a),
                      epsabs=tol, epsrel=tol, limit=200)
        return val

    return level(0, float(t0))


# --- truncation envelopes --------------------------------------------------------

@dataclass(frozen=True)
class KernelBounds:
    """Constants of the difference-kernel envelopes (see docs/bound_ledger.md)."""

    a_lower: float
    a_upper: float
    gauss_ratio: float
    forward_S: float
    forward_K: float
    backward_S: float
    backward_K: float
    killed_density: float
    eta: float
    beta: float
    horizon: float

    @property
    def spread(self):
        """c in g(c t, .) of every envelope, c = 2 a_max."""
        return 2.0 * self.a_upper

    @property
    def forward_constant(self):
        """C with |S_bar_t| <= C t^{-1/2} g(c t) and |K_bar_t| <= C t^{-1/2} g(c t) on (0, T]."""
        return max(self.forward_S, self.forward_K * np.sqrt(self.horizon))

    @property
    def backward_constant(self):
        r"""C_T with both backward kernels bounded by C_T s^{-(3-eta-beta)/2} g(c s)."""
        return max(self.backward_S * self.horizon ** (0.5 * (1.0 - self.beta)), self.backward_K)


def default_beta(eta):
    """beta = 1 - eta/2, inside the admissible range (1 - eta, 1]."""
    return 1.0 - 0.5 * eta


def _sup(values):
    return float(np.max(np.abs(values))) if values is not None else 0.0


def kernel_bounds(model: CoefficientSet, T, span=1.0, points=4001, eta=None) -> KernelBounds:
    """Explicit kernel-envelope constants from sup norms of the coefficients.

    Sup norms are taken on the validation grid [L - 10 span, L]; the forward
    constants need an H1 model, the backward ones use the Hoelder constant of
    a with exponent eta.
    """
    eta = model.holder_exponent if eta is None else float(eta)
    beta = default_beta(eta)
    report = validate(model, span=span, points=points)
    lo, hi = model.ellipticity_lower, model.ellipticity_upper
    e = np.e
    rho = np.sqrt(2.0 * hi / lo)
    x = np.linspace(model.barrier - 10.0 * span, model.barrier, points)
    b = model.b(x)
    b_sup = _sup(b)
    if model.regularity_class == "H1":
        v = model.values(x)
        a1 = _sup(v.variance_deriv)
        curv = _sup(0.5 * v.variance_deriv2 - v.drift_deriv)
        slope = _sup(v.variance_deriv - v.drift)
        m1 = np.sqrt(2.0 * hi / e)
        m3 = (6.0 * hi / e) ** 1.5
        fwd_S = rho * (curv * np.sqrt(T) + 3.0 * slope * m1 / lo + 0.5 * a1 * (2.0 * m3 / lo ** 2 + m1 / lo))
        fwd_K = rho * a1 * 4.0 * hi / (e * lo)
    else:
        fwd_S = fwd_K = float("nan")
    hold = report.holder_quotient

    def power(p):
        return (2.0 * p * hi / e) ** (0.5 * p) if p > 0 else 1.0

    bwd_S = rho * (0.5 * hold * (2.0 * power(2.0 + eta) / lo ** 2 + power(eta) / lo)
                   + 3.0 * b_sup * np.sqrt(2.0 * hi / e) * T ** (0.5 * (1.0 - eta)) / lo)
    bwd_K = rho * (0.5 * hold * (power(3.0 + eta + beta) / lo ** 2 + 3.0 * power(1.0 + eta + beta) / lo)
                   + b_sup * (power(2.0 + beta) / lo + power(beta)) * T ** (0.5 * (1.0 - eta)))
    q_const = rho * max(1.0, 2.0 * (np.sqrt(2.0 * hi / e) + 1.0) / lo)
    return KernelBounds(lo, hi, rho, float(fwd_S), float(fwd_K), float(bwd_S), float(bwd_K), float(q_const),
                        eta, beta, float(T))


def log_truncation_bound(method, n, T, bounds: KernelBounds, gap, sup_payoff=1.0):
    """Natural log of the order-n envelope (-inf when the envelope is 0).

    forward:  |h| C^n T^{n/2} Gamma(1/2)^n / Gamma(1 + n/2) g(c T, gap)
    backward: C_q (2 C_T)^n T^{-beta/2 + n r} Gamma(r)^n Gamma(1 - beta/2)
              / Gamma(1 - beta/2 + n r) g(2 c T, gap),  r = (eta + beta)/2 - 1/2
    with gap = L - x0.  For the backward bound T is the hitting-time query t.
    The constants grow like C^n before the Gamma factor wins, so the envelope
    peaks near n ~ 2 pi C^2 T (forward) and only the log is representable there.
    """
    if n < 0 or not T > 0:
        raise ValueError("need n >= 0 and T > 0")
    c = bounds.spread
    if method == "forward":
        lead, C = sup_payoff * gauss_raw(c * T, gap), bounds.forward_constant
        a, b = 0.5, 0.0
    elif method == "backward":
        beta, eta = bounds.beta, bounds.eta
        lead, C = bounds.killed_density * gauss_raw(2.0 * c * T, gap), 2.0 * bounds.backward_constant
        a, b = 1.0 - ((eta + beta) / 2.0 - 0.5), -0.5 * beta
    else:
        raise ValueError(f"method must be one of {METHODS}")
    if lead == 0.0 or (n > 0 and C == 0.0):
        return -np.inf
    if n == 0:
        return float(np.log(lead) + b * np.log(T))
    return float(np.log(lead) + n * np.log(C) + _log_beta_type(n, a, b, T))


def truncation_bound(method, n, T, bounds: KernelBounds, gap, sup_payoff=1.0):
    """Envelope of the order-n term; inf where it exceeds the float range."""
    with np.errstate(over="ignore"):
        return float(np.exp(log_truncation_bound(method, n, T, bounds, gap, sup_payoff)))


def gamma_ratio(n, a, b, t0=1.0):
    """Gamma-ratio side of the Beta identity, evaluated with plain Gamma values."""
    r = 1.0 - a
    return float(t0 ** (b + n * r) * gamma(r) ** n * gamma(1 + b) / gamma(1 + b + n * r))
