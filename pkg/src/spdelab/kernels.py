"""Heat kernels on the line and on [0,1] with absorbing walls, plus the
integral norms that control the noise variance and regularity estimates.

Whole-line kernel:

    g1(t, z) = exp(-z^2 / (4 t)) / sqrt(4 pi t)

Dirichlet kernel on [0,1]: method of images, reflections at both walls,

    g2(t, x, y) = sum_n [ g1-bump(y - x - 2n) - g1-bump(y + x - 2n) ]

truncated symmetrically in n so the two wall values cancel exactly.

Exposed integral quantities (G is g1 or g2 depending on the domain):

    kernel_space_l2(t, x)          int G(t, x, y)^2 dy
    kernel_deriv_l1(t, x)          int |d/dy G(t, x, y)| dy
    time_integrated_l2(t, eps, x)  int_{t-eps}^t int G(t-s, x, y)^2 dy ds

On the whole line these equal (8 pi t)^(-1/2), (pi t)^(-1/2) and
sqrt(eps / (2 pi)); the code paths reproduce the closed forms to rounding
and they double as oracles for the additive-noise solver tests.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

__all__ = [
    "Domain",
    "KernelSpec",
    "QuadratureAccuracyError",
    "auto_image_truncation",
    "g1_eval",
    "g2_eval",
    "image_tail_bound",
    "kernel_deriv_l1",
    "kernel_dy_eval",
    "kernel_space_l2",
    "time_integrated_l2",
    "weighted_time_integrated_l2",
]

# Gaussian mass beyond 10 standard-ish widths is < 1e-21 relative, so a
# +-10 sqrt(t) window loses nothing at double precision.
_WINDOW_WIDTHS = 10.0
_REL_TOL = 1e-6
_TIME_NODES = 96


class Domain(enum.Enum):
    WHOLE_LINE = "whole_line"
    UNIT_INTERVAL_DIRICHLET = "unit_interval_dirichlet"


class QuadratureRule(enum.Enum):
    MIDPOINT = "midpoint"
    SIMPSON = "simpson"


class QuadratureAccuracyError(RuntimeError):
    """Raised when the embedded error estimate exceeds the tolerance."""


def image_tail_bound(n_images: int, t: float) -> float:
    """Bound on the magnitude of one omitted image pair beyond ``|n| <= N``."""
    return math.exp(-((2 * n_images - 2) ** 2) / (4 * t)) / math.sqrt(4 * math.pi * t)


def auto_image_truncation(t: float, tol: float = 1e-12) -> int:
    """Smallest N with ``image_tail_bound(N, t) < tol``."""
    n = 1
    while image_tail_bound(n, t) >= tol:
        n += 1
        if n > 10_000:  # tol unreachable only for absurd t
            raise ValueError(f"no truncation satisfies tol={tol} at t={t}")
    return n


@dataclass(frozen=True)
class KernelSpec:
    """Kernel evaluation policy: domain, image truncation, quadrature.

    ``image_truncation`` is the image index bound N (``|n| <= N``); ``None``
    selects the smallest N whose omitted-pair tail is below 1e-12 at the
    evaluation time.  ``quadrature_points`` counts subintervals and must be
    even for Simpson.  The whole-line domain ignores ``image_truncation``.
    """

    domain: Domain
    image_truncation: int | None = None
    quadrature_points: int = 4096
    quadrature_rule: QuadratureRule = QuadratureRule.SIMPSON

    def __post_init__(self):
        if self.image_truncation is not None and self.image_truncation < 1:
            raise ValueError("image_truncation must be >= 1")
        if self.quadrature_points < 16:
            raise ValueError("quadrature_points must be >= 16")
        if self.quadrature_rule is QuadratureRule.SIMPSON and self.quadrature_points % 2:
            raise ValueError("Simpson needs an even subinterval count")

    def truncation_for(self, t: float) -> int:
        if self.image_truncation is not None:
            return self.image_truncation
        return auto_image_truncation(t)


def _check_time(t):
    if not t > 0:
        raise ValueError(f"time must be > 0, got {t}")


def _check_unit(name, v):
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {v}")


def g1_eval(t: float, z):
    """Whole-line heat kernel (4 pi t)^(-1/2) exp(-z^2/(4t)); even in z."""
    _check_time(t)
    z = np.asarray(z, dtype=float)
    out = np.exp(-(z * z) / (4.0 * t)) / math.sqrt(4.0 * math.pi * t)
    return out if out.ndim else float(out)


def _images(x: float, n_images: int):
    """Centers and signs of the reflected sources seen from source point x.

    The kernel is sum_k s_k * exp(-(y - a_k)^2/(4t)) / sqrt(4 pi t) with
    positive images at x + 2n and negative ones at -x + 2n.
    """
    n = np.arange(-n_images, n_images + 1, dtype=float)
    centers = np.concatenate([x + 2.0 * n, -x + 2.0 * n])
    signs = np.concatenate([np.ones_like(n), -np.ones_like(n)])
    return centers, signs


def _g2_values(t, x, y, n_images):
    y = np.asarray(y, dtype=float)
    centers, signs = _images(x, n_images)
    z = y[..., None] - centers
    vals = np.exp(-(z * z) / (4.0 * t)) @ signs
    return vals / math.sqrt(4.0 * math.pi * t)


def _g2_dy_values(t, x, y, n_images):
    y = np.asarray(y, dtype=float)
    centers, signs = _images(x, n_images)
    z = y[..., None] - centers
    vals = (np.exp(-(z * z) / (4.0 * t)) * (-z / (2.0 * t))) @ signs
    return vals / math.sqrt(4.0 * math.pi * t)


def g2_eval(t: float, x: float, y: float, spec: KernelSpec) -> float:
    """Dirichlet kernel on [0,1] by truncated image sum.

    The truncation keeps ``|n| <= N`` with N from ``spec``; the omitted part
    is bounded by ``image_tail_bound(N, t)`` per pair.  The symmetric range
    makes the wall values at y = 0 and y = 1 cancel exactly.
    """
    _check_time(t)
    _check_unit("x", x)
    _check_unit("y", y)
    return float(_g2_values(t, x, np.float64(y), spec.truncation_for(t)))


def kernel_dy_eval(spec: KernelSpec, t: float, x: float, y: float) -> float:
    """Analytic d/dy of the domain kernel at (t, x, y).

    Whole line: g1(t, x - y) * (x - y) / (2 t).  Dirichlet: term-wise
    derivative of the image sum.
    """
    _check_time(t)
    if spec.domain is Domain.WHOLE_LINE:
        z = x - y
        return float(g1_eval(t, z) * z / (2.0 * t))
    _check_unit("x", x)
    _check_unit("y", y)
    return float(_g2_dy_values(t, x, np.float64(y), spec.truncation_for(t)))


def _simpson(vals, h):
    return h / 3.0 * (vals[0] + vals[-1] + 4.0 * vals[1:-1:2].sum() + 2.0 * vals[2:-2:2].sum())


def _integrate_piece(fn, a, b, n_sub, rule):
    """Integral of fn over [a, b] with an embedded error estimate.

    Simpson: Richardson against the half-resolution rule on the same
    samples, error ~ |I_n - I_{n/2}| / 15.  Midpoint: fresh half-resolution
    pass, error ~ |I_n - I_{n/2}| / 3.
    """
    if rule is QuadratureRule.SIMPSON:
        xs = np.linspace(a, b, n_sub + 1)
        vals = fn(xs)
        h = (b - a) / n_sub
        full = _simpson(vals, h)
        half = _simpson(vals[::2], 2.0 * h)
        return full, abs(full - half) / 15.0
    h = (b - a) / n_sub
    mids = a + h * (np.arange(n_sub) + 0.5)
    full = fn(mids).sum() * h
    h2 = 2.0 * h
    mids2 = a + h2 * (np.arange(n_sub // 2) + 0.5)
    half = fn(mids2).sum() * h2
    return full, abs(full - half) / 3.0


def _integrate(fn, pieces, spec: KernelSpec):
    """Piecewise quadrature with proportional point allocation."""
    total_len = sum(b - a for a, b in pieces)
    value = 0.0
    err = 0.0
    for a, b in pieces:
        n = max(64, int(round(spec.quadrature_points * (b - a) / total_len)))
        n += n % 2
        v, e = _integrate_piece(fn, a, b, n, spec.quadrature_rule)
        value += v
        err += e
    if err > _REL_TOL * max(abs(value), 1e-300):
        raise QuadratureAccuracyError(
            f"estimated relative error {err / max(abs(value), 1e-300):.2e} "
            f"exceeds {_REL_TOL:.0e}; raise quadrature_points"
        )
    return value


def kernel_space_l2(spec: KernelSpec, t: float, x: float = 0.5) -> float:
    """Squared spatial L2 norm int G(t, x, y)^2 dy of the domain kernel.

    Whole line: equals (8 pi t)^(-1/2) and is independent of x; computed on
    the window x +- 10 sqrt(t).  Dirichlet: quadrature over [0, 1].
    """
    _check_time(t)
    if spec.domain is Domain.WHOLE_LINE:
        w = _WINDOW_WIDTHS * math.sqrt(t)
        fn = lambda y: g1_eval(t, x - y) ** 2
        return _integrate(fn, [(x - w, x + w)], spec)
    _check_unit("x", x)
    n_img = spec.truncation_for(t)
    fn = lambda y: _g2_values(t, x, y, n_img) ** 2
    return _integrate(fn, [(0.0, 1.0)], spec)


def _sign_change_roots(fn, a, b, n_scan=1024):
    xs = np.linspace(a, b, n_scan + 1)
    vals = fn(xs)
    roots = []
    for i in range(n_scan):
        lo, hi = vals[i], vals[i + 1]
        if lo == 0.0:
            roots.append(xs[i])
        elif lo * hi < 0.0:
            roots.append(brentq(lambda y: float(fn(np.float64(y))), xs[i], xs[i + 1]))
    if vals[-1] == 0.0:
        roots.append(xs[-1])
    return roots


def kernel_deriv_l1(spec: KernelSpec, t: float, x: float = 0.5) -> float:
    """Spatial L1 norm int |d/dy G(t, x, y)| dy of the kernel derivative.

    Whole line: equals (pi t)^(-1/2).  The integrand has kinks where the
    derivative changes sign; the quadrature splits there so every piece is
    smooth (whole line: the single kink at y = x; Dirichlet: sign-scan plus
    root polish).
    """
    _check_time(t)
    if spec.domain is Domain.WHOLE_LINE:
        w = _WINDOW_WIDTHS * math.sqrt(t)
        fn = lambda y: np.abs(g1_eval(t, x - y) * (x - y) / (2.0 * t))
        return _integrate(fn, [(x - w, x), (x, x + w)], spec)
    _check_unit("x", x)
    n_img = spec.truncation_for(t)
    raw = lambda y: _g2_dy_values(t, x, y, n_img)
    cuts = [r for r in _sign_change_roots(raw, 0.0, 1.0) if 1e-12 < r < 1.0 - 1e-12]
    edges = [0.0] + sorted(cuts) + [1.0]
    pieces = list(zip(edges[:-1], edges[1:]))
    return _integrate(lambda y: np.abs(raw(y)), pieces, spec)


def _gauss_legendre(n, a, b):
    u, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (u + 1.0), half * w


def _dirichlet_squared_profile(w_nodes, x, n_img):
    """J(w^2) * 2w where J(tau) = int_0^1 g2(tau, x, y)^2 dy, exactly.

    Pair reduction: the product of two image bumps is a Gaussian in y times
    exp(-(a_i - a_j)^2 / (8 tau)), and its [0,1] mass is a normal-cdf
    difference, so the y integral needs no quadrature at all.
    """
    centers, signs = _images(x, n_img)
    ai = centers[:, None]
    aj = centers[None, :]
    ss = signs[:, None] * signs[None, :]
    d2 = (ai - aj) ** 2
    m = 0.5 * (ai + aj)
    w = w_nodes[None, None, :]
    with np.errstate(divide="ignore"):
        decay = np.exp(-d2[..., None] / (8.0 * w * w))
    mass = ndtr((1.0 - m[..., None]) / w) - ndtr(-m[..., None] / w)
    return 2.0 / math.sqrt(8.0 * math.pi) * np.sum(ss[..., None] * decay * mass, axis=(0, 1))


def _dirichlet_plain_profile(w_nodes, x, n_img):
    """M(w^2) * 2w where M(tau) = int_0^1 g2(tau, x, y) dy (cdf differences)."""
    centers, signs = _images(x, n_img)
    sq2 = math.sqrt(2.0)
    w = w_nodes[None, :]
    a = centers[:, None]
    mass = ndtr((1.0 - a) / (sq2 * w)) - ndtr(-a / (sq2 * w))
    return 2.0 * w_nodes * (signs @ mass)


def time_integrated_l2(
    spec: KernelSpec, t: float, eps: float, x: float = 0.5, squared: bool = True
) -> float:
    """Time-window kernel norm int_{t-eps}^t int G(t-s, x, y)^q dy ds, q = 2.

    Whole line: equals sqrt(eps / (2 pi)).  The (t-s)^(-1/2) endpoint
    singularity is removed exactly by substituting t - s = w^2, after which
    the integrand is smooth and Gauss-Legendre converges fast; the inner
    spatial integral is closed-form in both domains (Gaussian masses via the
    normal cdf), so no singular quadrature ever happens.

    ``squared=False`` integrates the plain kernel instead (q = 1); on the
    whole line that equals eps exactly.  Note the result depends only on
    eps, never on t, because the kernel is a function of t - s alone;
    eps = t covers the full history of a solution started at 0.
    """
    _check_time(t)
    if not 0.0 < eps <= t:
        raise ValueError(f"need 0 < eps <= t, got eps={eps}, t={t}")
    nodes, weights = _gauss_legendre(_TIME_NODES, 0.0, math.sqrt(eps))
    if spec.domain is Domain.WHOLE_LINE:
        # int g1^2 dy = (8 pi tau)^(-1/2); times 2w the integrand is constant.
        if squared:
            profile = np.full_like(nodes, 2.0 / math.sqrt(8.0 * math.pi))
        else:
            profile = 2.0 * nodes  # unit mass at every tau
    else:
        _check_unit("x", x)
        n_img = spec.truncation_for(eps)
        if squared:
            profile = _dirichlet_squared_profile(nodes, x, n_img)
        else:
            profile = _dirichlet_plain_profile(nodes, x, n_img)
    value = float(weights @ profile)
    half_nodes, half_weights = _gauss_legendre(_TIME_NODES // 2, 0.0, math.sqrt(eps))
    if spec.domain is Domain.WHOLE_LINE:
        check = float(
            half_weights @ (
                np.full_like(half_nodes, 2.0 / math.sqrt(8.0 * math.pi))
                if squared
                else 2.0 * half_nodes
            )
        )
    elif squared:
        check = float(half_weights @ _dirichlet_squared_profile(half_nodes, x, n_img))
    else:
        check = float(half_weights @ _dirichlet_plain_profile(half_nodes, x, n_img))
    if abs(value - check) > 1e-9 * max(abs(value), 1e-300):
        raise QuadratureAccuracyError(
            f"time quadrature disagreement {abs(value - check):.2e} at t={t}, eps={eps}"
        )
    return value


def _pair_terms(spec: KernelSpec, eps: float, x: float):
    """Image pairs for the squared kernel, pruned by their exp(-d^2/(8 eps))
    damping; the whole line is the single undamped pair at center x."""
    if spec.domain is Domain.WHOLE_LINE:
        return np.array([x]), np.array([x]), np.array([1.0]), np.array([0.0])
    centers, signs = _images(x, spec.truncation_for(eps))
    ai, aj = np.meshgrid(centers, centers, indexing="ij")
    ss = np.outer(signs, signs)
    d2 = (ai - aj) ** 2
    keep = d2 < 8.0 * eps * 80.0  # dropped pairs damped below exp(-80)
    return ai[keep], aj[keep], ss[keep], d2[keep]


def _weighted_squared_profile(w_nodes, spec, eps, x, edges, coef0, coef1):
    """2w * int G^2(w^2, x, y) w(y) dy for a piecewise-linear weight.

    Per pair and cell the y integral is closed-form: with N(y; m, tau) the
    normal density, int_cell N * (c0 + c1 y) dy = (c0 + c1 m) dPhi
    + c1 sqrt(tau) (pdf_lo - pdf_hi).
    """
    ai, aj, ss, d2 = _pair_terms(spec, eps, x)
    m = 0.5 * (ai + aj)  # (P,)
    w = w_nodes[None, None, :]  # broadcast to (P, C, W)
    m_ = m[:, None, None]
    with np.errstate(divide="ignore"):
        damp = np.exp(-d2[:, None, None] / (8.0 * w * w))
    z_lo = (edges[None, :-1, None] - m_) / w
    z_hi = (edges[None, 1:, None] - m_) / w
    dphi = ndtr(z_hi) - ndtr(z_lo)
    pdf_lo = np.exp(-0.5 * z_lo * z_lo) / math.sqrt(2.0 * math.pi)
    pdf_hi = np.exp(-0.5 * z_hi * z_hi) / math.sqrt(2.0 * math.pi)
    cell = (coef0[None, :, None] + coef1[None, :, None] * m_) * dphi + coef1[
        None, :, None
    ] * w * (pdf_lo - pdf_hi)
    per_pair = (damp * cell).sum(axis=1)  # (P, W)
    return 2.0 / math.sqrt(8.0 * math.pi) * (ss[:, None] * per_pair).sum(axis=0)


def weighted_time_integrated_l2(
    spec: KernelSpec, t: float, eps: float, x: float, positions, values
) -> float:
    """Weighted window norm int_{t-eps}^t int G(t-s, x, y)^2 w(y) dy ds.

    The weight w is piecewise linear through (positions, values) and zero
    outside their span, which is how a field sampled on the solver grid
    enters the variance integral.  With w identically 1 on a wide enough
    span this reduces to ``time_integrated_l2``.  Same singularity
    treatment: t - s = w^2 plus Gauss-Legendre.
    """
    _check_time(t)
    if not 0.0 < eps <= t:
        raise ValueError(f"need 0 < eps <= t, got eps={eps}, t={t}")
    positions = np.asarray(positions, dtype=float)
    values = np.asarray(values, dtype=float)
    if positions.ndim != 1 or positions.shape != values.shape or positions.size < 2:
        raise ValueError("weight needs matching 1-d positions and values, >= 2 points")
    if np.any(np.diff(positions) <= 0):
        raise ValueError("weight positions must be strictly increasing")
    if spec.domain is Domain.UNIT_INTERVAL_DIRICHLET:
        _check_unit("x", x)
    edges = positions
    slope = np.diff(values) / np.diff(edges)
    coef1 = slope
    coef0 = values[:-1] - slope * edges[:-1]
    nodes, weights = _gauss_legendre(_TIME_NODES, 0.0, math.sqrt(eps))
    profile = _weighted_squared_profile(nodes, spec, eps, x, edges, coef0, coef1)
    value = float(weights @ profile)
    half_nodes, half_weights = _gauss_legendre(_TIME_NODES // 2, 0.0, math.sqrt(eps))
    check = float(
        half_weights @ _weighted_squared_profile(half_nodes, spec, eps, x, edges, coef0, coef1)
    )
    # scale for near-cancelling weights: the unweighted norm times max |w|
    scale = max(abs(value), math.sqrt(eps / (2.0 * math.pi)) * np.abs(values).max(), 1e-300)
    if abs(value - check) > 1e-8 * scale:
        raise QuadratureAccuracyError(
            f"weighted time quadrature disagreement {abs(value - check):.2e}"
        )
    return value
