"""Asymmetric norms on a two-dimensional fiber.

A norm ``F`` on the plane is the support function of its dual body
``D* = {p : p.v <= F(v) for all v}``; the dual norm ``H(p) = sup p.v / F(v)``
is the gauge of ``D*``. Everything here is vectorized over leading axes:
vectors are arrays of shape ``(..., 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

TWO_PI = 2.0 * np.pi

# Newton step used to differentiate along the circle of directions.
_ANGLE_FD = 1e-5

# h + h'' must stay above this for a norm to count as quadratically convex.
CONVEXITY_THRESHOLD = 1e-6
# Noise allowance for stored support bodies.
BODY_CONVEXITY_SLACK = -1e-8


class NormError(ValueError):
    """Raised when a norm or support body violates its invariants."""


class ConvexityError(NormError):
    pass


def unit(theta):
    """Unit vectors ``(cos t, sin t)``, shape ``theta.shape + (2,)``."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def unit_perp(theta):
    theta = np.asarray(theta, dtype=float)
    return np.stack([-np.sin(theta), np.cos(theta)], axis=-1)


def angle_grid(n: int) -> np.ndarray:
    return TWO_PI * np.arange(n) / n


def circle_argmax(g: Callable, batch_shape: tuple, n_grid: int = 256, max_iter: int = 12):
    """Maximize a smooth 2pi-periodic function separately for each batch entry.

    ``g`` maps an angle array of shape ``batch_shape + (k,)`` to values of the
    same shape. A grid scan picks the best of ``n_grid`` directions, then
    safeguarded Newton steps on the angle (finite-difference derivatives)
    polish the maximizer. Returns ``(max_value, argmax_angle)``, both of
    shape ``batch_shape``.
    """
    grid = angle_grid(n_grid)
    theta_grid = np.broadcast_to(grid, tuple(batch_shape) + (n_grid,))
    vals = g(theta_grid)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite value during circle scan")
    k = np.argmax(vals, axis=-1)
    theta = grid[k]
    best = np.take_along_axis(vals, k[..., None], axis=-1)[..., 0]
    spacing = TWO_PI / n_grid
    offsets = np.array([-_ANGLE_FD, 0.0, _ANGLE_FD])
    for _ in range(max_iter):
        gm, g0, gp = np.moveaxis(g(theta[..., None] + offsets), -1, 0)
        d1 = (gp - gm) / (2 * _ANGLE_FD)
        d2 = (gp - 2 * g0 + gm) / _ANGLE_FD**2
        concave = d2 < 0
        step = np.where(concave, -d1 / np.where(concave, d2, -1.0), np.sign(d1) * spacing / 4)
        step = np.clip(step, -spacing, spacing)
        theta = theta + step
        # Quadratic convergence: after a step this small the remaining error is ~1e-14.
        if np.all(np.abs(step) < 1e-7):
            break
    value = g(theta[..., None])[..., 0]
    # Never return worse than the grid scan.
    worse = value < best
    if np.any(worse):
        value = np.where(worse, best, value)
        theta = np.where(worse, grid[k], theta)
    return value, np.mod(theta, TWO_PI)


@dataclass(frozen=True)
class AsymNorm:
    """A positively homogeneous norm on the plane, possibly asymmetric.

    ``func`` evaluates on arrays of shape ``(..., 2)``; ``grad`` (optional)
    is the fiber derivative, returning covectors of the same shape.
    """

    func: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""

    def __call__(self, v):
        return self.func(np.asarray(v, dtype=float))


@dataclass
class ValidityReport:
    valid: bool
    homogeneity_residual: float
    positivity_margin: float
    convexity_margin: float
    worst_angle: float
    reason: str = ""


def euclidean_norm() -> AsymNorm:
    return AsymNorm(
        lambda v: np.hypot(v[..., 0], v[..., 1]),
        lambda v: v / np.hypot(v[..., 0], v[..., 1])[..., None],
        name="euclidean",
    )


def linear_plus(F: AsymNorm, b) -> AsymNorm:
    """The norm ``F(v) + b.v``."""
    b = np.asarray(b, dtype=float)
    grad = None if F.grad is None else (lambda v: F.grad(v) + b)
    return AsymNorm(lambda v: F(v) + v @ b, grad, name=f"{F.name}+linear")


def norm_from_support(h: Callable, dh: Optional[Callable] = None) -> AsymNorm:
    """Homogeneous extension ``F(r u(t)) = r h(t)`` of a function on the circle."""

    def func(v):
        r = np.hypot(v[..., 0], v[..., 1])
        return r * h(np.arctan2(v[..., 1], v[..., 0]))

    grad = None
    if dh is not None:
        def grad(v):
            t = np.arctan2(v[..., 1], v[..., 0])
            return h(t)[..., None] * unit(t) + dh(t)[..., None] * unit_perp(t)

    return AsymNorm(func, grad, name="support")


def _curvature_radius(h: np.ndarray) -> np.ndarray:
    # Denominator 2(1 - cos d) instead of d^2 makes first harmonics (translations)
    # contribute exactly zero.
    d = TWO_PI / h.size
    return h + (np.roll(h, -1) - 2 * h + np.roll(h, 1)) / (2 - 2 * np.cos(d))


def check_norm_validity(F: AsymNorm, samples: int = 512, seed: int = 0) -> ValidityReport:
    """Sample homogeneity, positivity and discrete quadratic convexity of ``F``."""
    if samples < 64:
        raise ValueError("need at least 64 samples")
    theta = angle_grid(samples)
    with np.errstate(all="ignore"):
        h = F(unit(theta))
    if not np.all(np.isfinite(h)):
        bad = theta[~np.isfinite(h)][0]
        return ValidityReport(False, np.nan, np.nan, np.nan, float(bad), "non-finite evaluation")

    rng = np.random.default_rng(seed)
    v = rng.normal(size=(100, 2))
    lam = rng.uniform(0.0, 10.0, size=100)
    lam[lam == 0.0] = 1.0
    fv = F(v)
    flv = F(lam[:, None] * v)
    homog = float(np.max(np.abs(flv - lam * fv) / np.maximum(lam * np.abs(fv), 1e-300)))

    curvature = _curvature_radius(h)
    k = int(np.argmin(curvature))
    pos = float(np.min(h))
    conv = float(curvature[k])

    reasons = []
    if not homog <= 1e-9:
        reasons.append(f"homogeneity residual {homog:.3g}")
    if not pos > 0:
        reasons.append(f"non-positive value at angle {theta[np.argmin(h)]:.6f}")
    if not conv > CONVEXITY_THRESHOLD * max(pos, 1e-300):
        reasons.append(f"convexity margin {conv:.3g} at angle {theta[k]:.6f}")
    return ValidityReport(not reasons, homog, pos, conv, float(theta[k]), "; ".join(reasons))


def _dual_sup(F: AsymNorm, p: np.ndarray, n_grid: int = 256):
    p = np.asarray(p, dtype=float)
    batch = p.shape[:-1]
    pe = p[..., None, :]

    def g(theta):
        u = unit(theta)
        return np.sum(pe * u, axis=-1) / F(u)

    return circle_argmax(g, batch, n_grid=n_grid)


def dual_norm(F: AsymNorm, p, n_grid: int = 256):
    """``H(p) = max over F(v) = 1 of p.v``; zero covectors map to 0."""
    p = np.asarray(p, dtype=float)
    if n_grid < 256:
        raise ValueError("dual norm scan needs at least 256 directions")
    zero = (p[..., 0] == 0) & (p[..., 1] == 0)
    value, _ = _dual_sup(F, np.where(zero[..., None], 1.0, p), n_grid)
    value = np.where(zero, 0.0, value)
    return value if value.ndim else float(value)


def dual_norm_as_norm(F: AsymNorm) -> AsymNorm:
    """The dual norm packaged as an :class:`AsymNorm` on covectors.

    Its gradient comes from the maximizing direction (envelope theorem).
    """

    def grad(p):
        _, t = _dual_sup(F, p)
        u = unit(t)
        return u / F(u)[..., None]

    return AsymNorm(lambda p: np.asarray(dual_norm(F, p)), grad, name=f"dual({F.name})")


def legendre_point(F: AsymNorm, v) -> np.ndarray:
    """Fiber derivative ``dF_v``: the covector ``p`` with ``p.v = F(v)``."""
    v = np.asarray(v, dtype=float)
    r = np.hypot(v[..., 0], v[..., 1])
    if np.any(r == 0):
        raise NormError("Legendre transform is undefined at the zero vector")
    if F.grad is not None:
        return np.asarray(F.grad(v), dtype=float)
    step = 1e-6 * r
    e1 = np.zeros(v.shape)
    e1[..., 0] = step
    e2 = np.zeros(v.shape)
    e2[..., 1] = step
    d1 = (F(v + e1) - F(v - e1)) / (2 * step)
    d2 = (F(v + e2) - F(v - e2)) / (2 * step)
    return np.stack([d1, d2], axis=-1)


def symmetrize_norm(F: AsymNorm) -> AsymNorm:
    """``v -> (F(v) + F(-v)) / 2``."""

    def func(v):
        return (F(v) + F(-v)) / 2

    grad = None
    if F.grad is not None:
        def grad(v):
            return (F.grad(v) - F.grad(-v)) / 2

    return AsymNorm(func, grad, name=f"sym({F.name})")


class FourierSupport:
    """Trigonometric interpolant of uniformly sampled values on the circle."""

    def __init__(self, samples, drop_below: float = 1e-15):
        h = np.asarray(samples, dtype=float)
        n = h.size
        c = np.fft.rfft(h) / n
        k = np.arange(c.size)
        weight = np.full(c.size, 2.0)
        weight[0] = 1.0
        if n % 2 == 0:
            weight[-1] = 1.0
        keep = np.abs(c) > drop_below * max(np.abs(c).max(), 1e-300)
        keep[0] = True
        self.n = n
        self.modes = k[keep]
        self.coef = (c * weight)[keep]

    def _eval(self, theta, order: int):
        theta = np.asarray(theta, dtype=float)
        coef = self.coef * (1j * self.modes) ** order
        out = np.full(theta.shape, coef[0].real)
        for k, c in zip(self.modes[1:], coef[1:]):
            out += c.real * np.cos(k * theta) - c.imag * np.sin(k * theta)
        return out

    def __call__(self, theta):
        return self._eval(theta, 0)

    def deriv(self, theta, order: int = 1):
        return self._eval(theta, order)


@dataclass(frozen=True)
class SupportBody:
    """Convex body in the plane given by samples of its support function at ``2 pi k / N``."""

    h: np.ndarray
    interp: FourierSupport = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.ndim != 1 or h.size < 64 or h.size % 2:
            raise NormError("support body needs an even number (>= 64) of samples")
        if not np.all(np.isfinite(h)) or np.min(h) <= 0:
            raise NormError("support function must be positive (origin interior)")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "interp", FourierSupport(h))

    @property
    def N(self) -> int:
        return self.h.size

    @property
    def theta(self) -> np.ndarray:
        return angle_grid(self.N)

    def curvature_radius(self) -> np.ndarray:
        """``h + h''`` by centered second differences."""
        return _curvature_radius(self.h)

    def boundary(self, theta) -> np.ndarray:
        """Boundary point with outward normal ``u(theta)``."""
        return self.interp(theta)[..., None] * unit(theta) + self.interp.deriv(theta)[..., None] * unit_perp(theta)


def spectral_derivative(h: np.ndarray) -> np.ndarray:
    n = h.size
    c = np.fft.rfft(h)
    k = np.arange(c.size)
    c = 1j * k * c
    if n % 2 == 0:
        c[-1] = 0.0
    return np.fft.irfft(c, n)


def support_body_of(F: AsymNorm, N: int = 512) -> SupportBody:
    """Sample ``F`` on the unit circle: the support function of its dual body."""
    if N < 64 or N % 2:
        raise NormError("N must be even and at least 64")
    report = check_norm_validity(F, max(N, 64))
    if not report.valid:
        raise NormError(f"invalid norm: {report.reason}")
    return SupportBody(F(unit(angle_grid(N))))


def body_area(K: SupportBody) -> float:
    """Area ``1/2 * integral (h^2 - h'^2)`` with a spectral derivative."""
    curv = K.curvature_radius()
    k = int(np.argmin(curv))
    if curv[k] < BODY_CONVEXITY_SLACK:
        raise ConvexityError(f"support function not convex near angle {K.theta[k]:.6f} (h + h'' = {curv[k]:.3g})")
    dh = spectral_derivative(K.h)
    return float(0.5 * np.sum(K.h**2 - dh**2) * TWO_PI / K.N)


def central_symmetrize_body(K: SupportBody) -> SupportBody:
    """Support function of ``(K + (-K)) / 2``."""
    if K.N % 2:
        raise NormError("central symmetrization needs an even grid")
    return SupportBody((K.h + np.roll(K.h, -K.N // 2)) / 2)


def radial_area(H: Callable, N: int = 512) -> float:
    """Area of ``{H <= 1}`` as ``1/2 * integral H(u)^-2``."""
    u = unit(angle_grid(N))
    return float(0.5 * np.sum(np.asarray(H(u)) ** -2.0) * TWO_PI / N)
