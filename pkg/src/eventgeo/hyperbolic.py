"""Exponential and logarithmic maps at the origin of the Poincaré ball.

Both maps are radial, f(v) = g(|v|) v, so they share one backward rule:
grad_v = g(r) u + (g'(r) / r) (u . v) v for an upstream gradient u.
All functions act on a single vector or row-wise on a matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ARTANH_MAX = 1.0 - 1e-12
_TANH_MAX = 1.0 - np.finfo(np.float64).eps
_SERIES_CUTOFF = 1e-3


@dataclass(frozen=True)
class HyperbolicConfig:
    curvature_c: float = 1.0
    max_tangent_norm: float = 10.0
    ball_margin: float = 1e-5

    def __post_init__(self):
        if not self.curvature_c > 0:
            raise ValueError("curvature_c must be positive")
        if not self.max_tangent_norm > 0:
            raise ValueError("max_tangent_norm must be positive")
        if not 0 < self.ball_margin < 1:
            raise ValueError("ball_margin must lie in (0, 1)")

    @property
    def sqrt_c(self) -> float:
        return float(np.sqrt(self.curvature_c))

    @property
    def ball_radius(self) -> float:
        return 1.0 / self.sqrt_c


def _as_rows(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input to hyperbolic map")
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _exp_coeffs(r: np.ndarray, cfg: HyperbolicConfig) -> tuple[np.ndarray, np.ndarray]:
    """g(r) and g'(r)/r for the clipped exponential map."""
    s, M = cfg.sqrt_c, cfg.max_tangent_norm
    g = np.ones_like(r)
    dg = np.zeros_like(r)
    clipped = r > M
    small = (s * r < _SERIES_CUTOFF) & ~clipped
    mid = ~clipped & ~small

    sr = s * r[small]
    g[small] = 1.0 - sr**2 / 3.0 + 2.0 * sr**4 / 15.0
    dg[small] = s**2 * (-2.0 / 3.0 + 8.0 * sr**2 / 15.0)

    rm = r[mid]
    sr = s * rm
    t = np.minimum(np.tanh(sr), _TANH_MAX)
    g[mid] = t / sr
    dg[mid] = (sr * (1.0 - t**2) - t) / (s * rm**3)

    rc = r[clipped]
    tM = min(np.tanh(s * M), _TANH_MAX)
    g[clipped] = tM / (s * rc)
    dg[clipped] = -g[clipped] / rc**2
    return g, dg


def _log_coeffs(r: np.ndarray, cfg: HyperbolicConfig) -> tuple[np.ndarray, np.ndarray]:
    """g(r) and g'(r)/r for the logarithmic map with inward projection."""
    s = cfg.sqrt_c
    R = (1.0 - cfg.ball_margin) / s
    g = np.ones_like(r)
    dg = np.zeros_like(r)
    projected = r > R
    small = (s * r < _SERIES_CUTOFF) & ~projected
    mid = ~projected & ~small

    sr = s * r[small]
    g[small] = 1.0 + sr**2 / 3.0 + sr**4 / 5.0
    dg[small] = s**2 * (2.0 / 3.0 + 4.0 * sr**2 / 5.0)

    rm = r[mid]
    sr = np.minimum(s * rm, _ARTANH_MAX)
    a = np.arctanh(sr)
    g[mid] = a / sr
    dg[mid] = (sr / (1.0 - sr**2) - a) / (s * rm**3)

    rp = r[projected]
    aR = np.arctanh(min(s * R, _ARTANH_MAX))
    g[projected] = aR / (s * rp)
    dg[projected] = -g[projected] / rp**2
    return g, dg


def exp_map(alpha: np.ndarray, cfg: HyperbolicConfig = HyperbolicConfig()) -> np.ndarray:
    """Map tangent vectors at the origin onto the ball of radius 1/sqrt(c).

    Inputs longer than ``cfg.max_tangent_norm`` are clipped first.
    """
    rows, squeeze = _as_rows(alpha)
    g, _ = _exp_coeffs(np.linalg.norm(rows, axis=1), cfg)
    out = rows * g[:, None]
    return out[0] if squeeze else out


def log_map(beta: np.ndarray, cfg: HyperbolicConfig = HyperbolicConfig()) -> np.ndarray:
    """Inverse of :func:`exp_map`; points too close to the boundary are pulled in."""
    rows, squeeze = _as_rows(beta)
    g, _ = _log_coeffs(np.linalg.norm(rows, axis=1), cfg)
    out = rows * g[:, None]
    return out[0] if squeeze else out


def _radial_vjp(upstream: np.ndarray, x: np.ndarray, g: np.ndarray, dg: np.ndarray) -> np.ndarray:
    dots = np.einsum("ij,ij->i", upstream, x)
    return upstream * g[:, None] + (dg * dots)[:, None] * x


def exp_map_vjp(upstream: np.ndarray, alpha: np.ndarray, cfg: HyperbolicConfig) -> np.ndarray:
    g, dg = _exp_coeffs(np.linalg.norm(alpha, axis=1), cfg)
    return _radial_vjp(upstream, alpha, g, dg)


def log_map_vjp(upstream: np.ndarray, beta: np.ndarray, cfg: HyperbolicConfig) -> np.ndarray:
    g, dg = _log_coeffs(np.linalg.norm(beta, axis=1), cfg)
    return _radial_vjp(upstream, beta, g, dg)
