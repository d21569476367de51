"""Gaussian helpers: bivariate normal CDF and truncated-normal partial moments.

Both are vectorised over numpy broadcasting and used by the analytic transition
kernel and the detection-path moment recursion.
"""

import numpy as np
from scipy.special import ndtr, owens_t

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.exp(-0.5 * z * z) / _SQRT_2PI
    return np.where(np.isfinite(z), out, 0.0)


def bvn_cdf(h, k, rho):
    """P(Z1 <= h, Z2 <= k) for standard bivariate normal with correlation rho.

    Uses the Owen's T representation, which is exact and broadcasts cheaply.
    Infinite limits are handled explicitly. |rho| must be < 1.
    """
    h, k, rho = np.broadcast_arrays(
        np.asarray(h, dtype=float), np.asarray(k, dtype=float), np.asarray(rho, dtype=float)
    )
    out = np.empty(h.shape, dtype=float)

    h_lo = np.isneginf(h)
    k_lo = np.isneginf(k)
    h_hi = np.isposinf(h)
    k_hi = np.isposinf(k)
    zero = h_lo | k_lo
    out[zero] = 0.0
    only_k = h_hi & ~zero
    out[only_k] = ndtr(k[only_k])
    only_h = k_hi & ~zero & ~h_hi
    out[only_h] = ndtr(h[only_h])

    fin = ~(zero | only_k | only_h)
    if np.any(fin):
        hf, kf, rf = h[fin], k[fin], rho[fin]
        s = np.sqrt((1.0 - rf) * (1.0 + rf))
        # Owen's T arguments; the h == 0 / k == 0 limits go to +-inf
        with np.errstate(divide="ignore", invalid="ignore"):
            ah = np.where(hf != 0.0, (kf - rf * hf) / (hf * s), np.copysign(np.inf, kf - rf * hf))
            ak = np.where(kf != 0.0, (hf - rf * kf) / (kf * s), np.copysign(np.inf, hf - rf * kf))
        both0 = (hf == 0.0) & (kf == 0.0)
        a0 = np.sqrt((1.0 - rf) / (1.0 + rf))
        ah = np.where(both0, a0, ah)
        ak = np.where(both0, a0, ak)
        val = 0.5 * (ndtr(hf) + ndtr(kf)) - owens_t(hf, ah) - owens_t(kf, ak)
        beta = np.where((hf * kf > 0) | ((hf * kf == 0) & (hf + kf >= 0)), 0.0, 0.5)
        out[fin] = np.clip(val - beta, 0.0, 1.0)
    return out


def bvn_rect(r_lo, r_hi, x_lo, x_hi, mean_r, mean_x, sd_r, sd_x, rho):
    """P(r_lo <= R <= r_hi, x_lo <= X <= x_hi) for a bivariate Gaussian (R, X)."""
    a1 = (np.asarray(r_lo) - mean_r) / sd_r
    b1 = (np.asarray(r_hi) - mean_r) / sd_r
    a2 = (np.asarray(x_lo) - mean_x) / sd_x
    b2 = (np.asarray(x_hi) - mean_x) / sd_x
    p = bvn_cdf(b1, b2, rho) - bvn_cdf(a1, b2, rho) - bvn_cdf(b1, a2, rho) + bvn_cdf(a1, a2, rho)
    return np.clip(p, 0.0, 1.0)


def truncated_partial_moments(lo, hi):
    """Unnormalised moments of a standard normal on [lo, hi].

    Returns (m0, m1, m2) = (P, E[Z 1], E[Z^2 1]) over the interval. Infinite
    bounds are allowed.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    phi_lo, phi_hi = norm_pdf(lo), norm_pdf(hi)
    # mass via the tail that keeps precision
    m0 = np.where(lo > 0, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
    m0 = np.maximum(m0, 0.0)
    m1 = phi_lo - phi_hi
    with np.errstate(invalid="ignore"):
        lphi = np.where(np.isfinite(lo), lo * phi_lo, 0.0)
        hphi = np.where(np.isfinite(hi), hi * phi_hi, 0.0)
    m2 = m0 + lphi - hphi
    return m0, m1, np.maximum(m2, 0.0)


def band_moments(mean, sd, half_width, inside):
    """Partial moments of Y - mean for Y ~ N(mean, sd^2) on the detector band.

    ``inside=True`` integrates over [-half_width, half_width] (no alarm), else
    over its complement. Returns (mass, E[(Y-mean) 1], E[(Y-mean)^2 1]).
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    lo = (-half_width - mean) / sd
    hi = (half_width - mean) / sd
    if inside:
        m0, m1, m2 = truncated_partial_moments(lo, hi)
    else:
        # two tails summed separately; 1 - inside loses precision near 1
        l0, l1, l2 = truncated_partial_moments(-np.inf, lo)
        u0, u1, u2 = truncated_partial_moments(hi, np.inf)
        m0, m1, m2 = l0 + u0, l1 + u1, l2 + u2
    return m0, sd * m1, sd * sd * m2
