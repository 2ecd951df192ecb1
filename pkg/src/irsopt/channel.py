"""Fading channels for the BS -> IRS -> user link budget.

Conventions: ``h_bu`` has shape (N,), ``h_br`` shape (M, N), ``h_ru`` shape
(M,). CN(0, 1) draws have real and imaginary parts i.i.d. N(0, 1/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class LinkGeometry:
    d_bu: float = 48.0
    d_br: float = 51.0
    d_ru: float = 1.5
    alpha_bu: float = 2.0
    alpha_br: float = 2.0
    alpha_ru: float = 2.8
    d0: float = 1.0
    g0_db: float = -30.0
    bs_aod: float = 0.0
    irs_aoa_az: float = 0.0
    irs_aoa_el: float = 0.0
    irs_aod_az: float = 0.0
    irs_aod_el: float = 0.0

    def __post_init__(self):
        if min(self.d_bu, self.d_br, self.d_ru) <= 0 or self.d0 <= 0:
            raise ValueError("distances must be positive")
        if min(self.alpha_bu, self.alpha_br, self.alpha_ru) < 0:
            raise ValueError("path-loss exponents must be non-negative")


@dataclass(frozen=True)
class FadingParams:
    n_bs: int = 10
    m_x: int = 10
    m_y: int = 5
    k1: float = 10.0
    k2: float = 10.0

    def __post_init__(self):
        if self.n_bs < 1 or self.m_x < 1 or self.m_y < 1:
            raise ValueError("antenna and element counts must be >= 1")
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("Ricean factors must be non-negative")

    @property
    def m(self) -> int:
        return self.m_x * self.m_y

    @classmethod
    def for_elements(cls, n_bs: int, m: int, k1: float = 10.0, k2: float = 10.0) -> "FadingParams":
        """Factor ``m`` into the most square ``m_x * m_y`` grid (m_x >= m_y)."""
        m_y = int(math.isqrt(m))
        while m % m_y:
            m_y -= 1
        return cls(n_bs=n_bs, m_x=m // m_y, m_y=m_y, k1=k1, k2=k2)


@dataclass(frozen=True)
class ChannelSet:
    h_bu: np.ndarray
    h_br: np.ndarray
    h_ru: np.ndarray
    # Deterministic LOS parts and NLOS scales, kept so that perturbation can
    # leave the LOS component untouched. ``None`` means pure Rayleigh.
    los_br: np.ndarray | None = field(default=None, repr=False, compare=False)
    los_ru: np.ndarray | None = field(default=None, repr=False, compare=False)
    scale_bu: float = field(default=1.0, repr=False, compare=False)
    scale_br: float = field(default=1.0, repr=False, compare=False)
    scale_ru: float = field(default=1.0, repr=False, compare=False)

    def __post_init__(self):
        m, n = self.h_br.shape
        if self.h_bu.shape != (n,) or self.h_ru.shape != (m,):
            raise ValueError(
                f"inconsistent shapes: h_bu {self.h_bu.shape}, h_br {self.h_br.shape}, h_ru {self.h_ru.shape}"
            )

    @property
    def n(self) -> int:
        return self.h_bu.shape[0]

    @property
    def m(self) -> int:
        return self.h_ru.shape[0]


def db_to_lin(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def dbm_to_watt(x_dbm):
    return 10.0 ** ((np.asarray(x_dbm, dtype=float) - 30.0) / 10.0)


def path_gain(d, alpha, g0_db=-30.0, d0=1.0):
    """Linear power gain of ``G0 - 10 alpha log10(d / d0)`` dB."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0) or d0 <= 0:
        raise ValueError("path_gain needs positive distances")
    g = 10.0 ** ((g0_db - 10.0 * alpha * np.log10(d / d0)) / 10.0)
    return float(g) if g.ndim == 0 else g


def steering_bs(n: int, aod: float) -> np.ndarray:
    """Half-wavelength ULA response, entry k = exp(j pi k sin(aod))."""
    k = np.arange(n)
    return np.exp(1j * np.pi * k * np.sin(aod))


def steering_irs(m_x: int, m_y: int, az: float, el: float) -> np.ndarray:
    """Half-wavelength UPA response flattened row-major over (p, q)."""
    p = np.arange(m_x)[:, None]
    q = np.arange(m_y)[None, :]
    phase = np.pi * (p * np.sin(az) * np.cos(el) + q * np.sin(el))
    return np.exp(1j * phase).ravel()


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """i.i.d. CN(0, 1) samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)


def _ricean_weights(k: float) -> tuple[float, float]:
    if math.isinf(k):
        return 1.0, 0.0
    return math.sqrt(k / (k + 1.0)), math.sqrt(1.0 / (k + 1.0))


def sample_channels(rng: np.random.Generator, fading: FadingParams, geom: LinkGeometry) -> ChannelSet:
    n, m = fading.n_bs, fading.m
    g_bu = path_gain(geom.d_bu, geom.alpha_bu, geom.g0_db, geom.d0)
    g_br = path_gain(geom.d_br, geom.alpha_br, geom.g0_db, geom.d0)
    g_ru = path_gain(geom.d_ru, geom.alpha_ru, geom.g0_db, geom.d0)

    w_los1, w_nlos1 = _ricean_weights(fading.k1)
    w_los2, w_nlos2 = _ricean_weights(fading.k2)

    a_irs_in = steering_irs(fading.m_x, fading.m_y, geom.irs_aoa_az, geom.irs_aoa_el)
    a_bs = steering_bs(n, geom.bs_aod)
    a_irs_out = steering_irs(fading.m_x, fading.m_y, geom.irs_aod_az, geom.irs_aod_el)

    los_br = math.sqrt(g_br) * w_los1 * np.outer(a_irs_in, a_bs.conj())
    los_ru = math.sqrt(g_ru) * w_los2 * a_irs_out
    s_bu = math.sqrt(g_bu)
    s_br = math.sqrt(g_br) * w_nlos1
    s_ru = math.sqrt(g_ru) * w_nlos2

    # Draw order is part of the reproducibility contract.
    h_bu = s_bu * complex_normal(rng, n)
    h_br = los_br + s_br * complex_normal(rng, (m, n))
    h_ru = los_ru + s_ru * complex_normal(rng, m)
    return ChannelSet(h_bu, h_br, h_ru, los_br, los_ru, s_bu, s_br, s_ru)


def _innovate(x, los, scale, eps, rng):
    base = np.zeros_like(x) if los is None else los
    nlos = x - base
    w = complex_normal(rng, x.shape)
    return base + math.sqrt(eps) * nlos + math.sqrt(1.0 - eps) * scale * w


def perturb_channels(ch: ChannelSet, eps: float, rng: np.random.Generator) -> ChannelSet:
    """Gauss-Markov CSI error with correlation ``eps`` on the NLOS parts.

    ``eps = 1`` returns the input unchanged; ``eps = 0`` is a fresh NLOS draw.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    if eps == 1.0:
        return ch
    return replace(
        ch,
        h_bu=_innovate(ch.h_bu, None, ch.scale_bu, eps, rng),
        h_br=_innovate(ch.h_br, ch.los_br, ch.scale_br, eps, rng),
        h_ru=_innovate(ch.h_ru, ch.los_ru, ch.scale_ru, eps, rng),
    )


def rescale_mobility(ch: ChannelSet, geom: LinkGeometry, delta_d: float) -> ChannelSet:
    """Move the user ``delta_d`` metres further from the BS (direct link only)."""
    d_new = geom.d_bu + delta_d
    if d_new <= 0:
        raise ValueError("user distance must stay positive")
    if delta_d == 0:
        return ch
    factor = math.sqrt(
        path_gain(d_new, geom.alpha_bu, geom.g0_db, geom.d0)
        / path_gain(geom.d_bu, geom.alpha_bu, geom.g0_db, geom.d0)
    )
    return replace(ch, h_bu=ch.h_bu * factor, scale_bu=ch.scale_bu * factor)
