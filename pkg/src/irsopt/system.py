"""MISO link math: effective channel, MRT, SNR and the phase-only objective.

Solvers work on ``u = exp(-1j * theta)`` so that the effective channel is
``h = h_bu + C^H u`` with the coupling matrix ``C = Diag(conj(h_ru)) H_br``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, dbm_to_watt

TWO_PI = 2.0 * np.pi


class DegenerateChannelError(ValueError):
    pass


@dataclass(frozen=True)
class SystemParams:
    p_max: float
    sigma2_n: float

    def __post_init__(self):
        if self.p_max <= 0 or self.sigma2_n <= 0:
            raise ValueError("p_max and sigma2_n must be positive")

    @classmethod
    def from_dbm(cls, p_max_dbm: float = 5.0, sigma2_dbm: float = -80.0) -> "SystemParams":
        return cls(float(dbm_to_watt(p_max_dbm)), float(dbm_to_watt(sigma2_dbm)))


def canonical_phases(theta) -> np.ndarray:
    """Reduce phases to [0, 2 pi)."""
    t = np.mod(np.asarray(theta, dtype=float), TWO_PI)
    # np.mod can return exactly 2 pi for tiny negative inputs
    t[t >= TWO_PI] = 0.0
    return t


def phases_to_u(theta) -> np.ndarray:
    return np.exp(-1j * np.asarray(theta, dtype=float))


def u_to_phases(u) -> np.ndarray:
    return canonical_phases(-np.angle(u))


def coupling_matrix(ch: ChannelSet) -> np.ndarray:
    return ch.h_ru.conj()[:, None] * ch.h_br


def effective_channel(ch: ChannelSet, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (ch.m,):
        raise ValueError(f"expected {ch.m} phases, got shape {theta.shape}")
    # h^H = h_bu^H + h_ru^H Diag(e^{j theta}) H_br
    h_herm = ch.h_bu.conj() + (ch.h_ru.conj() * np.exp(1j * theta)) @ ch.h_br
    return h_herm.conj()


def mrt(h, p_max: float) -> np.ndarray:
    h = np.asarray(h)
    norm = np.linalg.norm(h)
    if norm == 0:
        raise DegenerateChannelError("MRT undefined for a zero channel")
    return np.sqrt(p_max) * h / norm


def snr(h, f, sigma2_n: float) -> float:
    """Received SNR ``|h^H f|^2 / sigma2_n`` (linear)."""
    if sigma2_n <= 0:
        raise ValueError("noise power must be positive")
    return float(abs(np.vdot(h, f)) ** 2 / sigma2_n)


def snr_db(h, f, sigma2_n: float) -> float:
    return lin_to_db(snr(h, f, sigma2_n))


def lin_to_db(x) -> float:
    return float(10.0 * np.log10(x))


def p1_objective(ch: ChannelSet, theta) -> float:
    return float(np.linalg.norm(effective_channel(ch, theta)) ** 2)


def mrt_snr_db(ch: ChannelSet, theta, sys: SystemParams) -> float:
    """SNR in dB of ``theta`` with the matching MRT beamformer."""
    return lin_to_db(sys.p_max * p1_objective(ch, theta) / sys.sigma2_n)


def objective_upper_bound(ch: ChannelSet) -> float:
    c = coupling_matrix(ch)
    return float((np.linalg.norm(ch.h_bu) + np.linalg.norm(c, axis=1).sum()) ** 2)
