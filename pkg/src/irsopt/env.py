"""Episodic phase-selection environment.

The agent sees only ``State.features``: the previous SNR (dB / 40) and the
previous phases (theta / pi - 1). Channel coefficients stay inside the
environment and are reachable for baselines through :func:`oracle_handles`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelSet, FadingParams, LinkGeometry, sample_channels
from .optim import random_phases
from .system import SystemParams, canonical_phases, effective_channel, mrt, snr

SNR_SCALE_DB = 40.0


@dataclass(frozen=True)
class EnvConfig:
    fading: FadingParams = field(default_factory=FadingParams)
    geom: LinkGeometry = field(default_factory=LinkGeometry)
    sys: SystemParams = field(default_factory=SystemParams.from_dbm)
    horizon: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass(frozen=True)
class State:
    snr_prev: float  # dB
    action_prev: np.ndarray

    @property
    def features(self) -> np.ndarray:
        return encode_state(self.snr_prev, self.action_prev)


def encode_state(snr_db: float, theta) -> np.ndarray:
    return np.concatenate(([snr_db / SNR_SCALE_DB], np.asarray(theta) / np.pi - 1.0))


def decode_phases(features) -> np.ndarray:
    return (np.asarray(features)[1:] + 1.0) * np.pi


class EpisodeError(RuntimeError):
    pass


class IRSEnv:
    def __init__(self, cfg: EnvConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self._channels: ChannelSet | None = None
        self._t = 0
        self._active = False

    @property
    def m(self) -> int:
        return self.cfg.fading.m

    @property
    def feature_dim(self) -> int:
        return self.m + 1

    @property
    def t(self) -> int:
        return self._t

    def reward_db(self, theta) -> float:
        h = effective_channel(self._channels, theta)
        return 10.0 * np.log10(snr(h, mrt(h, self.cfg.sys.p_max), self.cfg.sys.sigma2_n))

    def reset(self, channels: ChannelSet | None = None, theta0=None) -> State:
        """Start an episode; harness code may inject ``channels``/``theta0``."""
        if channels is None:
            channels = sample_channels(self.rng, self.cfg.fading, self.cfg.geom)
        elif channels.m != self.m or channels.n != self.cfg.fading.n_bs:
            raise ValueError("injected channels do not match the environment dimensions")
        self._channels = _frozen(channels)
        theta = random_phases(self.rng, self.m) if theta0 is None else canonical_phases(theta0)
        self._t = 0
        self._active = True
        return State(self.reward_db(theta), theta)

    def step(self, action) -> tuple[State, float, bool]:
        if not self._active:
            raise EpisodeError("call reset() before step()")
        action = np.asarray(action, dtype=float)
        if action.shape != (self.m,):
            raise ValueError(f"action must have shape ({self.m},), got {action.shape}")
        theta = canonical_phases(action)
        r = self.reward_db(theta)
        self._t += 1
        truncated = self._t >= self.cfg.horizon
        if truncated:
            self._active = False
        return State(r, theta), r, truncated


def _frozen(ch: ChannelSet) -> ChannelSet:
    arrs = {}
    for name in ("h_bu", "h_br", "h_ru"):
        a = np.array(getattr(ch, name), copy=True)
        a.setflags(write=False)
        arrs[name] = a
    return replace(ch, **arrs)


def oracle_handles(env: IRSEnv) -> ChannelSet:
    """Read-only CSI of the running episode, for baselines and the harness."""
    if env._channels is None:
        raise EpisodeError("no episode has been started")
    return env._channels
