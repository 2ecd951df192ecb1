"""Seeded batch experiments with CSV output.

Every trial derives its random streams from ``(seed, sweep point, trial,
purpose)`` so all methods within a trial see the same channel draw and reruns
are reproducible bit for bit (timing columns aside).
"""

from __future__ import annotations

import dataclasses
import gc
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .agent import greedy_phases
from .channel import ChannelSet, FadingParams, LinkGeometry, perturb_channels, rescale_mobility, sample_channels
from .env import EnvConfig, IRSEnv, encode_state
from .neural import actor_widths, init_mlp, load_checkpoint, policy_forward, MLPParams
from .optim import SolverConfig, admm_solve, coordinate_ascent, grid_oracle, random_phases, vamp_solve
from .system import SystemParams, TWO_PI, canonical_phases, effective_channel, mrt, mrt_snr_db, snr

EXPERIMENTS = ("snr-vs-m", "train", "robust-noise", "robust-mobility", "bench-inference")
METHODS = ("drl", "vamp", "admm", "bcd", "random", "oracle")
CSV_HEADER = "method,sweep_value,trial,snr_db,snr_loss_db,wall_time_ms"

DEFAULT_SWEEPS = {
    "snr-vs-m": [16, 32, 64],
    "train": [16],
    "robust-noise": [1.0, 0.99, 0.95, 0.9, 0.8, 0.5],
    "robust-mobility": [5.0, 10.0, 15.0, 20.0, 25.0],
    "bench-inference": [50, 100, 144, 196, 256],
}
DEFAULT_TRIALS = {"bench-inference": 1000, "robust-noise": 200, "robust-mobility": 200}
DEFAULT_METHODS = {
    "bench-inference": ["vamp", "admm", "drl"],
    "train": ["drl"],
}

# stream purposes
_CHANNEL, _PERTURB, _METHOD, _POLICY = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class MissingCheckpointError(FileNotFoundError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "snr-vs-m"
    sweep: list | None = None
    trials: int | None = None
    methods: list | None = None
    seed: int = 0
    checkpoint: str | None = None
    out: str = "results"
    n_bs: int = 10
    m: int = 16  # element count for the robustness experiments and training
    k1: float = 10.0
    k2: float = 10.0
    p_max_dbm: float = 5.0
    sigma2_dbm: float = -80.0
    geometry: dict = field(default_factory=dict)
    max_iters: int = 30
    horizon: int = 1000
    total_env_steps: int = 50_000
    eval_steps: int = 10
    requery_drl: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.sweep is None:
            self.sweep = list(DEFAULT_SWEEPS[self.experiment])
        if self.trials is None:
            self.trials = DEFAULT_TRIALS.get(self.experiment, 100)
        if self.methods is None:
            self.methods = list(DEFAULT_METHODS.get(self.experiment, ["vamp", "admm", "bcd", "random"]))
        if isinstance(self.methods, str):
            self.methods = [s.strip() for s in self.methods.split(",") if s.strip()]
        self.sweep = list(self.sweep)
        if not self.sweep:
            raise ConfigError("sweep must not be empty")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        try:
            LinkGeometry(**self.geometry)
        except TypeError as exc:
            raise ConfigError(f"bad geometry keys: {exc}") from None
        if self.experiment == "robust-noise" and any(not 0 <= e <= 1 for e in self.sweep):
            raise ConfigError("noise sweep values must lie in [0, 1]")

    @classmethod
    def from_mapping(cls, data: dict, **overrides) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        merged = {**data, **{k: v for k, v in overrides.items() if v is not None}}
        unknown = set(merged) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def geom(self) -> LinkGeometry:
        return LinkGeometry(**self.geometry)

    @property
    def sys(self) -> SystemParams:
        return SystemParams.from_dbm(self.p_max_dbm, self.sigma2_dbm)

    def fading(self, m: int | None = None) -> FadingParams:
        return FadingParams.for_elements(self.n_bs, self.m if m is None else int(m), self.k1, self.k2)

    def env_config(self, m: int | None = None) -> EnvConfig:
        return EnvConfig(self.fading(m), self.geom, self.sys, self.horizon, self.seed)


def load_config_file(path) -> dict:
    """Read a JSON or TOML key-value file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            try:
                import tomllib
            except ImportError:  # Python < 3.11
                import tomli as tomllib
            try:
                data = tomllib.loads(text)
            except tomllib.TOMLDecodeError:
                data = json.loads(text)
    except (json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a key-value table")
    return data


# ---------------------------------------------------------------------------
# results

@dataclass(frozen=True)
class Row:
    method: str
    sweep_value: float
    trial: int
    snr_db: float
    snr_loss_db: float | None
    wall_time_ms: float


def _fmt_sweep(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 2**53 else repr(x)


def _fmt_float(x) -> str:
    return "" if x is None else repr(float(x))


@dataclass
class ResultTable:
    rows: list[Row] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(CSV_HEADER + "\n")
            for r in self.rows:
                fh.write(f"{r.method},{_fmt_sweep(r.sweep_value)},{int(r.trial)},{_fmt_float(r.snr_db)},"
                         f"{_fmt_float(r.snr_loss_db)},{_fmt_float(r.wall_time_ms)}\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "ResultTable":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[0] != CSV_HEADER:
            raise ValueError("unexpected CSV header")
        rows = []
        for line in lines[1:]:
            m, sv, t, s, loss, ms = line.split(",")
            rows.append(Row(m, float(sv), int(t), float(s), float(loss) if loss else None, float(ms)))
        return cls(rows)

    def values(self, method: str, sweep_value, column: str = "snr_db") -> np.ndarray:
        return np.array([getattr(r, column) for r in self.rows
                         if r.method == method and r.sweep_value == sweep_value])

    def mean(self, method: str, sweep_value, column: str = "snr_db") -> float:
        v = self.values(method, sweep_value, column)
        return float(v.mean()) if v.size else math.nan


def write_manifest(path, cfg: ExperimentConfig, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"version = {__version__}",
        f"experiment = {cfg.experiment}",
        f"seed = {cfg.seed}",
        f"config_hash = {cfg.config_hash()}",
        "drl_quality_protocol = best of a greedy rollout of eval_steps unperturbed actor steps",
        "drl_timing_protocol = one actor forward pass",
    ]
    for k, v in {**cfg.as_dict(), **(extra or {})}.items():
        lines.append(f"{k} = {json.dumps(v, default=str)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# method dispatch

def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def load_actor(path_template: str | None, m: int, n_bs: int | None = None) -> MLPParams:
    if not path_template:
        raise MissingCheckpointError("method 'drl' needs a checkpoint")
    path = Path(str(path_template).replace("{m}", str(m)))
    if not path.is_file():
        raise MissingCheckpointError(f"checkpoint not found: {path}")
    nets, _, meta = load_checkpoint(path)
    actor = nets["actor"]
    if actor.widths[-1] != m:
        raise ConfigError(f"checkpoint {path} is for M={actor.widths[-1]}, experiment needs M={m}")
    if n_bs is not None and meta.get("n_bs") not in (None, n_bs):
        raise ConfigError(f"checkpoint {path} is for N={meta.get('n_bs')}, experiment needs N={n_bs}")
    return actor


@dataclass
class _Context:
    cfg: ExperimentConfig
    solver: SolverConfig
    sys: SystemParams
    actor: MLPParams | None = None


def _solve(method: str, ch: ChannelSet, ctx: _Context, rng: np.random.Generator, env_m: int):
    """Return ``(phases, seconds)`` for ``method`` on nominal channels ``ch``."""
    t0 = time.perf_counter()
    if method == "vamp":
        theta = vamp_solve(ch, ctx.solver).final_phases
    elif method == "admm":
        theta = admm_solve(ch, ctx.solver).final_phases
    elif method == "bcd":
        theta = coordinate_ascent(ch, ctx.solver).final_phases
    elif method == "random":
        theta = random_phases(rng, ch.m)
    elif method == "oracle":
        if ch.m > 3:
            raise ConfigError("method 'oracle' enumerates a grid and supports M <= 3 only")
        theta = grid_oracle(ch, 256 if ch.m <= 2 else 64)
    elif method == "drl":
        theta = _drl_phases(ch, ctx, rng, env_m)
    else:  # pragma: no cover - validated in ExperimentConfig
        raise ConfigError(method)
    return canonical_phases(theta), time.perf_counter() - t0


def _drl_phases(ch, ctx, rng, m, theta0=None):
    env = IRSEnv(ctx.cfg.env_config(m), rng=rng)
    state = env.reset(channels=ch, theta0=theta0)
    theta, _ = greedy_phases(ctx.actor, env, state, ctx.cfg.eval_steps)
    return theta


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("IRSOPT_THREADS", "1")))
    except ValueError:
        return 1


def _map_trials(fn, trials: int):
    n = _threads()
    if n == 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, range(trials)))


def _context(cfg: ExperimentConfig, m: int) -> _Context:
    ctx = _Context(cfg, SolverConfig(max_iters=cfg.max_iters), cfg.sys)
    if "drl" in cfg.methods:
        ctx.actor = load_actor(cfg.checkpoint, m, cfg.n_bs)
    return ctx


def _meta(cfg: ExperimentConfig) -> dict:
    return {"seed": cfg.seed, "config_hash": cfg.config_hash(), "version": __version__}


# ---------------------------------------------------------------------------
# experiments

def run_snr_vs_m(cfg: ExperimentConfig) -> ResultTable:
    table = ResultTable(meta=_meta(cfg))
    for p, m in enumerate(cfg.sweep):
        m = int(m)
        ctx = _context(cfg, m)
        fading = cfg.fading(m)

        def trial(t, p=p, m=m, ctx=ctx, fading=fading):
            ch = sample_channels(substream(cfg.seed, p, t, _CHANNEL), fading, cfg.geom)
            rows = []
            for k, method in enumerate(cfg.methods):
                theta, dt = _solve(method, ch, ctx, substream(cfg.seed, p, t, _METHOD, k), m)
                rows.append(Row(method, m, t, mrt_snr_db(ch, theta, ctx.sys), None, 1e3 * dt))
            return rows

        for rows in _map_trials(trial, cfg.trials):
            table.rows.extend(rows)
    return _ordered(table, cfg)


def _ordered(table: ResultTable, cfg: ExperimentConfig) -> ResultTable:
    order = {m: i for i, m in enumerate(cfg.methods)}
    sweep_pos = {float(v): i for i, v in enumerate(cfg.sweep)}
    table.rows.sort(key=lambda r: (order[r.method], sweep_pos[float(r.sweep_value)], r.trial))
    return table


def _fingerprint(theta, f) -> str:
    return hashlib.sha256(np.asarray(theta).tobytes() + np.asarray(f).tobytes()).hexdigest()


def _run_robust(cfg: ExperimentConfig, transform) -> ResultTable:
    """Freeze phases and beamformer on nominal CSI, re-evaluate on ``transform(ch, value, t)``."""
    table = ResultTable(meta=_meta(cfg))
    m = cfg.m
    ctx = _context(cfg, m)
    fading = cfg.fading(m)
    sys = ctx.sys

    def trial(t):
        ch = sample_channels(substream(cfg.seed, t, _CHANNEL), fading, cfg.geom)
        frozen = []
        for k, method in enumerate(cfg.methods):
            rng = substream(cfg.seed, t, _METHOD, k)
            theta0 = random_phases(substream(cfg.seed, t, _POLICY, k), m) if method == "drl" else None
            if method == "drl":
                t0 = time.perf_counter()
                theta = canonical_phases(_drl_phases(ch, ctx, rng, m, theta0))
                dt = time.perf_counter() - t0
            else:
                theta, dt = _solve(method, ch, ctx, rng, m)
            h = effective_channel(ch, theta)
            f = mrt(h, sys.p_max)
            frozen.append((method, theta, f, 10 * np.log10(snr(h, f, sys.sigma2_n)), dt, theta0))

        rows = []
        for value in cfg.sweep:
            ch2 = transform(ch, value, t)
            for method, theta, f, nominal_db, dt, theta0 in frozen:
                stamp = _fingerprint(theta, f)
                if method == "drl" and cfg.requery_drl:
                    theta_q = canonical_phases(_drl_phases(ch2, ctx, substream(cfg.seed, t, _METHOD, 99), m, theta0))
                    f_q = mrt(effective_channel(ch, theta_q), sys.p_max)
                    got = 10 * np.log10(snr(effective_channel(ch2, theta_q), f_q, sys.sigma2_n))
                else:
                    got = 10 * np.log10(snr(effective_channel(ch2, theta), f, sys.sigma2_n))
                if _fingerprint(theta, f) != stamp:  # pragma: no cover - defensive
                    raise RuntimeError("frozen solution was modified during re-evaluation")
                rows.append(Row(method, value, t, got, nominal_db - got, 1e3 * dt))
        return rows

    for rows in _map_trials(trial, cfg.trials):
        table.rows.extend(rows)
    return _ordered(table, cfg)


def run_robust_noise(cfg: ExperimentConfig) -> ResultTable:
    # one innovation draw per trial, shared by every noise level
    def transform(ch, eps, t):
        return perturb_channels(ch, float(eps), substream(cfg.seed, t, _PERTURB))

    return _run_robust(cfg, transform)


def run_robust_mobility(cfg: ExperimentConfig) -> ResultTable:
    geom = cfg.geom

    def transform(ch, delta_d, t):
        return rescale_mobility(ch, geom, float(delta_d))

    return _run_robust(cfg, transform)


def bench_inference(cfg: ExperimentConfig) -> ResultTable:
    """Mean per-call inference time; channel generation is not timed.

    DRL is timed as a single actor forward pass. Without a checkpoint an
    untrained actor of the right shape is timed (its SNR column is then
    meaningless, the timing is not). Sweep points are interleaved inside
    each trial so slow drift in machine load hits every M alike, and the
    garbage collector is paused while timing.
    """
    table = ResultTable(meta={**_meta(cfg), "drl_untrained": not cfg.checkpoint})
    solver = SolverConfig(max_iters=cfg.max_iters, tol=0.0)
    sys = cfg.sys
    points = []
    for p, m in enumerate(cfg.sweep):
        m = int(m)
        actor = None
        if "drl" in cfg.methods:
            if cfg.checkpoint:
                actor = load_actor(cfg.checkpoint, m, cfg.n_bs)
            else:
                actor = init_mlp(substream(cfg.seed, p, _POLICY), actor_widths(m), "scaled-phase")
        points.append((p, m, cfg.fading(m), _Context(cfg, solver, sys, actor)))

    def run(method, ch, ctx, rng, m):
        if method == "drl":
            theta0 = random_phases(rng, m)
            feats = encode_state(mrt_snr_db(ch, theta0, sys), theta0)
            t0 = time.perf_counter()
            theta = np.clip(policy_forward(ctx.actor, feats), 0.0, TWO_PI)
            return canonical_phases(theta), time.perf_counter() - t0
        return _solve(method, ch, ctx, rng, m)

    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for p, m, fading, ctx in points:
            warm = sample_channels(substream(cfg.seed, p, 10**6, _CHANNEL), fading, cfg.geom)
            for k, method in enumerate(cfg.methods):
                for _ in range(3):
                    run(method, warm, ctx, substream(cfg.seed, p, 10**6, _METHOD, k), m)
        for t in range(cfg.trials):
            for p, m, fading, ctx in points:
                ch = sample_channels(substream(cfg.seed, p, t, _CHANNEL), fading, cfg.geom)
                for k, method in enumerate(cfg.methods):
                    theta, dt = run(method, ch, ctx, substream(cfg.seed, p, t, _METHOD, k), m)
                    table.rows.append(Row(method, m, t, mrt_snr_db(ch, theta, sys), None, 1e3 * dt))
            if gc_was_enabled and t % 50 == 49:
                gc.collect()
    finally:
        if gc_was_enabled:
            gc.enable()
    return _ordered(table, cfg)


RUNNERS = {
    "snr-vs-m": run_snr_vs_m,
    "robust-noise": run_robust_noise,
    "robust-mobility": run_robust_mobility,
    "bench-inference": bench_inference,
}


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    try:
        runner = RUNNERS[cfg.experiment]
    except KeyError:
        raise ConfigError(f"experiment {cfg.experiment!r} is not a batch evaluation") from None
    return runner(cfg)
