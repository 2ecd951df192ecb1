"""Classical solvers for the phase-only SNR problem.

All solvers maximise ``||h_bu + C^H u||^2`` over unit-modulus ``u`` and
report phases ``theta = -angle(u)`` in [0, 2 pi).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .channel import ChannelSet
from .system import TWO_PI, canonical_phases, coupling_matrix, u_to_phases


class GridTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 30
    rho_admm: float | None = None  # None -> 4 ||C||_F^2 / M
    damping: float = 0.7
    tol: float = 0.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rho_admm is not None and self.rho_admm <= 0:
            raise ValueError("rho_admm must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class SolverTrace:
    objective_per_iter: list[float]
    wall_time: float
    final_phases: np.ndarray
    fallback: bool = False
    # per-element objectives of coordinate ascent, empty for other solvers
    update_objectives: list[float] = field(default_factory=list, repr=False)

    @property
    def objective(self) -> float:
        return max(self.objective_per_iter)


def _objective(h_bu, c, u) -> float:
    h = h_bu + c.conj().T @ u
    return float(np.vdot(h, h).real)


def _project(x, prev):
    """Unit-modulus projection; zero entries keep their previous value."""
    mag = np.abs(x)
    out = prev.copy()
    nz = mag > 0
    out[nz] = x[nz] / mag[nz]
    return out


def _converged(trace, tol) -> bool:
    if tol <= 0 or len(trace) < 2:
        return False
    prev, cur = trace[-2], trace[-1]
    return abs(cur - prev) <= tol * max(abs(prev), np.finfo(float).tiny)


def random_phases(rng: np.random.Generator, m: int) -> np.ndarray:
    if m < 1:
        raise ValueError("need at least one element")
    return canonical_phases(rng.uniform(0.0, TWO_PI, m))


def closed_form_m1(ch: ChannelSet) -> np.ndarray:
    """Global optimum for a single IRS element."""
    if ch.m != 1:
        raise ValueError(f"closed form needs M = 1, got M = {ch.m}")
    c = coupling_matrix(ch)
    q = complex(c[0] @ ch.h_bu)
    if q == 0:
        return np.zeros(1)
    return canonical_phases(np.array([-np.angle(q)]))


def grid_oracle(ch: ChannelSet, levels: int, max_m: int = 3) -> np.ndarray:
    """Brute force over the uniform grid ``{2 pi k / levels}^M``."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    if ch.m > max_m:
        raise GridTooLargeError(f"grid of {levels}^{ch.m} points refused (M > {max_m})")
    grid = TWO_PI * np.arange(levels) / levels
    # u = exp(-j theta)
    phasors = np.exp(-1j * grid)
    idx, _ = kernels.grid_search(coupling_matrix(ch), ch.h_bu.astype(complex), phasors)
    return grid[idx]


def coordinate_ascent(ch: ChannelSet, cfg: SolverConfig = SolverConfig(), u0=None) -> SolverTrace:
    t0 = time.perf_counter()
    c = np.ascontiguousarray(coupling_matrix(ch))
    h_bu = ch.h_bu.astype(complex)
    u = np.ones(ch.m, dtype=complex) if u0 is None else np.array(u0, dtype=complex)
    objs = np.empty(ch.m)
    # h is carried across sweeps so consecutive objectives share one rounding path
    h = h_bu + c.conj().T @ u
    trace = []
    updates = []
    for _ in range(cfg.max_iters):
        start = kernels.ca_sweep(c, h, u, objs)
        if not trace:
            trace.append(float(start))
        updates.extend(objs.tolist())
        trace.append(float(objs[-1]))
        if _converged(trace, cfg.tol):
            break
    return SolverTrace(trace, time.perf_counter() - t0, u_to_phases(u), update_objectives=updates)


def _flat_trace(ch, t0):
    obj = float(np.vdot(ch.h_bu, ch.h_bu).real)
    return SolverTrace([obj], time.perf_counter() - t0, np.zeros(ch.m))


def admm_solve(ch: ChannelSet, cfg: SolverConfig = SolverConfig()) -> SolverTrace:
    """Splitting ``u = z`` with ``z`` on the unit circle.

    The u-step is a linearised ascent step of length ``2 / rho`` at ``z``
    (the u-subproblem of a maximisation is unbounded), the z-step projects
    ``u + lam`` onto the unit circle and the scaled dual accumulates
    ``u - z``.
    """
    t0 = time.perf_counter()
    c = coupling_matrix(ch)
    fro2 = float(np.vdot(c, c).real)
    if fro2 == 0.0:
        return _flat_trace(ch, t0)
    rho = cfg.rho_admm if cfg.rho_admm is not None else 4.0 * fro2 / ch.m
    h_bu = ch.h_bu
    ch_t = c.conj().T

    z = np.ones(ch.m, dtype=complex)
    lam = np.zeros(ch.m, dtype=complex)
    h = h_bu + ch_t @ z
    best_obj = float(np.vdot(h, h).real)
    best_z = z
    trace = [best_obj]
    for _ in range(cfg.max_iters):
        u = z - lam + (2.0 / rho) * (c @ h)
        z = _project(u + lam, z)
        lam = lam + u - z
        h = h_bu + ch_t @ z
        obj = float(np.vdot(h, h).real)
        trace.append(obj)
        if obj > best_obj:
            best_obj, best_z = obj, z
        if _converged(trace, cfg.tol):
            break
    return SolverTrace(trace, time.perf_counter() - t0, u_to_phases(best_z))


def vamp_solve(ch: ChannelSet, cfg: SolverConfig = SolverConfig()) -> SolverTrace:
    """Damped two-stage message passing on the unit-modulus vector ``u``.

    LMMSE stage: Gaussian prior ``CN(r1, 1/g1)`` on ``u`` and the
    pseudo-measurement ``y = C^H u + e`` whose target ``y = B d - h_bu``
    points the effective channel along its current direction ``d`` with the
    upper-bound amplitude ``B``. Denoising stage: unit-modulus projection of
    the extrinsic mean with its divergence as Onsager correction.
    """
    t0 = time.perf_counter()
    c = coupling_matrix(ch)
    fro2 = float(np.vdot(c, c).real)
    if fro2 == 0.0:
        return _flat_trace(ch, t0)
    m = ch.m
    h_bu = ch.h_bu
    ch_t = c.conj().T
    bound = np.linalg.norm(h_bu) + np.linalg.norm(c, axis=1).sum()

    # C = W diag(s) Z^H, rank <= N; each LMMSE solve is then O(MN).
    w, s, _ = np.linalg.svd(c, full_matrices=False)
    s2 = s * s

    u = np.ones(m, dtype=complex)
    h = h_bu + ch_t @ u
    best_obj = float(np.vdot(h, h).real)
    best_u = u
    # warm start: every element aligned with the direct link
    u_mrt = _project(c @ h_bu, u)
    h_mrt = h_bu + ch_t @ u_mrt
    obj = float(np.vdot(h_mrt, h_mrt).real)
    u, h = u_mrt, h_mrt
    if obj > best_obj:
        best_obj, best_u = obj, u
    trace = [best_obj]

    r1 = u.copy()
    g1 = 1.0
    damp = cfg.damping
    fallback = False
    for _ in range(cfg.max_iters):
        hn = np.linalg.norm(h)
        d = h / hn if hn > 0 else np.ones_like(h) / np.sqrt(h.size)
        y = bound * d - h_bu
        resid = y - ch_t @ u
        gw = y.size / max(float(np.vdot(resid, resid).real), 1e-30 * fro2)

        # posterior N(mean, Sigma), Sigma = (gw C C^H + g1 I)^-1
        shrink = gw * s2 / (gw * s2 + g1)
        rhs = gw * (c @ y) + g1 * r1
        mean = (rhs - w @ (shrink * (w.conj().T @ rhs))) / g1
        v = (m - shrink.sum()) / (g1 * m)
        g2 = 1.0 / v - g1
        if not np.isfinite(g2) or g2 <= 0:
            fallback = True
            break
        r2 = (mean / v - g1 * r1) / g2

        u_new = _project(r2, u)
        # divergence of z / |z| (complex), averaged over elements
        alpha = float(np.mean(0.5 / np.maximum(np.abs(r2), 1e-12)))
        alpha = min(alpha, 1.0 - 1e-6)
        r1_new = (u_new - alpha * r2) / (1.0 - alpha)
        g1_new = g2 * (1.0 - alpha) / alpha
        if not np.isfinite(g1_new) or g1_new <= 0:
            fallback = True
            break
        r1 = damp * r1_new + (1.0 - damp) * r1
        g1 = damp * g1_new + (1.0 - damp) * g1

        u = u_new
        h = h_bu + ch_t @ u
        obj = float(np.vdot(h, h).real)
        trace.append(obj)
        if obj > best_obj:
            best_obj, best_u = obj, u
        if _converged(trace, cfg.tol):
            break

    if fallback:
        ca = coordinate_ascent(ch, cfg)
        if ca.objective > best_obj:
            best_u = np.exp(-1j * ca.final_phases)
            trace.append(ca.objective)
    return SolverTrace(trace, time.perf_counter() - t0, u_to_phases(best_u), fallback=fallback)
