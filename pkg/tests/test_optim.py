import numpy as np
import pytest
from hypothesis import given, strategies as st

from irsopt.channel import ChannelSet
from irsopt.optim import (
    GridTooLargeError,
    SolverConfig,
    admm_solve,
    closed_form_m1,
    coordinate_ascent,
    grid_oracle,
    random_phases,
    vamp_solve,
)
from irsopt.system import TWO_PI, coupling_matrix, objective_upper_bound, p1_objective

from conftest import random_channels, default_channels

seeds = st.integers(0, 2**32 - 1)
SOLVERS = {"admm": admm_solve, "vamp": vamp_solve, "bcd": coordinate_ascent}


def aligned_instance():
    return ChannelSet(np.array([1 + 0j]), np.array([[np.exp(1j * np.pi / 4)]]), np.array([1 + 0j]))


def disconnected(rng, m=4):
    ch = random_channels(rng, m=m)
    return ChannelSet(ch.h_bu, ch.h_br, np.zeros(m, complex))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"max_iters": 0}, {"rho_admm": 0.0}, {"damping": 0.0}, {"damping": 1.5}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)

    def test_defaults(self):
        cfg = SolverConfig()
        assert cfg.max_iters == 30 and cfg.damping == 0.7


class TestClosedForm:
    def test_alignment(self):
        ch = aligned_instance()
        theta = closed_form_m1(ch)
        assert theta[0] == pytest.approx(7 * np.pi / 4)
        assert p1_objective(ch, theta) == pytest.approx(4.0)

    def test_degenerate(self):
        ch = ChannelSet(np.array([1 + 0j, 0j]), np.array([[0j, 1 + 0j]]), np.array([1 + 0j]))
        theta = closed_form_m1(ch)
        assert theta[0] == 0.0
        assert p1_objective(ch, theta) == pytest.approx(1.0 + 1.0)

    def test_objective_formula(self, rng):
        ch = random_channels(rng, m=1)
        c = coupling_matrix(ch)
        q = c[0] @ ch.h_bu
        expected = np.vdot(ch.h_bu, ch.h_bu).real + 2 * abs(q) + np.vdot(c, c).real
        assert p1_objective(ch, closed_form_m1(ch)) == pytest.approx(expected, rel=1e-12)

    def test_needs_m1(self, rng):
        with pytest.raises(ValueError):
            closed_form_m1(random_channels(rng, m=2))

    def test_matches_fine_grid(self, rng):
        ch = random_channels(rng, m=1)
        best = p1_objective(ch, closed_form_m1(ch))
        assert p1_objective(ch, grid_oracle(ch, 4096)) == pytest.approx(best, rel=1e-5)


class TestGrid:
    def test_on_grid(self):
        theta = grid_oracle(aligned_instance(), 8)
        assert theta[0] == pytest.approx(7 * np.pi / 4, abs=1e-15)

    def test_flat_tie_break(self, rng):
        np.testing.assert_array_equal(grid_oracle(disconnected(rng, 2), 16), [0.0, 0.0])

    def test_dominates_random(self, rng):
        ch = random_channels(rng, m=2)
        best = p1_objective(ch, grid_oracle(ch, 64))
        draws = rng.uniform(0, TWO_PI, (10_000, 2))
        assert max(p1_objective(ch, t) for t in draws) <= best * (1 + 2e-3)

    def test_refuses_large(self, rng):
        with pytest.raises(GridTooLargeError):
            grid_oracle(random_channels(rng, m=4), 8)

    def test_levels(self, rng):
        with pytest.raises(ValueError):
            grid_oracle(random_channels(rng, m=1), 1)


class TestCoordinateAscent:
    def test_m1_matches_closed_form(self, rng):
        ch = random_channels(rng, m=1)
        trace = coordinate_ascent(ch, SolverConfig(max_iters=1))
        assert trace.objective == pytest.approx(p1_objective(ch, closed_form_m1(ch)), rel=1e-10)

    def test_flat(self, rng):
        ch = disconnected(rng)
        trace = coordinate_ascent(ch)
        assert np.ptp(trace.objective_per_iter) == 0.0

    def test_m3_near_grid(self, rng):
        for _ in range(5):
            ch = random_channels(rng, m=3)
            assert coordinate_ascent(ch).objective >= 0.999 * p1_objective(ch, grid_oracle(ch, 64))

    @given(seeds)
    def test_monotone_updates(self, seed):
        ch = default_channels(np.random.default_rng(seed), n=4, m=9)
        tr = coordinate_ascent(ch, SolverConfig(max_iters=5))
        seq = [tr.objective_per_iter[0], *tr.update_objectives]
        assert all(b >= a for a, b in zip(seq, seq[1:]))

    def test_tol_stops_early(self, rng):
        tr = coordinate_ascent(random_channels(rng, m=6), SolverConfig(max_iters=200, tol=1e-12))
        assert len(tr.objective_per_iter) < 201


class TestADMM:
    def test_m1(self, rng):
        ch = random_channels(rng, m=1)
        assert admm_solve(ch).objective == pytest.approx(p1_objective(ch, closed_form_m1(ch)), rel=1e-4)

    def test_m2_grid(self, rng):
        ch = random_channels(rng, m=2)
        assert admm_solve(ch).objective >= 0.99 * p1_objective(ch, grid_oracle(ch, 256))

    def test_flat(self, rng):
        ch = disconnected(rng)
        tr = admm_solve(ch)
        assert tr.objective_per_iter == [pytest.approx(np.vdot(ch.h_bu, ch.h_bu).real)]


class TestVAMP:
    def test_m1(self, rng):
        ch = random_channels(rng, m=1)
        assert vamp_solve(ch).objective == pytest.approx(p1_objective(ch, closed_form_m1(ch)), rel=1e-3)

    def test_flat(self, rng):
        ch = disconnected(rng)
        assert vamp_solve(ch).objective == pytest.approx(np.vdot(ch.h_bu, ch.h_bu).real)

    def test_m3_mean_beats_admm(self):
        rng = np.random.default_rng(7)
        v, a = [], []
        for _ in range(100):
            ch = default_channels(rng, n=10, m=3)
            v.append(vamp_solve(ch).objective)
            a.append(admm_solve(ch).objective)
        assert np.mean(v) >= np.mean(a)

    def test_small_m_contract(self):
        rng = np.random.default_rng(8)
        wins = 0
        for _ in range(200):
            ch = default_channels(rng, n=10, m=3)
            wins += vamp_solve(ch).objective >= admm_solve(ch).objective * (1 - 1e-12)
        assert wins >= 120

    def test_fallback_flag_is_bool(self, rng):
        assert vamp_solve(random_channels(rng)).fallback in (False, True)


@pytest.mark.parametrize("name", sorted(SOLVERS))
@given(seed=seeds)
def test_solver_common_properties(name, seed):
    rng = np.random.default_rng(seed)
    ch = default_channels(rng, n=4, m=8)
    tr = SOLVERS[name](ch, SolverConfig(max_iters=10))
    theta = tr.final_phases
    assert theta.shape == (8,) and np.all(theta >= 0) and np.all(theta < TWO_PI)
    assert len(tr.objective_per_iter) <= 10 + 1 or name == "vamp" and tr.fallback
    obj = p1_objective(ch, theta)
    assert obj == pytest.approx(tr.objective, rel=1e-9)
    assert obj <= objective_upper_bound(ch) * (1 + 1e-12)
    assert obj >= p1_objective(ch, np.zeros(8)) * (1 - 1e-12)


@pytest.mark.parametrize("m", [1, 2])
@pytest.mark.parametrize("name", ["admm", "vamp"])
def test_small_m_near_grid_optimum(name, m):
    # 200 generator instances at default parameters, 95% must reach 0.99 x grid
    rng = np.random.default_rng(300 + m)
    hits = 0
    for _ in range(200):
        ch = default_channels(rng, n=10, m=m)
        best = p1_objective(ch, grid_oracle(ch, 256))
        hits += SOLVERS[name](ch).objective >= 0.99 * best
    assert hits >= 190


class TestRandomPhases:
    def test_range(self, rng):
        t = random_phases(rng, 5)
        assert t.shape == (5,) and np.all((t >= 0) & (t < TWO_PI))

    def test_seeded(self):
        np.testing.assert_array_equal(
            random_phases(np.random.default_rng(4), 7), random_phases(np.random.default_rng(4), 7)
        )

    def test_uniform(self, rng):
        assert abs(np.mean(np.exp(1j * random_phases(rng, 100_000)))) < 0.02

    def test_m_positive(self, rng):
        with pytest.raises(ValueError):
            random_phases(rng, 0)
