import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from pabest.belief import CredibleInterval, Pmf, RateGrid, credible_interval, entropy, uniform
from pabest.likelihood import LikelihoodModel, likelihood_vector
from pabest.sampling import (
    PathSelector, PathState, Strategy, StrategyConfig, select_path, select_rate, selection_weights,
)

GRID = RateGrid()


def state(pid, width, satisfied=None, marginal=None):
    ci = CredibleInterval(10, 10 + width, 0.95)
    sat = width <= 10 if satisfied is None else satisfied
    return PathState(pid, marginal or uniform(GRID), ci, sat)


def draw_counts(states, kind, n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    cfg = StrategyConfig(kind)
    counts = np.zeros(len(states), dtype=int)
    for _ in range(n):
        counts[select_path(states, cfg, 0, rng)] += 1
    return counts


class TestSelectPath:
    @pytest.mark.parametrize("kind", list(Strategy))
    def test_all_satisfied(self, kind):
        states = [state("a", 5), state("b", 0)]
        assert select_path(states, StrategyConfig(kind), 0, np.random.default_rng(0)) is None

    def test_wci_equal_widths(self):
        counts = draw_counts([state("p1", 20), state("p2", 20), state("p3", 5)], Strategy.WCI)
        assert counts[2] == 0
        assert counts[0] / 10_000 == pytest.approx(0.5, abs=0.02)

    def test_we_entropy_ratio(self):
        near_point = Pmf.from_weights(GRID, np.where(np.arange(100) == 40, 1.0, 1e-3))
        states = [
            PathState("u", uniform(GRID), CredibleInterval(1, 95, 0.95), False),
            PathState("n", near_point, CredibleInterval(1, 95, 0.95), False),
        ]
        hu, hn = entropy(states[0].marginal), entropy(near_point)
        counts = draw_counts(states, Strategy.WE)
        assert counts[0] / 10_000 == pytest.approx(hu / (hu + hn), abs=0.02)

    @pytest.mark.parametrize("kind", [Strategy.WE, Strategy.WCI])
    def test_chi_square(self, kind):
        rng = np.random.default_rng(5)
        states = []
        for i, w in enumerate([15, 30, 45, 5, 80]):
            m = Pmf.from_weights(GRID, rng.random(100) ** (i + 1))
            states.append(PathState(f"p{i}", m, CredibleInterval(1, 1 + w, 0.95), w <= 10))
        weights = selection_weights(states, kind)
        counts = draw_counts(states, kind)
        keep = weights > 0
        expect = weights[keep] / weights.sum() * counts.sum()
        assert counts[~keep].sum() == 0
        assert chisquare(counts[keep], expect).pvalue > 0.01

    @given(st.lists(st.integers(0, 60), min_size=1, max_size=8), st.sampled_from(list(Strategy)),
           st.integers(0, 20), st.integers(0, 2**31))
    def test_satisfied_never_selected(self, widths, kind, cursor, seed):
        states = [state(f"p{i}", w) for i, w in enumerate(widths)]
        if kind is Strategy.RR_STRICT:
            return  # visits every path by design
        i = select_path(states, StrategyConfig(kind), cursor, np.random.default_rng(seed))
        if all(s.satisfied for s in states):
            assert i is None
        else:
            assert not states[i].satisfied

    @given(st.lists(st.booleans(), min_size=1, max_size=10), st.integers(0, 30))
    def test_rr_cycle_visits_each_open_path_once(self, sat, start):
        states = [state(f"p{i}", 0 if s else 50) for i, s in enumerate(sat)]
        open_ = [s.path for s in states if not s.satisfied]
        sel = PathSelector(StrategyConfig(Strategy.RR))
        sel.cursor = start
        picks = [sel.select(states) for _ in range(len(open_))]
        if not open_:
            assert picks == []
        else:
            assert sorted(picks) == sorted(open_)

    def test_rr_strict_includes_satisfied(self):
        states = [state("a", 50), state("b", 0), state("c", 50)]
        sel = PathSelector(StrategyConfig(Strategy.RR_STRICT))
        assert [sel.select(states) for _ in range(4)] == ["a", "b", "c", "a"]

    def test_seq_stays_on_lowest_open_path(self):
        states = [state("a", 0), state("b", 50), state("c", 50)]
        sel = PathSelector(StrategyConfig(Strategy.SEQ))
        assert [sel.select(states) for _ in range(3)] == ["b", "b", "b"]

    def test_zero_weight_fallback(self):
        # unsatisfied but zero-width cannot happen with beta > 0; zero entropy can
        states = [PathState("a", Pmf.point(GRID, 40), CredibleInterval(1, 50, 0.95), False)]
        assert select_path(states, StrategyConfig(Strategy.WE), 0, np.random.default_rng(0)) == 0

    def test_seeded_selector(self):
        states = [state(f"p{i}", 20 + i) for i in range(5)]
        a = PathSelector(StrategyConfig(Strategy.WCI, seed=3))
        b = PathSelector(StrategyConfig(Strategy.WCI, seed=3))
        assert [a.select(states) for _ in range(20)] == [b.select(states) for _ in range(20)]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            StrategyConfig(beta=0)
        with pytest.raises(ValueError):
            StrategyConfig(eta=1.0)
        with pytest.raises(ValueError):
            StrategyConfig("bogus")
        assert StrategyConfig("rr-strict").kind is Strategy.RR_STRICT


class TestSelectRate:
    def test_uniform(self):
        assert select_rate(uniform(GRID)) == 50

    def test_point_mass(self):
        assert select_rate(Pmf.point(GRID, 73)) == 73

    def test_between_two_measurements(self):
        lm = LikelihoodModel()
        w = likelihood_vector(lm, 40, 1, GRID) * likelihood_vector(lm, 60, 0, GRID)
        p = Pmf.from_weights(GRID, w)
        r = select_rate(p)
        assert 40 < r < 60
        assert select_rate(p) == r

    def test_path_state_satisfaction(self):
        p = Pmf.point(GRID, 20)
        s = PathState.from_marginal("a", p, credible_interval(p, 0.95), beta=10)
        assert s.satisfied
