import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from eegrav.panel import (
    DAILY, MONTHLY, CountPanel, CovariateCube, PanelError, SpatialStructure, TimeAxis, UnitIndex,
    aggregate_to_monthly, mid_month_slice, path_distances,
)


def daily_panel(counts, origin=dt.date(2021, 4, 1)):
    counts = np.atleast_2d(counts)
    P = counts.shape[0]
    units = UnitIndex([f"d{i}" for i in range(P)], ["r"] * P)
    return CountPanel(TimeAxis(DAILY, origin, counts.shape[1]), units, counts)


class TestTimeAxis:
    def test_monthly_labels(self):
        ax = TimeAxis(MONTHLY, dt.date(2020, 11, 1), 3)
        assert ax.labels() == ["2020-11", "2020-12", "2021-01"]
        assert list(ax.calendar_months()) == [11, 12, 1]

    def test_daily_dates_are_monotone(self):
        ax = TimeAxis(DAILY, dt.date(2020, 2, 27), 5)
        d = ax.dates()
        assert d[2] == dt.date(2020, 2, 29)
        assert all(a < b for a, b in zip(d, d[1:]))

    def test_rejects_bad_resolution_and_origin(self):
        with pytest.raises(PanelError):
            TimeAxis("weekly", dt.date(2020, 1, 1), 3)
        with pytest.raises(PanelError):
            TimeAxis(DAILY, "2020-01-01", 3)

    def test_index_of(self):
        ax = TimeAxis(MONTHLY, dt.date(2020, 1, 1), 24)
        assert ax.index_of(dt.date(2021, 3, 1)) == 14
        with pytest.raises(PanelError):
            ax.index_of(dt.date(2022, 1, 1))


class TestUnitsAndPanel:
    def test_region_bookkeeping(self):
        u = UnitIndex(["a", "b", "c"], ["x", "y", "x"])
        assert u.regions == ("x", "y")
        assert list(u.region_index()) == [0, 1, 0]
        assert list(u.region_sizes()) == [2, 1]
        assert u.region_sizes().sum() == u.n_units

    def test_duplicate_ids_rejected(self):
        with pytest.raises(PanelError):
            UnitIndex(["a", "a"], ["x", "x"])

    @pytest.mark.parametrize("bad", [[[1, -1]], [[1.5, 2]], [[np.nan, 1]]])
    def test_counts_must_be_nonnegative_integers(self, bad):
        with pytest.raises(PanelError):
            daily_panel(np.array(bad))

    def test_shape_checked(self):
        units = UnitIndex(["a"], ["x"])
        with pytest.raises(PanelError):
            CountPanel(TimeAxis(DAILY, dt.date(2020, 1, 1), 3), units, np.zeros((1, 4)))

    def test_counts_are_read_only(self):
        p = daily_panel(np.ones((1, 3)))
        with pytest.raises(ValueError):
            p.counts[0, 0] = 5


class TestAggregation:
    def test_month_of_zeros(self):
        p = daily_panel(np.zeros((1, 31)), dt.date(2021, 1, 1))
        m = aggregate_to_monthly(p)
        assert m.axis.length == 1 and m.counts.tolist() == [[0]]

    def test_sum_of_ones(self):
        m = aggregate_to_monthly(daily_panel(np.ones((1, 30)), dt.date(2021, 4, 1)))
        assert m.counts.tolist() == [[30]]
        assert m.axis.resolution == MONTHLY and m.axis.origin == dt.date(2021, 4, 1)

    def test_random_panel_matches_direct_summation(self):
        rng = np.random.default_rng(0)
        origin = dt.date(2020, 1, 17)
        counts = rng.poisson(7, (3, 90))
        m = aggregate_to_monthly(daily_panel(counts, origin))
        keys, sums = oracles.monthly_sums(origin, counts.tolist())
        assert m.axis.month_keys() == keys
        assert m.counts.tolist() == sums

    def test_partial_months_dropped_and_origin_recorded(self):
        m = aggregate_to_monthly(daily_panel(np.ones((1, 70)), dt.date(2020, 1, 20)))
        # 2020-01-20 .. 2020-03-29: only February is complete
        assert m.axis.origin == dt.date(2020, 2, 1)
        assert m.counts.tolist() == [[29]]

    def test_insufficient_span(self):
        with pytest.raises(PanelError, match="insufficient span"):
            aggregate_to_monthly(daily_panel(np.ones((1, 20)), dt.date(2020, 1, 5)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 400), st.integers(31, 200), st.integers(0, 2 ** 31))
    def test_totals_preserved_over_retained_days(self, offset, T, seed):
        origin = dt.date(2019, 1, 1) + dt.timedelta(days=offset)
        counts = np.random.default_rng(seed).integers(0, 50, (2, T))
        p = daily_panel(counts, origin)
        try:
            m = aggregate_to_monthly(p)
        except PanelError:
            return
        start = (m.axis.origin - origin).days
        end_month = m.axis.dates()[-1]
        last = dt.date(end_month.year + end_month.month // 12, end_month.month % 12 + 1, 1)
        stop = (last - origin).days
        assert m.counts.sum() == counts[:, start:stop].sum()


class TestMidMonth:
    def test_constant_series(self):
        ax = TimeAxis(DAILY, dt.date(2021, 1, 1), 59)
        _, v = mid_month_slice(ax, np.full(59, 2.5))
        assert v.tolist() == [2.5, 2.5]

    def test_day_of_month_in_30_day_month(self):
        ax = TimeAxis(DAILY, dt.date(2021, 4, 1), 30)
        _, v = mid_month_slice(ax, np.arange(1, 31))
        assert v.tolist() == [15]

    def test_linear_ramp_over_two_months(self):
        ax = TimeAxis(DAILY, dt.date(2021, 3, 1), 61)   # March (31) + April (30)
        ramp = np.arange(61, dtype=float)
        monthly, v = mid_month_slice(ax, ramp)
        assert v.tolist() == [15.0, 31 + 14.0]          # day 16 of March, day 15 of April
        assert monthly.origin == dt.date(2021, 3, 1) and monthly.length == 2

    def test_empty_series(self):
        with pytest.raises(PanelError):
            mid_month_slice(TimeAxis(DAILY, dt.date(2021, 1, 1), 31), np.array([]))

    def test_works_on_rows(self):
        ax = TimeAxis(DAILY, dt.date(2021, 2, 1), 28)
        _, v = mid_month_slice(ax, np.vstack([np.arange(28), -np.arange(28)]))
        assert v[:, 0].tolist() == [13, -13]


def random_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    a = rng.random((n, n)) < p
    a = np.triu(a, 1)
    return a | a.T


class TestSpatial:
    def test_path_graph(self):
        adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=bool)
        o = path_distances(adj)
        assert o.tolist() == [[0, 1, 2], [1, 0, 1], [2, 1, 0]]

    def test_unreachable_is_inf(self):
        o = path_distances(np.zeros((2, 2), dtype=bool))
        assert np.isinf(o[0, 1])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 12), st.floats(0.1, 0.7), st.integers(0, 2 ** 31))
    def test_bfs_distances_form_a_metric(self, n, p, seed):
        o = path_distances(random_graph(n, p, seed))
        assert np.array_equal(o, o.T)
        assert np.all(np.diag(o) == 0)
        for k in range(n):
            assert np.all(o <= o[:, [k]] + o[[k], :])

    def test_structure_invariants_enforced(self):
        adj = random_graph(5, 0.5, 1)
        s = SpatialStructure.from_adjacency(adj)
        assert np.array_equal(s.adjacency, s.path_distance == 1)
        with pytest.raises(PanelError):
            SpatialStructure(adj, np.zeros((5, 5)))
        with pytest.raises(PanelError):
            SpatialStructure.from_adjacency(adj, airport_ids=["a"], airport_regions=["r"],
                                            airport_distance=-np.ones((5, 1)))

    def test_airports_per_region(self):
        s = SpatialStructure.from_adjacency(np.zeros((2, 2), dtype=bool), airport_ids=["a", "b", "c"],
                                            airport_regions=["x", "y", "x"])
        assert s.airports_per_region(["x", "y", "z"]).tolist() == [2, 1, 0]


class TestCovariates:
    def cube(self, transform="log1p"):
        return CovariateCube(["a", "b"], [(2020, 1), (2020, 2), (2020, 3)],
                             np.array([[0.0, 9.0, 99.0], [1.0, 2.0, 3.0]]), transform)

    def test_log1p_default(self):
        assert np.allclose(self.cube().values[0], np.log([1, 10, 100]))
        assert self.cube("identity").values[0].tolist() == [0, 9, 99]

    def test_alignment(self):
        ax = TimeAxis(MONTHLY, dt.date(2020, 2, 1), 2)
        X = self.cube("identity").aligned(ax, ["b", "a"])
        assert X.tolist() == [[2, 3], [9, 99]]

    def test_misaligned_months(self):
        ax = TimeAxis(MONTHLY, dt.date(2020, 3, 1), 2)
        with pytest.raises(PanelError, match="lacks months"):
            self.cube().aligned(ax, ["a"])

    def test_negative_passengers(self):
        with pytest.raises(PanelError):
            CovariateCube(["a"], [(2020, 1)], [[-1.0]])
