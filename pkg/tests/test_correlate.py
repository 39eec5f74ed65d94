import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdcascade import correlate as corr
from qdcascade import polarization as pol
from qdcascade import simulate as sim
from qdcascade.errors import EstimationError, InvalidInputError
from qdcascade.pttg import TagStream


def make_stream(times, channels):
    order = np.argsort(np.asarray(times, dtype=np.int64), kind="stable")
    ts = np.asarray(times, dtype=np.uint64)[order]
    ch = np.asarray(channels, dtype=np.uint8)[order]
    return TagStream(ts, ch, np.zeros(len(ts), np.uint8))


def brute_force_histogram(ta, tb, bin_width, tau_min, tau_max):
    """Oracle: count every (a, b) pair with tau in range, O(n^2)."""
    nbins = (tau_max - tau_min) // bin_width
    counts = np.zeros(nbins, dtype=np.int64)
    for a in ta:
        for b in tb:
            tau = int(b) - int(a)
            if tau_min <= tau < tau_max:
                counts[(tau - tau_min) // bin_width] += 1
    return counts


class TestCrossCorrelate:
    def test_two_tags(self):
        s = make_stream([100, 350], [0, 1])
        h = corr.cross_correlate(s, 0, 1, 100, (-500, 500))
        assert h.counts.sum() == 1
        assert h.counts[(250 + 500) // 100] == 1
        assert h.singles_a == 1 and h.singles_b == 1
        assert h.acquisition_ps == 250

    def test_empty_channel(self):
        s = make_stream([100], [0])
        h = corr.cross_correlate(s, 0, 1, 10, (-100, 100))
        assert h.counts.sum() == 0

    def test_negative_tau_side(self):
        s = make_stream([500, 300], [0, 1])
        h = corr.cross_correlate(s, 0, 1, 100, (-500, 500))
        assert h.counts[(-200 + 500) // 100] == 1

    def test_invalid_args(self):
        s = make_stream([1], [0])
        with pytest.raises(InvalidInputError):
            corr.cross_correlate(s, 0, 1, 0, (-10, 10))
        with pytest.raises(InvalidInputError):
            corr.cross_correlate(s, 0, 1, 10, (10, -10))
        with pytest.raises(InvalidInputError):
            corr.cross_correlate(s, 0, 1, 7, (-10, 10))  # range not a bin multiple

    def test_unsorted_rejected(self):
        s = TagStream(np.array([5, 1], np.uint64), np.zeros(2, np.uint8),
                      np.zeros(2, np.uint8))
        with pytest.raises(InvalidInputError):
            corr.cross_correlate(s, 0, 1, 10, (-10, 10))

    @given(st.lists(st.tuples(st.integers(0, 5000), st.integers(0, 1)),
                    min_size=0, max_size=120),
           st.sampled_from([(10, -200, 200), (25, -500, 500), (50, -100, 400)]))
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force(self, tags, spec):
        bin_width, tau_min, tau_max = spec
        times = [t for t, _ in tags]
        channels = [c for _, c in tags]
        s = make_stream(times, channels)
        h = corr.cross_correlate(s, 0, 1, bin_width, (tau_min, tau_max))
        oracle = brute_force_histogram(s.channel_times(0), s.channel_times(1),
                                       bin_width, tau_min, tau_max)
        assert np.array_equal(h.counts, oracle)

    @given(st.lists(st.tuples(st.integers(0, 3000), st.integers(0, 1)),
                    min_size=0, max_size=100),
           st.integers(1, 7))
    @settings(max_examples=40, deadline=None)
    def test_sharded_equals_single_pass(self, tags, n_shards):
        s = make_stream([t for t, _ in tags], [c for _, c in tags])
        h1 = corr.cross_correlate(s, 0, 1, 20, (-300, 300))
        h2 = corr.cross_correlate_sharded(s, 0, 1, 20, (-300, 300), n_shards)
        assert np.array_equal(h1.counts, h2.counts)

    def test_autocorrelation_includes_selfpairs(self):
        # correlating a channel with itself counts the zero-delay self pairs
        s = make_stream([100, 200], [0, 0])
        h = corr.cross_correlate(s, 0, 0, 50, (-500, 500))
        assert h.counts.sum() == 4  # 2 self pairs + (+100) + (-100)


class TestHistogram:
    def test_merge(self):
        s = make_stream([0, 30], [0, 1])
        h = corr.cross_correlate(s, 0, 1, 10, (-50, 50))
        merged = h.merged_with(h)
        assert np.array_equal(merged.counts, 2 * h.counts)
        assert merged.singles_a == 2

    def test_merge_mismatch(self):
        s = make_stream([0, 30], [0, 1])
        h1 = corr.cross_correlate(s, 0, 1, 10, (-50, 50))
        h2 = corr.cross_correlate(s, 0, 1, 10, (-100, 100))
        with pytest.raises(InvalidInputError):
            h1.merged_with(h2)

    def test_csv_and_json(self):
        s = make_stream([0, 30], [0, 1])
        h = corr.cross_correlate(s, 0, 1, 10, (-50, 50))
        csv_text = h.to_csv()
        assert csv_text.splitlines()[0] == "tau_ps,counts"
        assert len(csv_text.splitlines()) == 11
        import json
        doc = json.loads(h.to_json())
        assert doc["counts"] == h.counts.tolist()
        assert doc["bin_width_ps"] == 10


class TestNormalizeG2:
    def test_cw_uncorrelated_poisson(self):
        # independent Poisson channels: g2 ~ 1 everywhere
        rng = np.random.default_rng(5)
        t = 10_000_000
        ta = np.sort(rng.integers(0, t, 20_000))
        tb = np.sort(rng.integers(0, t, 20_000))
        s = make_stream(np.concatenate([ta, tb]),
                        np.concatenate([np.zeros(len(ta)), np.ones(len(tb))]))
        h = corr.cross_correlate(s, 0, 1, 1000, (-20_000, 20_000))
        g2 = corr.normalize_g2(h, "cw")
        assert g2.g2.mean() == pytest.approx(1.0, abs=0.05)

    def test_cw_needs_singles(self):
        h = corr.Histogram(10, -50, 50, np.zeros(10, np.int64), 0, 1)
        with pytest.raises(EstimationError):
            corr.normalize_g2(h, "cw")

    def test_pulsed_cascade_bunching(self):
        # XX->X cascade: the zero-delay peak dominates the side peaks
        cfg = sim.EmitterConfig(seed=3)
        stream = sim.simulate_setting(cfg, sim.AnalyzerSetting("H", "H"), 30_000)
        rep_ps = 12_500
        h = corr.cross_correlate(stream, 0, 2, 250, (-8 * rep_ps, 8 * rep_ps))
        g2 = corr.normalize_g2(h, "pulsed", rep_period_ps=rep_ps)
        center = g2.g2[g2.tau_ps == 0][0]
        side = g2.g2[g2.tau_ps != 0]
        # both clicks land in the same cycle for every HH pair: the joint
        # probability 1/2 over the product of marginals (1/2)^2 gives 2
        assert center == pytest.approx(2.0, abs=0.1)
        assert side.mean() == pytest.approx(1.0, abs=0.1)

    def test_pulsed_requires_side_peaks(self):
        h = corr.Histogram(100, -12_500, 12_500, np.zeros(250, np.int64), 0, 1)
        with pytest.raises(EstimationError):
            corr.normalize_g2(h, "pulsed", rep_period_ps=12_500)

    def test_unknown_mode(self):
        h = corr.Histogram(10, -50, 50, np.ones(10, np.int64), 0, 1, 1, 1, 100)
        with pytest.raises(InvalidInputError):
            corr.normalize_g2(h, "banana")


class TestMatchCoincidences:
    def test_simple(self):
        n, amb = corr.match_coincidences(np.array([100, 300]), np.array([120, 290]), 50)
        assert (n, amb) == (2, 0)

    def test_no_partner(self):
        n, amb = corr.match_coincidences(np.array([0]), np.array([1000]), 50)
        assert (n, amb) == (0, 0)

    def test_ambiguity_flagged(self):
        n, amb = corr.match_coincidences(np.array([100]), np.array([90, 110]), 50)
        assert n == 1 and amb == 1

    def test_greedy_earliest(self):
        # a=[0, 60] b=[50]: b pairs with a=0 (earliest), leaving a=60 unmatched
        n, amb = corr.match_coincidences(np.array([0, 60]), np.array([50]), 100)
        assert n == 1 and amb == 1

    def test_empty(self):
        assert corr.match_coincidences(np.array([]), np.array([]), 10) == (0, 0)


class TestCoincidenceCounts:
    def test_bases3_pipeline(self):
        cfg = sim.EmitterConfig(fss_uev=1.3, seed=11)
        settings_list = sim.bases3_settings()
        streams = sim.run_experiment(cfg, settings_list, 60_000)
        table = corr.coincidence_counts(streams, settings_list, window_ps=6250)
        assert set(table.entries) == {
            ("H", "H"), ("H", "V"), ("V", "H"), ("V", "V"),
            ("D", "D"), ("D", "A"), ("A", "D"), ("A", "A"),
            ("R", "R"), ("R", "L"), ("L", "R"), ("L", "L")}
        deg = corr.degrees_from_counts(table)
        n = 60_000
        assert deg.c_linear == pytest.approx(1.0, abs=0.01)
        assert deg.c_diagonal == pytest.approx(0.204, abs=3 / np.sqrt(n) + 0.01)
        assert deg.c_circular == pytest.approx(-0.204, abs=3 / np.sqrt(n) + 0.01)
        f = pol.fidelity_from_correlations(deg)
        assert f == pytest.approx(0.602, abs=0.01)

    def test_window_validation(self):
        with pytest.raises(InvalidInputError):
            corr.coincidence_counts({}, [], window_ps=0)

    def test_missing_quadruple(self):
        table = corr.CountsTable({("H", "H"): 1, ("H", "V"): 1,
                                  ("V", "H"): 1, ("V", "V"): 1})
        with pytest.raises(EstimationError):
            corr.degrees_from_counts(table)


class TestCountsTable:
    def test_csv_round_trip(self):
        t = corr.CountsTable({("H", "H"): 10, ("D", "A"): 3}, window_ps=500)
        back = corr.CountsTable.from_csv(t.to_csv(), window_ps=500)
        assert back.entries == t.entries

    def test_json_round_trip(self):
        t = corr.CountsTable({("R", "L"): 7}, window_ps=100, ambiguous_matches=2)
        back = corr.CountsTable.from_json(t.to_json())
        assert back.entries == t.entries
        assert back.window_ps == 100 and back.ambiguous_matches == 2

    def test_bad_csv_header(self):
        with pytest.raises(InvalidInputError):
            corr.CountsTable.from_csv("a,b,c\nH,H,1\n")

    def test_negative_count_rejected(self):
        with pytest.raises(InvalidInputError):
            corr.CountsTable.from_csv("xx_outcome,x_outcome,count\nH,H,-1\n")

    def test_bad_json(self):
        with pytest.raises(InvalidInputError):
            corr.CountsTable.from_json("{\"entries\": [{\"xx\": \"H\"}]}")
