import gzip
import math

import numpy as np
import pytest

from shapegd.core import DataError, Label, fit_edges
from shapegd.detectors import ConstantScorer, OracleFlipScorer
from shapegd.neighborhoods import NtwConfig, StructuralPartition
from shapegd.shape import ShapeThreshold, build_reference, classify_neighborhood
from shapegd.simulator import (
    AttackConfig,
    InfectionTimeline,
    NetflowRecord,
    SweepSetting,
    Trace,
    TraceConfig,
    WaterholeScenario,
    attach_fv_streams,
    generate_trace,
    ld_rng,
    read_netflow,
    read_sweep_csv,
    run_detection,
    run_once,
    simulate_infection,
    summarize_sweep,
    sweep,
    write_netflow,
    write_sweep_csv,
    zipf_exponent_for_share,
    zipf_weights,
)
from shapegd.rng import make_rng

from oracles import brute_replay


def no_infection(trace):
    return InfectionTimeline(0.0, {}, np.full(len(trace.clients), np.inf))


class TestTrace:
    def test_zero_duration(self):
        assert len(generate_trace(TraceConfig(5, 3, 0, 1.0), 1)) == 0

    def test_poisson_count(self):
        r, T = 2.0, 500.0
        for seed in range(5):
            n = len(generate_trace(TraceConfig(1, 3, T, r), seed))
            assert abs(n - r * T) <= 5 * math.sqrt(r * T)

    def test_reproducible(self):
        cfg = TraceConfig(50, 5, 20, 0.5)
        a, b = generate_trace(cfg, 7), generate_trace(cfg, 7)
        assert list(a) == list(b)
        assert list(a) != list(generate_trace(cfg, 8))

    def test_sorted_and_in_range(self):
        tr = generate_trace(TraceConfig(50, 5, 20, 0.5), 1)
        assert np.all(np.diff(tr.timestamps) >= 0)
        assert tr.timestamps.min() >= 0 and tr.timestamps.max() < 20

    def test_hot_server_calibration(self):
        cfg = TraceConfig.calibrated(2000, 50, 100, 0.25)
        assert zipf_weights(50, cfg.zipf_exponent)[0] * cfg.total_rate == pytest.approx(43.7, rel=1e-9)
        tr = generate_trace(cfg, 3)
        hot = np.count_nonzero(tr.dst == tr.server_index("s00"))
        assert abs(hot - 4370) <= 5 * math.sqrt(4370)
        assert np.bincount(tr.dst).argmax() == 0

    def test_share_bounds(self):
        assert zipf_exponent_for_share(10, 0.1) == 0.0
        with pytest.raises(ValueError):
            zipf_exponent_for_share(10, 0.05)

    def test_netflow_round_trip(self, tmp_path):
        tr = generate_trace(TraceConfig(20, 4, 10, 0.5), 2)
        for name in ("t.csv", "t.csv.gz"):
            write_netflow(tmp_path / name, tr)
            back = read_netflow(tmp_path / name)
            assert list(back) == list(tr)
        with gzip.open(tmp_path / "t.csv.gz", "rt") as fh:
            assert fh.readline().strip() == "timestamp,src,dst,src_port,dst_port,proto,packets,bytes"

    def test_netflow_errors(self, tmp_path):
        (tmp_path / "a.csv").write_text("ts,src\n")
        with pytest.raises(DataError):
            read_netflow(tmp_path / "a.csv")
        (tmp_path / "b.csv").write_text(
            "timestamp,src,dst,src_port,dst_port,proto,packets,bytes\n1.0,c,s,1,2,6,1,10\n2.0,c,s,1,x,6,1,10\n"
        )
        with pytest.raises(DataError) as err:
            read_netflow(tmp_path / "b.csv")
        assert err.value.line == 3

    def test_negative_timestamp(self):
        with pytest.raises(ValueError):
            NetflowRecord(-1.0, "c", "s")


def visits_trace():
    recs = [NetflowRecord(float(t), f"c{t % 7}", "w" if t % 2 else "x") for t in range(60)]
    return Trace.from_records(recs)


class TestInfection:
    def test_prob_zero(self):
        tl = simulate_infection(visits_trace(), AttackConfig("w", (0, 10), 0.0, 1))
        assert tl.infected == {}

    def test_prob_one_first_visit(self):
        tr = visits_trace()
        tl = simulate_infection(tr, AttackConfig("w", (10, 20), 1.0, 1))
        expect = {}
        for r in tr:
            if r.dst == "w" and r.timestamp >= tl.compromise_time and r.src not in expect:
                expect[r.src] = r.timestamp
        assert tl.infected == expect
        assert 10 <= tl.compromise_time <= 20

    def test_invariants(self):
        tr = generate_trace(TraceConfig(200, 5, 100, 0.2), 4)
        tl = simulate_infection(tr, AttackConfig("s00", (20, 60), 0.3, 9))
        visits = {(r.src, r.timestamp) for r in tr if r.dst == "s00"}
        for c, t in tl.infected.items():
            assert t >= tl.compromise_time and (c, t) in visits

    def test_half_probability(self):
        tr = generate_trace(TraceConfig(3000, 2, 50, 0.1), 5)
        attack = AttackConfig("s00", (0, 0), 0.5, 11)
        tl = simulate_infection(tr, attack)
        # each client's first visit infects w.p. 0.5; only count clients with exactly one visit
        hot = tr.dst == tr.server_index("s00")
        ids, n = np.unique(tr.src[hot], return_counts=True)
        single = {tr.clients[i] for i in ids[n == 1]}
        hits = sum(1 for c in single if c in tl.infected)
        sigma = math.sqrt(len(single) * 0.25)
        assert abs(hits - 0.5 * len(single)) <= 3 * sigma

    def test_unknown_server(self):
        with pytest.raises(ValueError):
            simulate_infection(visits_trace(), AttackConfig("nope", (0, 1), 0.5, 1))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            AttackConfig("w", (5, 1), 0.5, 1)
        with pytest.raises(ValueError):
            AttackConfig("w", (0, 1), 1.5, 1)

    def test_deterministic(self):
        a = simulate_infection(visits_trace(), AttackConfig("w", (0, 30), 0.5, 3))
        b = simulate_infection(visits_trace(), AttackConfig("w", (0, 30), 0.5, 3))
        assert a.infected == b.infected and a.compromise_time == b.compromise_time


BEN = np.full((4, 2), -1.0)
MAL = np.full((4, 2), 1.0)


class TestFvStreams:
    def test_all_benign_without_infection(self):
        tr = visits_trace()
        batches = list(attach_fv_streams(tr, no_infection(tr), BEN, MAL, 2.0, 1, 10))
        assert all(np.all(b.labels == Label.BENIGN) for b in batches)
        assert all(np.all(b.values == -1.0) for b in batches)

    def test_switch_at_infection(self):
        tr = visits_trace()
        times = np.full(len(tr.clients), np.inf)
        times[0] = 4.5
        tl = InfectionTimeline(4.0, {tr.clients[0]: 4.5}, times)
        for b in attach_fv_streams(tr, tl, BEN, MAL, 4.0, 1, 10):
            mine = b.clients == 0
            assert np.array_equal(b.labels[mine] == Label.MALICIOUS, b.timestamps[mine] >= 4.5)
            assert np.all(b.labels[~mine] == Label.BENIGN)
            assert np.all((b.values[:, 0] > 0) == (b.labels == Label.MALICIOUS))

    def test_thousand_nodes_fifteen_seconds(self):
        recs = [NetflowRecord(0.0, f"c{i:04d}", "s") for i in range(1000)]
        tr = Trace.from_records(recs)
        n = sum(len(b) for b in attach_fv_streams(tr, no_infection(tr), BEN, MAL, 1.0, 1, 15))
        assert n == 15_000

    def test_fractional_rate(self):
        recs = [NetflowRecord(0.0, f"c{i:03d}", "s") for i in range(500)]
        tr = Trace.from_records(recs)
        n = sum(len(b) for b in attach_fv_streams(tr, no_infection(tr), BEN, MAL, 0.5, 1, 40))
        assert abs(n - 10_000) <= 5 * math.sqrt(20_000 * 0.25)

    def test_empty_corpus(self):
        tr = visits_trace()
        with pytest.raises(ValueError):
            next(attach_fv_streams(tr, no_infection(tr), np.zeros((0, 2)), MAL, 1.0, 1, 5))


def tiny_threshold(gamma=0.3, L=2, b=4):
    rng = np.random.default_rng(0)
    fp = rng.normal(-1, 1, size=(400, L))
    cfg = fit_edges(fp, b)
    return ShapeThreshold(gamma, build_reference(fp, cfg), 99.0, cfg)


def tiny_corpora():
    rng = np.random.default_rng(1)
    return rng.normal(-1, 1, size=(300, 2)), rng.normal(1, 1, size=(300, 2))


class TestRunDetection:
    def setup_method(self):
        self.trace = generate_trace(TraceConfig(12, 3, 30, 0.28), 21)
        assert 60 <= len(self.trace) <= 140
        self.ben, self.mal = tiny_corpora()
        self.thr = tiny_threshold()

    def _stream(self, tl, rate=3.0):
        return list(attach_fv_streams(self.trace, tl, self.ben, self.mal, rate, 5, 30))

    def test_matches_brute_force_replay(self):
        tl = simulate_infection(self.trace, AttackConfig("s00", (5, 10), 0.6, 2))
        assert tl.infected
        scorer = OracleFlipScorer(0.3, 0.1)
        part = StructuralPartition.per_server(self.trace.servers)
        for ntw in (NtwConfig(5, 1), NtwConfig(7, 3), NtwConfig.tumbling(6)):
            batches = self._stream(tl)
            log = []
            out = run_detection(batches, self.trace, tl, ntw, part, scorer, self.thr,
                                seed=4, min_fvs=20, min_alerts=5, log=log)
            fvs = []
            for b in batches:
                hit = scorer.decide(b.values, b.labels, ld_rng(4, b.second))
                fvs += [(self.trace.clients[c], t, v, h) for c, t, v, h in zip(b.clients, b.timestamps, b.values, hit)]
            expect = brute_replay(
                list(self.trace), fvs, part.partitions, int(ntw.window_len), int(ntw.stride), 30,
                tl.infected, lambda a: classify_neighborhood(np.array(a).reshape(-1, 2), self.thr.config, self.thr, 5),
                20,
            )
            got = [(w.window_start, w.window_end, w.partition, w.fv_count, w.infected, w.verdict) for w in log]
            assert got == expect
            hits = [e for (s, e, p, n, inf, v) in expect if v is not None and v.malicious and inf]
            fp = {s for (s, e, p, n, inf, v) in expect if v is not None and v.malicious and not inf}
            total = {s for (s, e, p, n, inf, v) in expect if v is not None}
            assert out.detection_time == (float(min(hits)) if hits else None)
            assert (out.fp_windows, out.windows_total) == (len(fp), len(total))
            if hits:
                assert out.infected_at_detection == sum(1 for t in tl.infected.values() if t < min(hits))

    def test_thread_count_independent(self):
        tl = simulate_infection(self.trace, AttackConfig("s00", (5, 10), 0.6, 2))
        part = StructuralPartition.per_server(self.trace.servers)
        outs = []
        for threads in (1, 2, 4):
            log = []
            out = run_detection(self._stream(tl), self.trace, tl, NtwConfig(5, 1), part,
                                OracleFlipScorer(0.3, 0.1), self.thr, seed=4, min_fvs=20,
                                min_alerts=5, threads=threads, log=log)
            outs.append((out, [(w.partition, w.verdict) for w in log]))
        assert outs[0] == outs[1] == outs[2]

    def test_saturated_attack_detected_in_first_window(self):
        # every client turns malicious at the compromise instant and every FV alerts
        n = len(self.trace.clients)
        tl = InfectionTimeline(8.0, {c: 8.0 for c in self.trace.clients}, np.full(n, 8.0))
        ntw = NtwConfig(4, 1)
        log = []
        out = run_detection(self._stream(tl, 20.0), self.trace, tl, ntw,
                            StructuralPartition.single(self.trace.servers), ConstantScorer(True),
                            tiny_threshold(gamma=1.0), seed=1, min_fvs=1, min_alerts=1, log=log)
        assert out.detected
        assert 8.0 < out.detection_time <= 8.0 + 4
        assert out.infected_at_detection == n
        assert out.fp_windows == 0
        full = [w for w in log if w.window_start == 8 and w.verdict is not None]
        assert full and all(w.verdict.malicious for w in full)

    def test_no_infection_false_positive_rate(self):
        rng = make_rng(3)
        from shapegd.shape import calibrate_from_corpus

        cal = rng.normal(-1, 1, size=(40_000, 2))
        scorer = OracleFlipScorer(0.3, 0.1)
        thr, _ = calibrate_from_corpus(cal, scorer.decide(cal, np.zeros(len(cal)), rng), 8, 99.0, rng,
                                       neighborhood_fvs=1000, n_neighborhoods=400)
        trace = generate_trace(TraceConfig(100, 3, 2000, 0.5), 8)
        tl = simulate_infection(trace, AttackConfig("s00", (10, 20), 0.0, 1))
        ben = rng.normal(-1, 1, size=(20_000, 2))
        # tumbling windows give independent neighborhoods
        out = run_detection(attach_fv_streams(trace, tl, ben, ben, 3.0, 2, 2000), trace, tl,
                            NtwConfig.tumbling(5), StructuralPartition.single(trace.servers), scorer, thr,
                            seed=9, min_fvs=1000, min_alerts=10)
        assert not out.detected
        n = out.windows_total
        assert n >= 300
        assert out.fp_windows / n <= 0.01 + 3 * math.sqrt(0.01 * 0.99 / n)

    def test_fractional_window_rejected(self):
        tl = no_infection(self.trace)
        with pytest.raises(ValueError):
            run_detection([], self.trace, tl, NtwConfig(2.5), StructuralPartition.single(self.trace.servers),
                          ConstantScorer(False), self.thr)


def small_scenario():
    ben, mal = tiny_corpora()
    return WaterholeScenario(TraceConfig(30, 3, 40, 0.3), ben, mal, OracleFlipScorer(0.3, 0.1),
                             tiny_threshold(), (5, 15), "s00", 2.0, 30, 5)


class TestSweep:
    def test_single_rep_equals_run(self):
        scn = small_scenario()
        st = SweepSetting("w5", NtwConfig(5, 1), "single", 0.5)
        (row,) = sweep(scn, [st], 1, seed=13)
        out, tl, _ = run_once(scn, st, row.seed)
        assert (row.detection_time, row.infected_at_detection, row.fp_windows, row.windows_total) == (
            out.detection_time, out.infected_at_detection, out.fp_windows, out.windows_total)
        assert row.compromise_time == tl.compromise_time

    def test_csv_deterministic(self, tmp_path):
        scn = small_scenario()
        settings = [SweepSetting("a", NtwConfig(5, 1)), SweepSetting("b", NtwConfig(10, 2), "per_server")]
        for name in ("x.csv", "y.csv"):
            write_sweep_csv(tmp_path / name, sweep(scn, settings, 2, seed=5), ["seed=5"])
        assert (tmp_path / "x.csv").read_bytes() == (tmp_path / "y.csv").read_bytes()
        rows = read_sweep_csv(tmp_path / "x.csv")
        assert [r.setting for r in rows] == ["a", "b", "a", "b"]
        summary = summarize_sweep(rows)
        assert [s["setting"] for s in summary] == ["a", "b"] and summary[0]["reps"] == 2

    def test_bad_args(self):
        with pytest.raises(ValueError):
            sweep(small_scenario(), [SweepSetting("a", NtwConfig(5))], 0, seed=1)
        with pytest.raises(ValueError):
            sweep(small_scenario(), [SweepSetting("a", NtwConfig(5))] * 2, 1, seed=1)
