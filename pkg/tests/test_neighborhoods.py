from collections import namedtuple

import numpy as np
import pytest

from shapegd.core import DataError, ProjectedFV
from shapegd.neighborhoods import (
    DomainLabels,
    DownloadEdge,
    Neighborhood,
    NtwConfig,
    StructuralPartition,
    form_downloader_neighborhoods,
    form_waterhole_neighborhoods,
    malicious_score,
    merge_groups,
    merge_neighborhoods,
    read_download_edges,
    write_download_edges,
)

from oracles import brute_downloader, brute_waterhole

Rec = namedtuple("Rec", "timestamp src dst")


def nb(id, members, start=0.0, end=10.0):
    return Neighborhood(id, frozenset(members), start, end)


class TestWaterhole:
    def test_single_partition(self):
        trace = [Rec(1, "a", "s1"), Rec(2, "b", "s2"), Rec(3, "a", "s2")]
        out = form_waterhole_neighborhoods(trace, NtwConfig(10), StructuralPartition.single({"s1", "s2"}), 0)
        assert [n.members for n in out] == [frozenset({"a", "b"})]

    def test_two_partitions(self):
        trace = [Rec(1, "a", "s1"), Rec(2, "b", "s2")]
        out = form_waterhole_neighborhoods(trace, NtwConfig(10), StructuralPartition.per_server({"s1", "s2"}), 0)
        assert [n.members for n in out] == [frozenset({"a"}), frozenset({"b"})]

    def test_half_open_window(self):
        trace = [Rec(0, "a", "s1"), Rec(9.999, "b", "s1"), Rec(10, "c", "s1"), Rec(-0.1, "d", "s1")]
        out = form_waterhole_neighborhoods(trace, NtwConfig(10), StructuralPartition.single({"s1"}), 0)
        assert out[0].members == frozenset({"a", "b"})
        assert out[0].window_end - out[0].window_start == 10

    def test_empty_partition_list(self):
        with pytest.raises(ValueError):
            form_waterhole_neighborhoods([], NtwConfig(5), StructuralPartition(()), 0)

    def test_partition_overlap_rejected(self):
        with pytest.raises(ValueError):
            StructuralPartition(({"s1", "s2"}, {"s2"}))

    def test_attaches_window_fvs(self):
        trace = [Rec(1, "a", "s1")]
        fvs = {"a": [ProjectedFV([1.0], "a", 0.5), ProjectedFV([2.0], "a", 12.0)]}
        out = form_waterhole_neighborhoods(trace, NtwConfig(10), StructuralPartition.single({"s1"}), 0, fvs)
        assert [f.coords[0] for f in out[0].alert_fvs] == [1.0]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(0, 200))
            trace = [Rec(float(rng.uniform(0, 30)), f"c{rng.integers(12)}", f"s{rng.integers(6)}") for _ in range(n)]
            servers = [f"s{i}" for i in range(6)]
            part = StructuralPartition.groups_of(servers, int(rng.integers(1, 7)))
            start, length = float(rng.uniform(0, 20)), float(rng.uniform(1, 15))
            got = [n.members for n in form_waterhole_neighborhoods(trace, NtwConfig(length), part, start)]
            assert got == brute_waterhole(trace, start, length, part.partitions)

    def test_deterministic(self):
        trace = [Rec(1, "a", "s1"), Rec(2, "b", "s2")]
        part = StructuralPartition.per_server({"s1", "s2"})
        assert form_waterhole_neighborhoods(trace, NtwConfig(5), part, 0) == form_waterhole_neighborhoods(
            trace, NtwConfig(5), part, 0
        )


def E(parent, child, domain, t=1.0, machine="m"):
    return DownloadEdge(machine, parent, child, domain, t)


class TestDownloader:
    def test_chain_closure(self):
        edges = [E("-", "f1", "bad.com"), E("f1", "f2", "bad.com"), E("f2", "f3", "bad.com")]
        out = form_downloader_neighborhoods(edges, lambda d: d == "bad.com", 0, 10)
        assert [n.members for n in out] == [frozenset({"f1", "f2", "f3"})]

    def test_benign_children_filtered(self):
        edges = [E("-", "f1", "bad.com"), E("f1", "c1", "good.com"), E("c1", "c2", "good.com")]
        out = form_downloader_neighborhoods(edges, lambda d: d == "bad.com", 0, 10)
        assert [n.members for n in out] == [frozenset({"f1"})]

    def test_descendant_touching_other_suspicious_domain_kept(self):
        edges = [E("-", "f1", "bad.com"), E("f1", "c1", "good.com"), E("c1", "c2", "evil.net")]
        out = form_downloader_neighborhoods(edges, lambda d: d in ("bad.com", "evil.net"), 0, 10)
        by_seed = {n.seed: n.members for n in out}
        # c1 touches evil.net through its own download of c2
        assert by_seed["domain:bad.com"] == frozenset({"f1", "c1", "c2"})

    def test_no_suspicious_domains(self):
        assert form_downloader_neighborhoods([E("-", "f1", "x.com")], lambda d: False, 0, 10) == []

    def test_window_filter(self):
        edges = [E("-", "f1", "bad.com", t=50.0)]
        assert form_downloader_neighborhoods(edges, lambda d: True, 0, 10) == []

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        domains = [f"d{i}.com" for i in range(5)]
        for _ in range(100):
            n_edges = int(rng.integers(0, 51))
            edges = []
            for _ in range(n_edges):
                parent = "-" if rng.random() < 0.2 else f"f{rng.integers(15)}"
                edges.append(E(parent, f"f{rng.integers(15)}", domains[rng.integers(5)], float(rng.uniform(0, 20))))
            bad = {d for d in domains if rng.random() < 0.4}
            start, length = float(rng.uniform(0, 10)), float(rng.uniform(2, 15))
            got = {n.seed.split(":", 1)[1]: n.members for n in form_downloader_neighborhoods(edges, bad.__contains__, start, length)}
            assert got == brute_downloader(edges, bad.__contains__, start, length)


class TestMaliciousScore:
    def test_ratios(self):
        n = nb("a", range(10))
        assert malicious_score(n, set()) == 0
        assert malicious_score(n, set(range(5))) == 0.5
        assert malicious_score(n, {i: True for i in range(10)}) == 1
        assert malicious_score(nb("e", []), {1}) == 0


class TestMerge:
    def test_hand_trace(self):
        a = nb("a", range(600))
        b = nb("b", range(1000, 1500))
        c = nb("c", range(2000, 2300))
        alerts = set(range(540)) | set(range(1000, 1250)) | set(range(2000, 2030))
        out = merge_neighborhoods([c, a, b], 1000, alerts)
        assert len(out) == 1 and len(out[0]) == 1400

    def test_large_unchanged(self):
        a = nb("a", range(2000))
        assert merge_neighborhoods([a], 1000) == [a]

    def test_all_large_sorted_by_score(self):
        a, b = nb("a", range(5)), nb("b", range(10, 15))
        out = merge_neighborhoods([a, b], 3, alerts={10})
        assert [n.id for n in out] == ["b", "a"]

    def test_ties_by_id(self):
        a, b = nb("b", range(5)), nb("a", range(10, 15))
        assert [n.id for n in merge_neighborhoods([a, b], 1)] == ["a", "b"]

    def test_duplicates_deduplicated(self):
        a, b = nb("a", range(6)), nb("b", range(3, 9))
        out = merge_neighborhoods([a, b], 9)
        assert len(out) == 1 and len(out[0]) == 9

    def test_alert_fvs_concatenated(self):
        f1, f2 = ProjectedFV([1.0]), ProjectedFV([2.0])
        a = Neighborhood("a", frozenset({1}), 0, 1, alert_fvs=(f1,))
        b = Neighborhood("b", frozenset({2}), 0, 1, alert_fvs=(f2,))
        (m,) = merge_neighborhoods([a, b], 2)
        assert m.alert_fvs == (f1, f2)

    def test_bad_min(self):
        with pytest.raises(ValueError):
            merge_neighborhoods([], 0)

    def test_floor_and_order_properties(self):
        rng = np.random.default_rng(7)
        for trial in range(500):
            k = int(rng.integers(1, 12))
            nbds, next_id = [], 0
            for i in range(k):
                size = int(rng.integers(1, 40))
                nbds.append(nb(f"n{i:02d}", range(next_id, next_id + size)))
                next_id += size
            alerts = set(np.flatnonzero(rng.random(next_id) < rng.random()).tolist())
            min_size = int(rng.integers(1, 120))
            groups = merge_groups(nbds, min_size, alerts)
            merged = merge_neighborhoods(nbds, min_size, alerts)
            total = next_id
            if total < min_size:
                assert len(merged) == 1
            else:
                assert all(len(m) >= min_size for m in merged)
            maxima = [max(malicious_score(n, alerts) for n in g) for g in groups]
            assert all(x >= y for x, y in zip(maxima, maxima[1:]))
            assert sum(len(m) for m in merged) == total


class TestFiles:
    def test_edges_round_trip(self, tmp_path):
        edges = [E("-", "f1", "a.com", 1.5), E("f1", "f2", "b.com", 2.0, machine="m2")]
        write_download_edges(tmp_path / "e.csv", edges)
        assert read_download_edges(tmp_path / "e.csv") == edges

    def test_edges_malformed_line_number(self, tmp_path):
        (tmp_path / "e.csv").write_text("m,-,f1,a.com,1\nm,f1,f2,b.com\n")
        with pytest.raises(DataError) as err:
            read_download_edges(tmp_path / "e.csv")
        assert err.value.line == 2

    def test_domain_labels(self, tmp_path):
        (tmp_path / "d.csv").write_text("domain,suspicious_flag\nbad.com,1\ngood.com,0\n")
        dnc = DomainLabels.read(tmp_path / "d.csv")
        assert dnc("bad.com") and not dnc("good.com") and not dnc("unknown.org")
        (tmp_path / "d.csv").write_text("bad.com,maybe\n")
        with pytest.raises(DataError):
            DomainLabels.read(tmp_path / "d.csv")
