import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conformrec.data import (
    CONFORMITY_LABEL,
    INTEREST_LABEL,
    EmptyDatasetError,
    Interaction,
    ParseError,
    SyntheticSpec,
    build_sequences,
    ingest,
    leave_one_out,
    prepare_dataset,
    shift_to_internal,
    synthesize,
    write_tsv,
)


def make_seqs(item_lists, t_max=10):
    inter = []
    for uid, items in enumerate(item_lists):
        for ts, item in enumerate(items):
            inter.append(Interaction(uid, item, ts))
    return build_sequences(inter, t_max)


class TestIngest:
    def test_basic_parse(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("a\tx\t1\na\ty\t2\nb\tx\t5\n")
        interactions, maps = ingest(p)
        assert len(interactions) == 3
        assert len(maps.user_to_index) == 2
        assert len(maps.item_to_index) == 2

    def test_missing_field_names_line(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("a\tx\n")
        with pytest.raises(ParseError, match="1"):
            ingest(p)

    def test_bad_timestamp(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("a\tx\tnotanumber\n")
        with pytest.raises(ParseError):
            ingest(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("")
        with pytest.raises(EmptyDatasetError):
            ingest(p)

    def test_duplicate_rows_kept_in_order(self, tmp_path):
        # oracle: line-by-line parse of the same file
        p = tmp_path / "d.tsv"
        lines = ["a\tx\t3", "a\tx\t3", "b\ty\t1"]
        p.write_text("\n".join(lines) + "\n")
        interactions, maps = ingest(p)
        expected = []
        for line in lines:
            u, i, t = line.split("\t")
            expected.append((maps.user_to_index[u], maps.item_to_index[i], int(t)))
        assert [(x.user_id, x.item_id, x.timestamp) for x in interactions] == expected

    def test_numeric_tokens_sort_numerically(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("1\t10\t1\n1\t2\t2\n")
        _, maps = ingest(p)
        assert maps.item_to_index == {"2": 0, "10": 1}

    def test_reuse_maps_rejects_unknown_token(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("a\tx\t1\n")
        _, maps = ingest(p)
        q = tmp_path / "e.tsv"
        q.write_text("a\tz\t1\n")
        with pytest.raises(ParseError):
            ingest(q, id_maps=maps)


class TestBuildSequences:
    def test_padding(self):
        seqs = make_seqs([[5, 7, 9]], t_max=5)
        assert seqs[0].padded == [5, 7, 9, 0, 0]
        assert seqs[0].true_length == 3
        assert seqs[0].items == [5, 7, 9]

    def test_truncation_keeps_most_recent(self):
        seqs = make_seqs([[1, 2, 3, 4, 5, 6, 7]], t_max=5)
        assert seqs[0].items == [3, 4, 5, 6, 7]
        assert seqs[0].source_length == 7

    def test_equal_timestamp_tiebreak(self):
        # oracle: stable sort on (timestamp, item id)
        inter = [Interaction(0, 4, 10), Interaction(0, 2, 10)]
        seqs = build_sequences(inter, t_max=5)
        assert seqs[0].items == [2, 4]

    def test_rejects_pad_id(self):
        with pytest.raises(ValueError):
            build_sequences([Interaction(0, 0, 1)], t_max=5)

    def test_rejects_tiny_t_max(self):
        with pytest.raises(ValueError):
            build_sequences([Interaction(0, 1, 1)], t_max=1)


class TestLeaveOneOut:
    def test_split_assignment(self):
        seqs = make_seqs([[11, 12, 13, 14]])
        split = leave_one_out(seqs)
        assert split.train_sequences[0].items == [11, 12]
        assert split.valid_targets[0].history == [11, 12]
        assert split.valid_targets[0].target == 13
        assert split.test_targets[0].history == [11, 12, 13]
        assert split.test_targets[0].target == 14

    def test_short_user_dropped(self):
        seqs = make_seqs([[11, 12]])
        split = leave_one_out(seqs)
        assert split.user_count == 0
        assert split.drop_report["dropped_users"] == [0]

    def test_synthetic_users_count(self):
        # oracle: one test target per surviving user
        spec = SyntheticSpec(100, 50, 6, 0.3, 1.2, seed=3)
        interactions, _ = synthesize(spec)
        split = prepare_dataset(interactions, t_max=20)
        assert len(split.test_targets) == 100
        assert len(split.valid_targets) == 100

    def test_pad_never_a_target(self):
        spec = SyntheticSpec(50, 40, 8, 0.5, 1.1, seed=5)
        interactions, _ = synthesize(spec)
        split = prepare_dataset(interactions, t_max=10)
        for t in split.valid_targets + split.test_targets:
            assert t.target != 0
            assert 0 not in t.history


class TestSynthesize:
    def test_zero_conformity_all_interest(self):
        spec = SyntheticSpec(20, 50, 5, 0.0, 1.1, seed=1)
        _, labels = synthesize(spec)
        assert set(labels) == {INTEREST_LABEL}

    def test_full_conformity_zipf_slope(self):
        # oracle: rank-frequency regression on the emitted log
        spec = SyntheticSpec(1000, 500, 20, 1.0, 1.1, seed=7)
        interactions, labels = synthesize(spec)
        assert set(labels) == {CONFORMITY_LABEL}
        counts = np.bincount([it.item_id for it in interactions], minlength=500)
        head = np.sort(counts)[::-1][:100]
        ranks = np.arange(1, len(head) + 1)
        slope = np.polyfit(np.log(ranks), np.log(head), 1)[0]
        assert abs(slope - (-1.1)) <= 0.11

    def test_determinism(self, tmp_path):
        spec = SyntheticSpec(30, 40, 6, 0.4, 1.3, seed=11)
        a, la = synthesize(spec)
        b, lb = synthesize(spec)
        assert a == b and la == lb
        pa, pb = tmp_path / "a.tsv", tmp_path / "b.tsv"
        write_tsv(a, pa)
        write_tsv(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            synthesize(SyntheticSpec(0, 10, 5, 0.5, 1.1, seed=0))
        with pytest.raises(ValueError):
            synthesize(SyntheticSpec(10, 10, 5, 1.5, 1.1, seed=0))


class TestPipelineInvariants:
    def test_round_trip(self, tmp_path):
        spec = SyntheticSpec(60, 80, 7, 0.5, 1.2, seed=9)
        raw, _ = synthesize(spec)
        p1 = tmp_path / "one.tsv"
        write_tsv(raw, p1)
        inter1, maps1 = ingest(p1)
        split1 = prepare_dataset(inter1, t_max=12)
        p2 = tmp_path / "two.tsv"
        write_tsv(inter1, p2)
        inter2, maps2 = ingest(p2)
        split2 = prepare_dataset(inter2, t_max=12)
        assert inter1 == inter2
        assert split1.catalog_size == split2.catalog_size
        assert [(s.user_id, s.items) for s in split1.train_sequences] == [
            (s.user_id, s.items) for s in split2.train_sequences
        ]
        assert [(t.user_id, t.target) for t in split1.test_targets] == [
            (t.user_id, t.target) for t in split2.test_targets
        ]

    @settings(max_examples=30, deadline=None)
    @given(
        st.lists(
            st.lists(st.integers(min_value=0, max_value=20), min_size=1, max_size=15),
            min_size=1,
            max_size=8,
        ),
        st.integers(min_value=2, max_value=12),
    )
    def test_length_conservation(self, item_lists, t_max):
        inter = []
        for uid, items in enumerate(item_lists):
            for ts, item in enumerate(items):
                inter.append(Interaction(uid, item, ts))
        seqs = build_sequences(shift_to_internal(inter), t_max)
        assert sum(s.true_length for s in seqs) == sum(
            min(len(items), t_max) for items in item_lists
        )
        for s in seqs:
            assert 1 <= s.true_length <= t_max
            assert all(p == 0 for p in s.padded[s.true_length :])
            assert 0 not in s.items
