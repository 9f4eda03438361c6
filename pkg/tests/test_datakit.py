import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from unsupinf.datakit import (
    ClusterSpec,
    Dataset,
    circle_centers,
    generate_clusters,
    generate_uniform,
    inject_outliers,
    load_csv,
    load_dataset,
    load_idx,
    load_raw,
    save_csv,
    save_idx,
    save_raw,
    six_cluster_spec,
)
from unsupinf.errors import DataLengthError, FormatError, ParseError, ValidationError


class TestDataset:
    def test_arrays_are_read_only_copies(self):
        src = np.zeros((3, 2))
        ds = Dataset(src)
        src[0, 0] = 5.0
        assert ds.data[0, 0] == 0.0
        with pytest.raises(ValueError):
            ds.data[0, 0] = 1.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"data": np.zeros((0, 2))},
            {"data": np.array([[np.nan, 1.0]])},
            {"data": np.zeros((3, 2)), "labels": [0, 1]},
            {"data": np.zeros((3, 2)), "labels": [0, -1, 1]},
            {"data": np.zeros((3, 2)), "labels": [0.5, 1, 1]},
            {"data": np.zeros((3, 2)), "is_extra": [True]},
            {"data": np.zeros((2, 2, 2))},
        ],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            Dataset(**kwargs)

    def test_without_drops_one_row(self):
        ds = Dataset(np.arange(8.0).reshape(4, 2), [0, 0, 1, 1], [False, True, False, False])
        loo = ds.without(1)
        assert loo.n == 3
        assert np.array_equal(loo.data, [[0, 1], [4, 5], [6, 7]])
        assert np.array_equal(loo.labels, [0, 1, 1])
        assert not loo.is_extra.any()

    def test_fingerprint_tracks_content(self):
        a = Dataset(np.ones((3, 2)))
        b = Dataset(np.ones((3, 2)), name="other")
        c = Dataset(np.ones((3, 2)), labels=[0, 0, 1])
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != c.fingerprint()

    def test_equality(self):
        assert Dataset(np.ones((2, 2))) == Dataset(np.ones((2, 2)))
        assert Dataset(np.ones((2, 2))) != Dataset(np.ones((2, 2)), labels=[0, 1])


class TestGenerators:
    def test_six_cluster_layout(self):
        spec = six_cluster_spec()
        assert spec.sizes == (25, 15, 20, 25, 10, 5)
        assert spec.stds == (0.5, 0.5, 0.4, 0.4, 0.5, 1.0)
        ds = generate_clusters(spec)
        assert ds.n == 100 and ds.d == 2
        assert np.array_equal(np.bincount(ds.labels), spec.sizes)

    def test_circle_centers_lie_on_circle(self):
        c = np.array(circle_centers(6, 5.0))
        assert np.allclose(np.linalg.norm(c, axis=1), 5.0, rtol=0, atol=1e-12)
        assert np.allclose(c[0], [5.0, 0.0])

    def test_cluster_moments(self):
        spec = ClusterSpec([4000, 4000], [0.5, 2.0], [(0.0, 0.0), (10.0, -3.0)], seed=4)
        ds = generate_clusters(spec)
        for k, (std, center) in enumerate(zip(spec.stds, spec.centers)):
            pts = ds.data[ds.labels == k]
            # 5 standard errors on the mean and the variance
            assert np.all(np.abs(pts.mean(axis=0) - center) < 5 * std / np.sqrt(len(pts)))
            assert abs(pts.var(axis=0).mean() / std**2 - 1) < 5 * np.sqrt(2 / pts.size)

    def test_seeded(self):
        a = generate_clusters(six_cluster_spec(1))
        b = generate_clusters(six_cluster_spec(1))
        c = generate_clusters(six_cluster_spec(2))
        assert a == b and a != c

    def test_cluster_draws_do_not_depend_on_other_clusters(self):
        # cluster k uses its own stream, so resizing cluster 0 leaves cluster 1 alone
        a = generate_clusters(ClusterSpec([5, 7], [1, 1], [(0, 0), (9, 9)], 3))
        b = generate_clusters(ClusterSpec([11, 7], [1, 1], [(0, 0), (9, 9)], 3))
        assert np.array_equal(a.data[a.labels == 1], b.data[b.labels == 1])

    def test_uniform_bounds(self):
        ds = generate_uniform(500, 3, -8, 8, seed=0)
        assert ds.data.min() >= -8 and ds.data.max() < 8
        with pytest.raises(ValidationError):
            generate_uniform(5, 2, 1, 1, 0)

    @pytest.mark.parametrize(
        "sizes,stds,centers",
        [([], [], []), ([0], [1], [(0,)]), ([2], [0], [(0,)]), ([2, 2], [1, 1], [(0,), (0, 1)])],
    )
    def test_spec_validation(self, sizes, stds, centers):
        with pytest.raises(ValidationError):
            ClusterSpec(sizes, stds, centers)


class TestInjection:
    def test_mask_and_rows(self):
        base = generate_clusters(six_cluster_spec(0))
        extra = generate_uniform(30, 2, -8, 8, 1)
        mixed = inject_outliers(base, extra, seed=5)
        assert mixed.n == 130 and mixed.is_extra.sum() == 30
        assert np.array_equal(np.sort(mixed.data[mixed.is_extra], axis=0), np.sort(extra.data, axis=0))
        assert np.array_equal(np.sort(mixed.data[~mixed.is_extra], axis=0), np.sort(base.data, axis=0))
        # the extra set is unlabeled, so labels are dropped
        assert mixed.labels is None

    def test_labels_kept_when_both_labeled(self):
        a = Dataset(np.zeros((3, 1)), [0, 0, 0])
        b = Dataset(np.ones((2, 1)), [1, 1])
        mixed = inject_outliers(a, b, 0)
        assert np.array_equal(mixed.labels[mixed.is_extra], [1, 1])

    def test_seeded_shuffle(self):
        base = Dataset(np.arange(20.0)[:, None])
        extra = Dataset(np.arange(100.0, 105.0)[:, None])
        assert inject_outliers(base, extra, 1) == inject_outliers(base, extra, 1)
        assert inject_outliers(base, extra, 1) != inject_outliers(base, extra, 2)

    def test_empty_extra(self):
        base = Dataset(np.arange(4.0)[:, None])
        mixed = inject_outliers(base, None, 0)
        assert np.array_equal(mixed.data, base.data) and not mixed.is_extra.any()

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            inject_outliers(Dataset(np.zeros((2, 2))), Dataset(np.zeros((2, 3))), 0)


class TestIdx:
    def test_round_trip_scales_pixels(self, tmp_path):
        imgs = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4) * 10
        save_idx(imgs, tmp_path / "a.idx")
        ds = load_idx(tmp_path / "a.idx")
        assert ds.data.shape == (2, 12)
        assert np.array_equal(ds.data, imgs.reshape(2, 12) / 255.0)

    def test_hand_built_file(self, tmp_path):
        raw = struct.pack(">IIII", 0x803, 1, 1, 2) + bytes([0, 255])
        (tmp_path / "h.idx").write_bytes(raw)
        assert np.array_equal(load_idx(tmp_path / "h.idx").data, [[0.0, 1.0]])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "b.idx").write_bytes(struct.pack(">IIII", 0x801, 1, 1, 1) + b"\0")
        with pytest.raises(FormatError):
            load_idx(tmp_path / "b.idx")

    def test_truncated_payload(self, tmp_path):
        (tmp_path / "t.idx").write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + b"\0" * 7)
        with pytest.raises(DataLengthError):
            load_idx(tmp_path / "t.idx")

    def test_zero_dimension(self, tmp_path):
        (tmp_path / "z.idx").write_bytes(struct.pack(">IIII", 0x803, 0, 2, 2))
        with pytest.raises(ValidationError):
            load_idx(tmp_path / "z.idx")


class TestCsv:
    def test_round_trip_bitwise(self, tmp_path):
        r = np.random.default_rng(0)
        ds = Dataset(r.normal(size=(10, 3)) * 1e-7, r.integers(0, 3, 10), r.random(10) < 0.3, name="x")
        save_csv(ds, tmp_path / "x.csv")
        assert load_csv(tmp_path / "x.csv") == ds

    def test_header_layout(self, tmp_path):
        save_csv(Dataset(np.zeros((1, 2)), [0], [True]), tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().splitlines()[0] == "x0,x1,label,is_extra"

    def test_headerless(self, tmp_path):
        (tmp_path / "n.csv").write_text("1,2\n3,4\n")
        assert np.array_equal(load_csv(tmp_path / "n.csv", header=False).data, [[1, 2], [3, 4]])

    def test_parse_error_names_row(self, tmp_path):
        (tmp_path / "e.csv").write_text("x0,x1\n1,2\n3,oops\n")
        with pytest.raises(ParseError, match="row 2") as err:
            load_csv(tmp_path / "e.csv")
        assert err.value.row == 2

    def test_ragged_row(self, tmp_path):
        (tmp_path / "r.csv").write_text("x0,x1\n1,2\n3\n")
        with pytest.raises(ParseError, match="row 2"):
            load_csv(tmp_path / "r.csv")

    def test_no_rows(self, tmp_path):
        (tmp_path / "e.csv").write_text("x0,x1\n")
        with pytest.raises(ValidationError):
            load_csv(tmp_path / "e.csv")

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)), elements=st.floats(-1e300, 1e300)))
    def test_round_trip_property(self, tmp_path_factory, data):
        path = tmp_path_factory.mktemp("csv") / "p.csv"
        ds = Dataset(data, name="p")
        save_csv(ds, path)
        assert load_csv(path) == ds


class TestRaw:
    def test_round_trip_float32(self, tmp_path):
        ds = Dataset(np.array([[0.1, 2.5], [-3.0, 1e-3]]))
        save_raw(ds, tmp_path / "r.bin")
        back = load_raw(tmp_path / "r.bin")
        assert np.array_equal(back.data, ds.data.astype(np.float32).astype(np.float64))

    def test_length_mismatch(self, tmp_path):
        (tmp_path / "r.bin").write_bytes(b"INFL" + struct.pack("<II", 2, 2) + b"\0" * 4 + b"\0" * 12)
        with pytest.raises(DataLengthError):
            load_raw(tmp_path / "r.bin")

    def test_dispatch(self, tmp_path):
        ds = Dataset(np.array([[1.0, 2.0]]))
        save_raw(ds, tmp_path / "a")
        save_csv(ds, tmp_path / "b")
        save_idx(np.zeros((1, 1, 2), np.uint8), tmp_path / "c")
        assert load_dataset(tmp_path / "a").data.tolist() == [[1.0, 2.0]]
        assert load_dataset(tmp_path / "b").data.tolist() == [[1.0, 2.0]]
        assert load_dataset(tmp_path / "c").data.tolist() == [[0.0, 0.0]]
