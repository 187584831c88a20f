import numpy as np
import pytest

from distortlab.consensus import (
    AnnotatedSample,
    DistortionType,
    PolygonAnnotation,
    annotator_mask,
    consensus_mask,
    consensus_types,
    consolidate,
    dataset_stats,
)
from distortlab.errors import DimensionMismatchError
from distortlab.masks import BinaryMask, Polygon, rasterize_polygon

from oracles import majority_vote


def ann(vertices, dtype=DistortionType.PROLIFERATION, who="a0"):
    return PolygonAnnotation(polygon=Polygon(vertices), type=dtype, annotator_id=who)


def square(x0, y0, x1, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


class TestConsensusMask:
    def test_unanimous(self):
        rng = np.random.default_rng(0)
        m = BinaryMask(rng.random((6, 6)) < 0.5)
        assert consensus_mask((m, m, m)) == m

    def test_single_voice_dropped(self):
        m = BinaryMask(np.ones((4, 4), dtype=bool))
        empty = BinaryMask.zeros(4, 4)
        assert consensus_mask((m, empty, empty)).empty

    def test_two_of_three_kept(self):
        a = BinaryMask.zeros(3, 3)
        b = BinaryMask.zeros(3, 3)
        c = BinaryMask.zeros(3, 3)
        a.bits[1, 2] = True
        b.bits[1, 2] = True
        out = consensus_mask((a, b, c))
        assert out.bits[1, 2] and out.count == 1

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            consensus_mask((BinaryMask.zeros(3, 3), BinaryMask.zeros(4, 3), BinaryMask.zeros(3, 3)))

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            w, h = int(rng.integers(1, 17)), int(rng.integers(1, 17))
            masks = [rng.random((h, w)) < 0.5 for _ in range(3)]
            got = consensus_mask(tuple(BinaryMask(m) for m in masks))
            assert np.array_equal(got.bits, majority_vote(*masks))

    def test_monotone_in_annotator_growth(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            masks = [rng.random((8, 8)) < 0.4 for _ in range(3)]
            base = consensus_mask(tuple(BinaryMask(m) for m in masks))
            grown = masks[0] | (rng.random((8, 8)) < 0.3)
            bigger = consensus_mask((BinaryMask(grown), BinaryMask(masks[1]), BinaryMask(masks[2])))
            assert np.all(bigger.bits | ~base.bits)


class TestAnnotatorMask:
    def test_empty(self):
        assert annotator_mask([], 5, 5).empty

    def test_single_polygon(self):
        a = ann(square(1, 1, 4, 4))
        assert annotator_mask([a], 6, 6) == rasterize_polygon(a.polygon, 6, 6)

    def test_union_bounded_by_sum(self):
        a = ann(square(0, 0, 4, 4))
        b = ann(square(2, 2, 6, 6))
        union = annotator_mask([a, b], 8, 8)
        ra = rasterize_polygon(a.polygon, 8, 8)
        rb = rasterize_polygon(b.polygon, 8, 8)
        assert np.array_equal(union.bits, ra.bits | rb.bits)
        assert union.count <= ra.count + rb.count


class TestConsensusTypes:
    def _sets(self, *types, offsets=((0, 0), (0, 0), (0, 0))):
        sets = []
        for dtype, (dx, dy) in zip(types, offsets):
            if dtype is None:
                sets.append([])
            else:
                sets.append([ann(square(2 + dx, 2 + dy, 7 + dx, 7 + dy), dtype)])
        return tuple(sets)

    def test_all_agree(self):
        sets = self._sets(*(DistortionType.PROLIFERATION,) * 3)
        consensus, typed = consolidate(sets, 10, 10)
        assert len(typed) == 1
        assert typed[0][1] is DistortionType.PROLIFERATION

    def test_conflicting_types_uncertain(self):
        sets = self._sets(
            DistortionType.FUSION, DistortionType.FUSION, DistortionType.DEFORMATION
        )
        _, typed = consolidate(sets, 10, 10)
        assert typed[0][1] is DistortionType.UNCERTAIN

    def test_missing_voice_uncertain(self):
        # two annotators agree, third marked nothing there: still Uncertain
        sets = self._sets(DistortionType.ABSENCE, DistortionType.ABSENCE, None)
        _, typed = consolidate(sets, 10, 10)
        assert len(typed) == 1
        assert typed[0][1] is DistortionType.UNCERTAIN

    def test_type_backed_by_two_annotators(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            types = [
                DistortionType(rng.choice([t.value for t in DistortionType if t is not DistortionType.UNCERTAIN]))
                for _ in range(3)
            ]
            sets = self._sets(*types)
            consensus, typed = consolidate(sets, 10, 10)
            for region, dtype in typed:
                if dtype is DistortionType.UNCERTAIN:
                    continue
                assert sum(1 for t in types if t is dtype) >= 2

    def test_typed_regions_partition_consensus(self):
        sets = (
            [ann(square(0, 0, 3, 3), DistortionType.FUSION),
             ann(square(6, 6, 9, 9), DistortionType.ABSENCE)],
            [ann(square(0, 0, 3, 3), DistortionType.FUSION),
             ann(square(6, 6, 9, 9), DistortionType.ABSENCE)],
            [ann(square(0, 0, 3, 3), DistortionType.FUSION)],
        )
        consensus, typed = consolidate(sets, 10, 10)
        total = sum(region.pixel_count for region, _ in typed)
        assert total == consensus.count
        assert {t for _, t in typed} == {DistortionType.FUSION, DistortionType.UNCERTAIN}


class TestDatasetStats:
    def _sample(self, sid, consensus, typed=()):
        return AnnotatedSample(
            sample_id=sid,
            image_ref=f"{sid}.png",
            annotation_sets=([], [], []),
            consensus_mask=consensus,
            typed_regions=list(typed),
            split="train",
        )

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            dataset_stats([])

    def test_all_negative(self):
        samples = [self._sample(f"s{i}", BinaryMask.zeros(10, 10)) for i in range(4)]
        stats = dataset_stats(samples)
        assert stats.positive_rate == 0.0
        assert stats.area_bin_counts.sum() == 0

    def test_hand_counted_histogram(self):
        def mask_with_fraction(frac):
            bits = np.zeros((10, 10), dtype=bool)
            bits.flat[: int(round(frac * 100))] = True
            return BinaryMask(bits)

        samples = [
            self._sample("s0", BinaryMask.zeros(10, 10)),
            self._sample("s1", mask_with_fraction(0.1)),
            self._sample("s2", mask_with_fraction(0.1)),
            self._sample("s3", mask_with_fraction(0.5)),
        ]
        stats = dataset_stats(samples, bin_edges=np.array([0.0, 0.2, 1.0]))
        assert stats.positive_rate == pytest.approx(0.75)
        assert list(stats.area_bin_counts) == [2, 1]

    def test_type_distribution_sums_to_one(self):
        from distortlab.masks import connected_components

        bits = np.zeros((6, 6), dtype=bool)
        bits[0:2, 0:2] = True
        region = connected_components(BinaryMask(bits))[0]
        samples = [
            self._sample("s0", BinaryMask(bits), [(region, DistortionType.FUSION)]),
            self._sample("s1", BinaryMask(bits), [(region, DistortionType.UNCERTAIN)]),
        ]
        stats = dataset_stats(samples)
        assert sum(stats.type_distribution.values()) == pytest.approx(1.0, abs=1e-9)
        assert stats.type_distribution[DistortionType.FUSION] == pytest.approx(0.5)
