import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from basinscope.dataops import domain_spec, generate
from basinscope.errors import DomainError
from basinscope.model import TINY4, ParamVector, init_random
from basinscope.rng import RngStream, gaussian
from basinscope.similarity import (
    class_size_correlation,
    linear_cka,
    linear_cka_flagged,
    mistake_ratios,
    mistake_table,
    param_l2,
    similarity_report,
)
from basinscope.trainer import Checkpoint


def rand_acts(n, p, seed):
    return gaussian(RngStream(seed, 40), n * p, 1.0).reshape(n, p)


def gram_cka_oracle(x, y):
    """Independent Gram-matrix formulation: tr(Kx Ky)/sqrt(tr Kx^2 tr Ky^2)."""
    x = x - x.mean(axis=0)
    y = y - y.mean(axis=0)
    kx = x @ x.T
    ky = y @ y.T
    return float(np.trace(kx @ ky) / np.sqrt(np.trace(kx @ kx) * np.trace(ky @ ky)))


def pearson_oracle(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xd, yd = x - x.mean(), y - y.mean()
    return float((xd * yd).sum() / np.sqrt((xd * xd).sum() * (yd * yd).sum()))


class TestLinearCKA:
    def test_self_similarity_is_one(self):
        x = rand_acts(20, 5, 1)
        assert linear_cka(x, x) == pytest.approx(1.0, abs=1e-10)

    def test_scale_and_orthogonal_invariance(self):
        x = rand_acts(24, 6, 2)
        q, _ = np.linalg.qr(rand_acts(6, 6, 3))
        y = 3.7 * (x @ q)
        assert linear_cka(x, y) == pytest.approx(1.0, abs=1e-10)

    def test_matches_gram_oracle(self):
        x = rand_acts(20, 5, 4)
        y = rand_acts(20, 7, 5)
        assert linear_cka(x, y) == pytest.approx(gram_cka_oracle(x, y), abs=1e-6)

    def test_symmetry(self):
        x = rand_acts(16, 4, 6)
        y = rand_acts(16, 9, 7)
        assert linear_cka(x, y) == pytest.approx(linear_cka(y, x), abs=1e-10)

    def test_range(self):
        for seed in range(5):
            x = rand_acts(15, 3, 10 + seed)
            y = rand_acts(15, 4, 20 + seed)
            v = linear_cka(x, y)
            assert 0.0 <= v <= 1.0 + 1e-8

    def test_zero_input_flagged(self):
        x = np.ones((10, 3))  # centered -> all zero
        y = rand_acts(10, 3, 8)
        value, degenerate = linear_cka_flagged(x, y)
        assert value == 0.0 and degenerate

    def test_length_mismatch_rejected(self):
        with pytest.raises(DomainError):
            linear_cka(rand_acts(10, 3, 9), rand_acts(11, 3, 9))


class TestParamL2:
    def test_identical_is_zero(self):
        a = init_random(TINY4, RngStream(1))
        per, total = param_l2(a, a)
        assert total == 0.0
        assert all(v == 0.0 for v in per.values())

    def test_pythagoras_over_modules(self):
        a = init_random(TINY4, RngStream(2))
        b = init_random(TINY4, RngStream(3))
        per, total = param_l2(a, b)
        assert total == pytest.approx(np.sqrt(sum(v * v for v in per.values())), abs=1e-6)
        assert total == pytest.approx(np.linalg.norm(a.values.astype(np.float64) - b.values.astype(np.float64)), rel=1e-6)

    def test_hand_example_3_4_5(self):
        index = (
            type(init_random(TINY4, RngStream(1)).index[0])("m1.weight", 0, 2, (2,)),
            type(init_random(TINY4, RngStream(1)).index[0])("m2.weight", 2, 1, (1,)),
        )
        a = ParamVector(np.array([0.0, 0.0, 0.0]), index)
        b = ParamVector(np.array([3.0, 4.0, 12.0]), index)
        per, total = param_l2(a, b)
        assert per == {"m1": 5.0, "m2": 12.0}
        assert total == 13.0

    def test_index_mismatch_rejected(self):
        from basinscope.model import ArchDescriptor

        small = ArchDescriptor((8, 8, 3), ((4, 3, 1),), (8,), 10)
        with pytest.raises(DomainError):
            param_l2(init_random(TINY4, RngStream(4)), init_random(small, RngStream(4)))


class TestMistakeTable:
    def test_paper_table3_class1_ratios(self):
        # printed counts reproduce the printed ratios to 4 decimals
        r1, r2, flagged = mistake_ratios(g1=645, g2=832, common=3597)
        assert not flagged
        assert abs(r1 - 0.1878) < 1e-4
        assert abs(r2 - 0.1520) < 1e-4

    def test_paper_table5_swapped_orientation(self):
        r1, r2, _ = mistake_ratios(g1=521, g2=2940, common=3263)
        # swapped-orientation columns carry the other convention
        r1s, r2s, _ = mistake_ratios(g1=2940, g2=521, common=3263)
        assert abs(r1s - 0.1376) < 1e-4
        assert abs(r2s - 0.4739) < 1e-4
        assert abs(r1 - 0.4739) < 1e-4 and abs(r2 - 0.1376) < 1e-4

    def test_identical_predictions(self):
        labels = np.arange(10) % 3
        preds = labels.copy()
        preds[:2] = (preds[:2] + 1) % 3  # both models make the same mistakes
        table = mistake_table(preds, preds, labels)
        row = table.row("overall")
        assert row.g1 == row.g2 == 0
        assert row.r1 == row.r2 == 0.0

    def test_all_correct_vs_all_wrong_boundary(self):
        labels = np.zeros(8, dtype=int)
        p1 = labels.copy()
        p2 = labels + 1
        row = mistake_table(p1, p2, labels).row("overall")
        assert row.g1 == 8 and row.g2 == 0 and row.common == 0
        assert row.r1 == 0.0 and row.zero_denominator
        assert row.r2 == 1.0

    def test_partition_identity(self):
        rng = RngStream(9)
        labels = np.array([rng.randint_below(5) for _ in range(200)])
        p1 = np.array([rng.randint_below(5) for _ in range(200)])
        p2 = np.array([rng.randint_below(5) for _ in range(200)])
        row = mistake_table(p1, p2, labels).row("overall")
        both_correct = int(np.sum((p1 == labels) & (p2 == labels)))
        assert row.g1 + row.g2 + row.common + both_correct == 200

    def test_per_class_rows(self):
        labels = np.array([0, 0, 1, 1, 2, 2])
        p1 = np.array([0, 1, 1, 1, 0, 2])
        p2 = np.array([0, 0, 2, 1, 2, 0])
        table = mistake_table(p1, p2, labels, group_by="class")
        assert [r.group for r in table.rows] == ["0", "1", "2"]
        assert table.row("0").g2 == 1  # second model alone got index 1 right

    def test_length_mismatch_rejected(self):
        with pytest.raises(DomainError):
            mistake_table([0, 1], [0], [0, 1])


class TestClassSizeCorrelation:
    def test_identical_vectors_r_one(self):
        sizes = np.array([10.0, 20.0, 30.0, 40.0])
        r, p = class_size_correlation(sizes, sizes)
        assert r == pytest.approx(1.0)
        assert p == pytest.approx(0.0, abs=1e-12)

    def test_negated_r_minus_one(self):
        sizes = np.array([10.0, 20.0, 30.0, 40.0])
        r, _ = class_size_correlation(-sizes + 100.0, sizes)
        assert r == pytest.approx(-1.0)

    def test_matches_direct_formula_oracle(self):
        x = gaussian(RngStream(11, 1), 30, 1.0)
        y = 0.3 * x + gaussian(RngStream(12, 1), 30, 1.0)
        r, p = class_size_correlation(x, y)
        assert r == pytest.approx(pearson_oracle(x, y), abs=1e-10)
        assert 0.0 <= p <= 1.0

    def test_p_value_magnitude_sanity(self):
        # strong correlation on 30 points: p should be small
        x = np.arange(30.0)
        y = x + gaussian(RngStream(13, 1), 30, 1.0)
        _, p = class_size_correlation(x, y)
        assert p < 1e-6

    def test_zero_variance_rejected(self):
        with pytest.raises(DomainError):
            class_size_correlation(np.ones(5), np.arange(5.0))

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_property_r_in_range(self, seed):
        x = gaussian(RngStream(seed, 2), 10, 1.0)
        y = gaussian(RngStream(seed, 3), 10, 1.0)
        r, p = class_size_correlation(x, y)
        assert -1.0 <= r <= 1.0
        assert 0.0 <= p <= 1.0


class TestSimilarityReport:
    def test_report_shape_and_self_distance(self):
        ds = generate(domain_spec("source"), "test", 60, 2)
        a = Checkpoint(TINY4, init_random(TINY4, RngStream(21)), 0, {}, "", "")
        b = Checkpoint(TINY4, init_random(TINY4, RngStream(22)), 0, {}, "", "")
        report = similarity_report(a, b, ds, init_a=a, init_b=b)
        assert set(report.per_module_cka) == set(TINY4.module_names())
        assert report.total_l2 > 0
        assert all(v == 0.0 for v in report.distance_to_init_a.values())
        report_aa = similarity_report(a, a, ds)
        for value, flagged in report_aa.per_module_cka.values():
            assert flagged or value == pytest.approx(1.0, abs=1e-6)
