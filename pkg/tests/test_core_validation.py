import numpy as np
import pytest
from scipy import stats

from histo3d.core.errors import EdgeIntersectionMissing, InsufficientData, OutOfRangeN, ZeroVariance
from histo3d.core.geometry import fit_parametric_cubic
from histo3d.core.models import DissectionMeasurement, ParametricCubic, SlabEstimate, ValidationRecord
from histo3d.core.planes import assign_all_planes
from histo3d.core.validation import (EdgeCurves, compute_estimates, error_report, rotation_between,
                                     sensitivity_analysis, shapiro_wilk, shapiro_wilk_pvalue, slab_summary,
                                     validation_records)


def test_compute_estimates_parallel(parallel_specimen):
    estimates = compute_estimates(parallel_specimen.planes, c_edge=parallel_specimen.curves[2])

    assert [(e.index_from, e.index_to) for e in estimates] == [(1, 2), (2, 3)]
    for e, width in zip(estimates, (20, 30)):
        assert e.d1 == pytest.approx(width, abs=1e-9)
        assert e.d2 == pytest.approx(width, abs=1e-6)
        assert e.d3 == pytest.approx(width, abs=1e-9)


def test_compute_estimates_skips_absent(parallel_specimen):
    planes = list(parallel_specimen.planes)
    planes[1] = None

    estimates = compute_estimates(planes)

    assert len(estimates) == 1
    assert (estimates[0].index_from, estimates[0].index_to) == (1, 3)
    assert estimates[0].d1 == pytest.approx(50)
    assert estimates[0].d2 is None
    assert compute_estimates(planes[:1]) == []


def test_compute_estimates_missing_edge(parallel_specimen):
    far = ParametricCubic([[500, 10, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], label="far")

    with pytest.raises(EdgeIntersectionMissing) as e:
        compute_estimates(parallel_specimen.planes, c_edge=far)
    assert e.value.index == 1


def test_slab_summary(parallel_specimen):
    summary = slab_summary(compute_estimates(parallel_specimen.planes))

    assert list(summary.columns) == ["index_from", "index_to", "d1_mm", "d2_mm", "d3_mm", "mean_mm"]
    assert summary["mean_mm"].tolist() == pytest.approx([20, 30])
    assert summary["d2_mm"].isna().all()


def test_validation_records_curved():
    slabs = [SlabEstimate(1, 2, 20.0, None, 21.0), SlabEstimate(2, 3, 30.0, 29.0, 30.5)]
    measurements = [DissectionMeasurement(1, 10, 10, curved_cut=True),
                    DissectionMeasurement(2, 30, 31, d1_phy=19.5, d3_phy=20.5),
                    DissectionMeasurement(3, 60, 61, d1_phy=30.0, d2_phy=28.0, d3_phy=31.0)]

    records = validation_records(slabs, measurements)

    assert [r.dissection_index for r in records] == [2, 3]
    assert records[0].curved_cut and not records[1].curved_cut
    assert records[0].d1_phy == 19.5 and records[0].d2_phy is None
    assert records[1].d2_est == 29.0 and records[1].d2_phy == 28.0


def test_error_report():
    records = [ValidationRecord(1, 11.0, None, 10.0, d1_phy=10.0),
               ValidationRecord(2, 12.0, 14.0, 10.0, d1_phy=10.0, d2_phy=10.0),
               ValidationRecord(3, 13.0, None, 10.5, d1_phy=10.0, d3_phy=10.0)]

    report = error_report(records)

    assert report.n == 5
    assert report.differences == [1.0, 2.0, 4.0, 3.0, 0.5]
    assert report.pooled_d1_d3.n == 4
    assert report.pooled_d1_d3.mean == pytest.approx(1.625)
    assert report.d2.n == 1 and report.d2.mean == 4.0 and report.d2.stdev is None
    assert report.mean == pytest.approx(2.1)
    assert report.stdev == pytest.approx(np.std([1, 2, 4, 3, 0.5], ddof=1))
    assert 0 < report.shapiro_w <= 1 and 0 <= report.shapiro_p <= 1
    assert report.notes == []


def test_error_report_exclude_curved():
    records = [ValidationRecord(1, 11.0, None, 11.0, d1_phy=10.0, d3_phy=10.0, curved_cut=True),
               ValidationRecord(2, 12.0, None, 13.0, d1_phy=10.0, d3_phy=10.0),
               ValidationRecord(3, 9.0, None, 10.0, d1_phy=10.0, d3_phy=10.0)]

    assert error_report(records).n == 6
    report = error_report(records, exclude_curved=True)
    assert report.n == 4
    assert report.excluded_curved == 1
    assert report.mean == pytest.approx(1.0)


def test_error_report_undefined_shapiro():
    """Two differences have a mean and spread but no normality test"""
    report = error_report([ValidationRecord(1, 11.0, None, 12.0, d1_phy=10.0, d3_phy=10.0)])

    assert report.n == 2 and report.stdev == pytest.approx(np.sqrt(0.5))
    assert report.shapiro_w is None and report.shapiro_p is None
    assert "OutOfRangeN" in report.notes[0]

    report = error_report([ValidationRecord(i, 11.0, None, 10.0, d1_phy=10.0) for i in (1, 2, 3)])
    assert report.stdev == 0.0 and report.shapiro_w is None
    assert "ZeroVariance" in report.notes[0]


@pytest.mark.parametrize("records", [
    [],
    [ValidationRecord(1, 11.0, None, 10.0, d1_phy=10.0)],
    [ValidationRecord(1, 11.0, None, 10.0, d1_phy=10.0, d3_phy=10.0, curved_cut=True)],
], ids=["empty", "single", "all-curved"])
def test_error_report_insufficient(records):
    with pytest.raises(InsufficientData):
        error_report(records, exclude_curved=True)


@pytest.mark.parametrize("n", [3, 4, 5, 6, 8, 11, 12, 20, 50, 200, 1000])
def test_shapiro_wilk_matches_scipy(n):
    rng = np.random.default_rng(n)
    for samples in (rng.normal(0, 1, n), rng.exponential(1, n)):
        w, p = shapiro_wilk_pvalue(samples)
        expected = stats.shapiro(samples)

        assert w == pytest.approx(expected[0], abs=1e-4)
        assert p == pytest.approx(expected[1], abs=1e-3)


def test_shapiro_wilk_invariance():
    samples = np.random.default_rng(4).normal(3, 2, 30)

    assert shapiro_wilk(samples) == pytest.approx(shapiro_wilk(3 * samples + 7), abs=1e-12)
    assert shapiro_wilk(samples) == pytest.approx(shapiro_wilk(samples[::-1]), abs=1e-12)


def test_shapiro_wilk_three_samples():
    """Equally spaced triples are perfectly normal; the exact p-value is 1"""
    assert shapiro_wilk_pvalue([1.0, 2.0, 3.0]) == pytest.approx((1.0, 1.0))
    w, p = shapiro_wilk_pvalue([0.0, 0.0, 1.0])
    assert w == pytest.approx(0.75)
    assert p == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("samples, error", [
    ([1.0, 2.0], OutOfRangeN),
    (np.arange(5001.0), OutOfRangeN),
    ([4.0, 4.0, 4.0, 4.0], ZeroVariance),
], ids=["two", "too-many", "constant"])
def test_shapiro_wilk_errors(samples, error):
    with pytest.raises(error):
        shapiro_wilk(samples)


@pytest.mark.parametrize("normal_b, angle", [([1, 0, 0], 0.0), ([0, 1, 0], 90.0), ([-1, 0, 0], 180.0)])
def test_rotation_between(normal_b, angle):
    assert rotation_between(np.array([1.0, 0, 0]), np.array(normal_b, dtype=float)) == pytest.approx(angle)


def _variants(specimen):
    main = EdgeCurves(*(fit_parametric_cubic(m) for m in specimen.markups))
    variant = EdgeCurves(*(fit_parametric_cubic(m) for m in specimen.variant_markups))
    return main, variant


def test_sensitivity_identical_variants(parallel_specimen):
    curves = EdgeCurves(*parallel_specimen.curves)

    report = sensitivity_analysis(curves, curves, parallel_specimen.f_ref, parallel_specimen.measurements)

    assert report.plane_indices == [1, 2, 3]
    assert report.per_plane_rotation == [0.0, 0.0, 0.0]
    assert len(report.per_measurement_translation) == 6
    assert report.max_rotation == 0.0
    assert report.mean_translation == 0.0 and report.stdev_translation == 0.0


def test_sensitivity_symmetric():
    from histo3d.core.phantom import generate
    specimen = generate({"shape": "bent-prism", "cut_count": 4, "variant_jitter_mm": 0.3, "seed": 9})
    main, variant = _variants(specimen)

    forward = sensitivity_analysis(main, variant, specimen.f_ref, specimen.measurements)
    backward = sensitivity_analysis(variant, main, specimen.f_ref, specimen.measurements)

    assert forward.plane_indices == [1, 2, 3, 4]
    assert 0 < forward.max_rotation < 10
    assert forward.max_rotation == pytest.approx(backward.max_rotation, abs=1e-9)
    assert forward.mean_translation == pytest.approx(backward.mean_translation, abs=1e-9)
    assert len(forward.per_measurement_translation) == 9


@pytest.mark.integration
def test_truth_closure_random_specimens():
    """Noise free specimens of every shape and 1 to 10 cuts pass fitting, assignment and validation exactly"""
    from histo3d.core.phantom import generate
    rng = np.random.default_rng(41)
    shapes = ["parallel-lines", "half-cylinder", "bent-prism"]
    for k in range(50):
        cut_count = k % 10 + 1
        specimen = generate({"shape": shapes[k % 3], "cut_count": cut_count, "jitter": float(rng.uniform(0, 0.3)),
                             "seed": int(rng.integers(0, 2 ** 31))})
        ca, cb, c_edge = (fit_parametric_cubic(m) for m in specimen.markups)

        assignment = assign_all_planes(ca, cb, specimen.f_ref, specimen.measurements)
        records = validation_records(compute_estimates(assignment.planes, ca, cb, c_edge), specimen.measurements)

        assert len(assignment.assigned) == cut_count
        for plane, truth in zip(assignment.planes, specimen.planes):
            assert np.arccos(np.clip(plane.normal @ truth.normal, -1, 1)) < 1e-6
            assert np.linalg.norm(plane.anchor_a - truth.anchor_a) < 1e-6
            assert np.linalg.norm(plane.anchor_b - truth.anchor_b) < 1e-6
        assert len(records) == cut_count - 1
        for r in records:
            assert r.d1_est == pytest.approx(r.d1_phy, abs=1e-5)
            assert r.d2_est == pytest.approx(r.d2_phy, abs=1e-5)
            assert r.d3_est == pytest.approx(r.d3_phy, abs=1e-5)
