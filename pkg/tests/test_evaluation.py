import json

import numpy as np
import pytest

from uaed.annotations import AnnotationSet, InvalidInputError
from uaed.evaluation import (
    EvalConfig,
    MatchCounts,
    compute_metrics,
    correspond,
    evaluate_image,
    match_exact,
    match_greedy,
    max_distance,
    nms_thin,
    sweep,
    write_eval_outputs,
)
from uaed.evaluation import _kernels_py as pykernels
from uaed.evaluation import kernels

from oracles import max_cardinality, spreadsheet_metrics


def _ann(*maps):
    return AnnotationSet.from_maps("x", np.stack(maps).astype(np.uint8))


def _random_instance(rng, size=20, n=15):
    pred = np.zeros((size, size), np.uint8)
    gt = np.zeros((size, size), np.uint8)
    n = min(n, size * size)
    pred.flat[rng.choice(size * size, rng.integers(0, n + 1), replace=False)] = 1
    gt.flat[rng.choice(size * size, rng.integers(0, n + 1), replace=False)] = 1
    return pred, gt


class TestNMS:
    def test_thin_line_unchanged(self):
        x = np.zeros((20, 20))
        x[:, 9] = 1.0
        assert np.array_equal(nms_thin(x), x)

    def test_band_keeps_center(self):
        x = np.zeros((20, 20))
        x[:, 8], x[:, 9], x[:, 10] = 0.5, 1.0, 0.5
        expect = np.zeros_like(x)
        expect[:, 9] = 1.0
        assert np.array_equal(nms_thin(x), expect)

    def test_horizontal_band(self):
        x = np.zeros((20, 24))
        x[5], x[6], x[7] = 0.3, 0.8, 0.3
        out = nms_thin(x)
        assert np.array_equal(np.nonzero(out.any(axis=1))[0], [6])
        assert np.all(out[6] == 0.8)

    def test_zero_map(self):
        assert not nms_thin(np.zeros((16, 16))).any()

    def test_survivors_keep_values(self, rng):
        x = rng.random((32, 32))
        out = nms_thin(x)
        kept = out > 0
        assert np.array_equal(out[kept], x[kept])

    def test_idempotent(self, rng):
        from scipy import ndimage

        for seed in range(20):
            x = ndimage.gaussian_filter(np.random.default_rng(seed).random((40, 40)), 1.5)
            x /= x.max()
            once = nms_thin(x)
            assert np.array_equal(nms_thin(once) > 0, once > 0)

    def test_diagonal_ridge(self):
        yy, xx = np.mgrid[:32, :32]
        x = np.exp(-((yy - xx) ** 2) / 2.0)
        out = nms_thin(x)
        interior = (slice(4, -4), slice(4, -4))
        assert np.array_equal(out[interior] > 0, (yy == xx)[interior])


class TestCorrespond:
    def test_perfect(self):
        e = np.zeros((16, 16), np.uint8)
        e[4, 2:12] = 1
        c = correspond(e, _ann(e), 2.0)
        assert c.tp_pred == c.n_pred == c.tp_gt == c.n_gt == 10

    def test_isolated_false_positive(self):
        gt = np.zeros((16, 16), np.uint8)
        gt[2, 2] = 1
        pred = np.zeros_like(gt)
        pred[12, 12] = 1
        c = correspond(pred, _ann(gt), 2.0)
        assert (c.tp_pred, c.n_pred, c.tp_gt, c.n_gt) == (0, 1, 0, 1)

    @pytest.mark.parametrize("matcher", ["greedy", "exact"])
    def test_one_pixel_offset(self, matcher):
        gt = np.zeros((8, 8), np.uint8)
        gt[3, 3] = 1
        pred = np.zeros_like(gt)
        pred[3, 4] = 1
        assert max_cardinality(pred, gt, 2.0) == 1
        c = correspond(pred, _ann(gt), 2.0, matcher)
        assert c.tp_pred == c.tp_gt == 1

    def test_radius_boundary_inclusive(self):
        gt = np.zeros((8, 8), np.uint8)
        gt[0, 0] = 1
        pred = np.zeros_like(gt)
        pred[0, 2] = 1
        assert correspond(pred, _ann(gt), 2.0).tp_pred == 1
        assert correspond(pred, _ann(gt), 1.999).tp_pred == 0

    def test_any_annotation_counts(self):
        a = np.zeros((10, 10), np.uint8)
        b = np.zeros_like(a)
        a[1, 1] = 1
        b[8, 8] = 1
        pred = a | b
        c = correspond(pred, _ann(a, b), 1.0)
        # each predicted pixel is matched by one annotation; human counts sum over both
        assert (c.tp_pred, c.n_pred, c.tp_gt, c.n_gt) == (2, 2, 2, 2)

    def test_one_to_one(self):
        gt = np.zeros((5, 5), np.uint8)
        gt[2, 2] = 1
        pred = np.zeros_like(gt)
        pred[2, 1] = pred[2, 3] = 1
        c = correspond(pred, _ann(gt), 1.5)
        assert (c.tp_pred, c.n_pred, c.tp_gt) == (1, 2, 1)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            correspond(np.zeros((4, 4)), _ann(np.zeros((4, 5))), 1.0)

    def test_unknown_matcher(self):
        with pytest.raises(InvalidInputError):
            correspond(np.zeros((4, 4)), _ann(np.zeros((4, 4))), 1.0, "hungarian")

    def test_max_distance(self):
        assert max_distance((300, 400), 0.0075) == pytest.approx(3.75)


class TestMatchers:
    def test_exact_reaches_maximum_cardinality(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            pred, gt = _random_instance(rng, size=int(rng.integers(3, 21)))
            r = float(rng.uniform(1, 4))
            mp, mg = match_exact(pred, gt, r)
            assert mp.sum() == mg.sum() == max_cardinality(pred, gt, r)

    def test_greedy_within_bound(self):
        rng = np.random.default_rng(1)
        worst = 1.0
        for _ in range(1000):
            pred, gt = _random_instance(rng, size=int(rng.integers(3, 21)))
            r = float(rng.uniform(1, 4))
            exact = int(match_exact(pred, gt, r)[0].sum())
            greedy = int(match_greedy(pred, gt, r)[0].sum())
            assert greedy <= exact
            if exact:
                worst = min(worst, greedy / exact)
        assert worst >= 0.9

    def test_greedy_one_to_one(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            pred, gt = _random_instance(rng)
            mp, mg = match_greedy(pred, gt, 3.0)
            assert mp.sum() == mg.sum()
            assert not (mp & ~pred.astype(bool)).any() and not (mg & ~gt.astype(bool)).any()

    def test_nearest_first_without_repair(self):
        # p2 takes g3 (closest), stranding p4 whose only partner was g3
        pred = np.zeros((1, 8), np.uint8)
        gt = np.zeros((1, 8), np.uint8)
        pred[0, [2, 4]] = 1
        gt[0, [0, 3]] = 1
        assert match_greedy(pred, gt, 2.0, augment=False)[0].sum() == 1
        assert match_greedy(pred, gt, 2.0)[0].sum() == 2 == max_cardinality(pred, gt, 2.0)

    def test_unique_distances_no_conflict(self):
        pred = np.zeros((10, 10), np.uint8)
        gt = np.zeros_like(pred)
        for k, (y, x) in enumerate([(1, 1), (5, 5), (8, 2)]):
            pred[y, x] = 1
            gt[y, min(x + k, 9)] = 1
        assert match_greedy(pred, gt, 2.5)[0].sum() == match_exact(pred, gt, 2.5)[0].sum() == 3

    def test_shrinking_radius_never_increases(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            pred, gt = _random_instance(rng, n=30)
            ann = _ann(gt, np.roll(gt, 1, axis=0))
            prev = None
            for r in (4.0, 3.0, 2.2, 1.5, 1.0, 0.5):
                c = correspond(pred, ann, r)
                if prev:
                    assert c.tp_pred <= prev.tp_pred and c.tp_gt <= prev.tp_gt
                prev = c


class TestBackends:
    def test_backend_name(self):
        assert kernels.BACKEND_NAME in ("compiled", "python")

    def test_parity(self):
        try:
            from uaed.evaluation import _kernels as ck
        except ImportError:
            pytest.skip("compiled extension not built")
        rng = np.random.default_rng(4)
        for _ in range(50):
            pred, gt = _random_instance(rng, n=40)
            # enumeration order may differ; the pair sets must not
            a = np.stack([np.asarray(v) for v in ck.candidate_pairs(pred, gt, 2.5)], 1)
            b = np.stack(pykernels.candidate_pairs(pred, gt, 2.5), 1)
            assert np.array_equal(a[np.lexsort(a.T)], b[np.lexsort(b.T)])
            pi, gi, _ = pykernels.candidate_pairs(pred, gt, 2.5)
            mp1, mg1 = (np.asarray(v) for v in ck.greedy_assign(pi, gi, pred.size))
            mp2, mg2 = pykernels.greedy_assign(pi, gi, pred.size)
            assert np.array_equal(mp1, mp2) and np.array_equal(mg1, mg2)
            order = np.lexsort((gi, pi))
            adj = np.ascontiguousarray(gi[order])
            indptr = np.zeros(pred.size + 1, np.int64)
            np.cumsum(np.bincount(pi, minlength=pred.size), out=indptr[1:])
            n1 = ck.augment(indptr, adj, mp1, mg1)
            n2 = pykernels.augment(indptr, adj, mp2, mg2)
            assert n1 == n2 and np.array_equal(mp1, mp2) and np.array_equal(mg1, mg2)
            E = rng.random((20, 20)) * (rng.random((20, 20)) < 0.5)
            th = rng.uniform(0, np.pi, (20, 20))
            c, s = np.cos(th), np.sin(th)
            assert np.array_equal(np.asarray(ck.nms_suppress(E, c, s, 1)), pykernels.nms_suppress(E, c, s, 1))


class TestSweep:
    def test_perfect_thin_prediction(self):
        e = np.zeros((16, 16), np.uint8)
        e[3, :] = 1
        counts = sweep(e.astype(float), _ann(e))
        assert np.array_equal(counts.tp_pred, counts.n_pred)
        assert (counts.n_pred == 16).all()

    def test_empty_prediction(self):
        e = np.zeros((16, 16), np.uint8)
        e[3, :] = 1
        counts = sweep(np.zeros((16, 16)), _ann(e))
        assert not counts.n_pred.any() and not counts.tp_gt.any()

    def test_monotone(self, rng):
        gt = (rng.random((24, 24)) < 0.1).astype(np.uint8)
        counts = sweep(rng.random((24, 24)), _ann(gt))
        assert (np.diff(counts.n_pred) <= 0).all()
        assert (counts.tp_pred <= counts.n_pred).all() and (counts.tp_gt <= counts.n_gt).all()

    def test_thresholds(self):
        ths = EvalConfig().thresholds
        assert len(ths) == 99 and ths[0] == pytest.approx(0.01) and ths[-1] == pytest.approx(0.99)

    def test_threshold_inclusive(self):
        e = np.zeros((8, 8), np.uint8)
        e[2, 2] = 1
        counts = sweep(e * 0.5, _ann(e), EvalConfig(n_thresholds=3))  # 0.25, 0.5, 0.75
        assert list(counts.n_pred) == [1, 1, 0]

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            EvalConfig(tolerance=0)
        with pytest.raises(InvalidInputError):
            EvalConfig(n_thresholds=0)


def _counts(tp_pred, n_pred, tp_gt, n_gt, image_id="i"):
    ths = np.arange(1, len(tp_pred) + 1) / (len(tp_pred) + 1)
    arr = lambda v: np.asarray(v, dtype=np.int64)  # noqa: E731
    return MatchCounts(ths, arr(tp_pred), arr(n_pred), arr(tp_gt), arr(n_gt), image_id)


class TestMetrics:
    def test_perfect_single_image(self):
        e = np.zeros((16, 16), np.uint8)
        e[5, 2:14] = 1
        res = compute_metrics([sweep(e.astype(float), _ann(e))])
        assert res.ods_f == res.ois_f == res.ap == 1.0

    def test_zero_matches(self):
        res = compute_metrics([_counts([0, 0, 0], [5, 3, 0], [0, 0, 0], [4, 4, 4])])
        assert res.ods_f == res.ois_f == res.ap == 0.0

    def test_hand_built_two_images(self):
        # two 10x10 images swept at 5 thresholds
        a = _counts([9, 8, 6, 3, 1], [14, 10, 7, 3, 1], [10, 9, 7, 4, 1], [12, 12, 12, 12, 12], "a")
        b = _counts([5, 5, 4, 2, 0], [6, 5, 4, 2, 0], [8, 8, 6, 3, 0], [9, 9, 9, 9, 9], "b")
        res = compute_metrics([a, b])
        ods, ois, ap = spreadsheet_metrics([a, b])
        assert res.ods_f == pytest.approx(ods, abs=1e-12)
        assert res.ois_f == pytest.approx(ois, abs=1e-12)
        assert res.ap == pytest.approx(ap, abs=1e-12)
        # first threshold by hand: P = 14/20, R = 18/21
        p, r = 14 / 20, 18 / 21
        assert res.pr_points[0][:2] == pytest.approx((r, p), abs=1e-15)

    def test_random_fixtures_againstspreadsheet_metrics(self, rng):
        for _ in range(30):
            imgs = []
            for _ in range(rng.integers(1, 5)):
                n_pred = np.sort(rng.integers(0, 40, 7))[::-1]
                tp_pred = np.minimum(n_pred, rng.integers(0, 40, 7))
                n_gt = np.full(7, rng.integers(0, 30))
                tp_gt = np.minimum(n_gt, rng.integers(0, 30, 7))
                imgs.append(_counts(tp_pred, n_pred, tp_gt, n_gt))
            res = compute_metrics(imgs)
            ods, ois, ap = spreadsheet_metrics(imgs)
            assert res.ods_f == pytest.approx(ods, abs=1e-12)
            assert res.ois_f == pytest.approx(ois, abs=1e-12)
            assert res.ap == pytest.approx(ap, abs=1e-12)

    def test_ois_dominates_ods(self, rng):
        for seed in range(10):
            r = np.random.default_rng(seed)
            imgs = []
            for _ in range(4):
                gt = (r.random((24, 24)) < 0.08).astype(np.uint8)
                pred = np.clip(gt * r.uniform(0.3, 1, gt.shape) + r.random(gt.shape) * 0.5, 0, 1)
                imgs.append(evaluate_image(pred, _ann(gt, np.roll(gt, 1, 1)), EvalConfig(tolerance=0.05)))
            res = compute_metrics(imgs)
            assert res.ois_f >= res.ods_f - 1e-15
            assert all(0 <= v <= 1 for v in (res.ods_f, res.ois_f, res.ap))

    def test_summed_ois_can_trail_ods(self):
        # per-image optima are chosen by per-image F, so pooling their counts
        # is not guaranteed to beat the shared threshold
        a = _counts([3, 3], [8, 5], [3, 2], [7, 7])
        b = _counts([6, 4], [6, 4], [4, 4], [4, 4])
        res = compute_metrics([a, b])
        assert res.ods_f == pytest.approx(2 * (7 / 9) * (6 / 11) / (7 / 9 + 6 / 11), abs=1e-15)
        assert res.ois_f == pytest.approx(2 * (9 / 14) * (7 / 11) / (9 / 14 + 7 / 11), abs=1e-15)
        assert res.ois_f < res.ods_f

    def test_empty_list(self):
        with pytest.raises(InvalidInputError):
            compute_metrics([])

    def test_outputs(self, tmp_path):
        a = _counts([9, 8, 6], [14, 10, 7], [10, 9, 7], [12, 12, 12])
        res = compute_metrics([a])
        write_eval_outputs(tmp_path, res, EvalConfig())
        data = json.loads((tmp_path / "eval.json").read_text())
        assert data["tolerance"] == 0.0075
        assert data["ods_f"] == res.ods_f
        rows = (tmp_path / "pr.csv").read_text().splitlines()
        assert rows[0] == "threshold,precision,recall,f" and len(rows) == 4

    def test_nan_refused(self, tmp_path):
        a = _counts([1], [1], [1], [1])
        res = compute_metrics([a])
        res.ap = float("nan")
        with pytest.raises(FloatingPointError):
            write_eval_outputs(tmp_path, res, EvalConfig())
