"""Gradient snapping: directions, selection, the snapped gradient and the baseline."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.exceptions import DegenerateDirectionError, DimensionMismatchError, InsufficientDataError
from modules.gsl.models import GslConfig, SnapReport
from modules.gsl.service import (
    baseline_alignment,
    baseline_biased_gradient,
    compute_sigma,
    gsl_backward,
    gsl_forward,
    refresh_codebook,
    select_codeword,
    snap_direction,
    snap_gradient,
)
from modules.gsl.utils import (
    SnapLogWriter,
    alignment_histogram,
    mean_alignment,
    rejection_rate,
    write_alignment_histograms,
)
from modules.vq.models import Codebook, PqCode
from modules.vq.service import decode, decode_batch, encode, encode_batch, enumerate_neighbor_codewords


def candidates_of(cb, y, T):
    codes = [n.code for n in enumerate_neighbor_codewords(cb, y, T)]
    vectors = decode_batch(cb, np.array([c.indices for c in codes]))
    return list(zip(codes, vectors)), vectors


class TestSnapDirection:
    def test_unit_exponent(self, rng):
        y = rng.normal(size=4)
        c = y + np.array([0.0, 2.0, 0.0, 0.0])
        dc = snap_direction(c, y, sigma=4.0)
        assert_allclose(np.linalg.norm(dc), np.exp(-1.0))

    def test_points_towards_codeword(self):
        dc = snap_direction(np.array([3.0, 0.0, 0.0]), np.zeros(3), sigma=2.0)
        assert_allclose(dc, [np.exp(-9.0 / 2.0), 0.0, 0.0])

    def test_matches_recomputed_formula(self, rng):
        for _ in range(20):
            c, y = rng.normal(size=(2, 6))
            sigma = rng.uniform(0.5, 3.0)
            d = np.linalg.norm(c - y)
            assert_allclose(snap_direction(c, y, sigma), np.exp(-d ** 2 / sigma) * (c - y) / d, rtol=1e-6)
            assert_allclose(snap_direction(c, y, sigma, "literal"), np.exp(-d ** 4 / sigma) * (c - y) / d, rtol=1e-6)

    def test_degenerate(self):
        with pytest.raises(DegenerateDirectionError):
            snap_direction(np.ones(3), np.ones(3), sigma=1.0)


class TestComputeSigma:
    def test_equidistant(self):
        neighbors = np.array([[2.0, 0.0], [0.0, 2.0], [-2.0, 0.0]])
        assert compute_sigma(np.zeros(2), neighbors) == pytest.approx(2.0)

    def test_arithmetic_mean(self):
        assert compute_sigma(np.zeros(1), np.array([[1.0], [3.0]])) == pytest.approx(2.0)

    def test_empty(self):
        with pytest.raises(InsufficientDataError):
            compute_sigma(np.zeros(2), np.empty((0, 2)))


class TestSelectCodeword:
    cfg = GslConfig(lam=0.036, neighbors=8)

    def test_neighbor_along_gradient_is_chosen(self):
        y = np.zeros(2)
        g = np.array([1.0, 0.0])
        cands = [(PqCode((0,)), np.array([0.0, 1.0])), (PqCode((1,)), np.array([2.0, 0.0]))]
        sel = select_codeword(g, y, cands, sigma=1.5, cfg=self.cfg)
        assert not sel.rejected
        assert sel.code == PqCode((1,))
        assert sel.alignment == pytest.approx(1.0)

    def test_all_opposite_rejected(self):
        cands = [(PqCode((0,)), np.array([-1.0, 0.0])), (PqCode((1,)), np.array([-2.0, 0.5]))]
        sel = select_codeword(np.array([1.0, 0.0]), np.zeros(2), cands, sigma=1.0, cfg=self.cfg)
        assert sel.rejected
        assert sel.alignment < 0

    def test_descent_aligned_flips_the_choice(self):
        cfg = GslConfig(selection_sign="descent_aligned")
        cands = [(PqCode((0,)), np.array([-1.0, 0.0])), (PqCode((1,)), np.array([1.0, 0.0]))]
        sel = select_codeword(np.array([1.0, 0.0]), np.zeros(2), cands, sigma=1.0, cfg=cfg)
        assert sel.code == PqCode((0,))

    def test_matches_brute_force_argmax(self, rng):
        for _ in range(30):
            cb = Codebook(codewords=rng.normal(size=(2, 4, 2)))
            y, g = rng.normal(size=(2, 4))
            cands, vectors = candidates_of(cb, y, 8)
            sigma = compute_sigma(y, vectors)
            sel = select_codeword(g, y, cands, sigma, self.cfg)
            scores = [g @ snap_direction(v, y, sigma) for _, v in cands]
            best = int(np.argmax(scores))
            assert sel.code == cands[best][0]
            assert sel.rejected == (scores[best] <= 0)

    def test_coincident_candidate_is_skipped(self):
        cands = [(PqCode((0,)), np.zeros(2)), (PqCode((1,)), np.array([1.0, 0.0]))]
        sel = select_codeword(np.array([1.0, 0.0]), np.zeros(2), cands, sigma=1.0, cfg=self.cfg)
        assert sel.code == PqCode((1,))


class TestSnapGradient:
    @pytest.mark.parametrize("denominator", ["literal", "cosine_squared"])
    def test_parallel_unit_gradient(self, denominator):
        cfg = GslConfig(lambda1_denominator=denominator)
        dc = np.array([0.0, 0.3, 0.0])
        dy, report = snap_gradient(np.array([0.0, 1.0, 0.0]), dc, cfg)
        assert report.lambda1 == pytest.approx(0.0, abs=1e-6)
        assert report.lambda2 == pytest.approx(1.0, abs=1e-6)
        assert_allclose(dy, dc, atol=1e-6)
        assert not report.rejected

    def test_orthogonal_gradient(self):
        cfg = GslConfig(lam=0.036)
        g = np.array([2.0, 0.0])
        dy, report = snap_gradient(g, np.array([0.0, 0.5]), cfg)
        assert report.lambda2 == pytest.approx(0.0, abs=1e-6)
        assert report.lambda1 == pytest.approx(0.036, abs=1e-6)
        assert_allclose(dy, 0.036 * g, atol=1e-6)

    def test_random_cosine_squared(self, rng):
        cfg = GslConfig(lam=0.5, lambda1_denominator="cosine_squared")
        for _ in range(20):
            g, dc = rng.normal(size=(2, 5))
            dy, report = snap_gradient(g, dc, cfg)
            cos = g @ dc / (np.linalg.norm(g) * np.linalg.norm(dc))
            lambda1 = (1 - (g @ dc) ** 2 / (np.linalg.norm(dc) ** 2 * np.linalg.norm(g) ** 2)) * 0.5
            lambda2 = g @ dc / np.linalg.norm(dc)
            assert_allclose(report.lambda1, (1 - cos ** 2) * 0.5, atol=1e-6)
            assert_allclose(report.lambda1, lambda1, atol=1e-6)
            assert_allclose(report.lambda2, lambda2, atol=1e-6)
            assert_allclose(dy, lambda1 * g + lambda2 * dc, atol=1e-6)

    def test_literal_denominator(self):
        cfg = GslConfig(lam=1.0, lambda1_denominator="literal")
        g = np.array([2.0, 0.0])
        dc = np.array([1.0, 1.0])
        _, report = snap_gradient(g, dc, cfg)
        # (g.dc)^2 / (||dc||^2 ||g||) = 4 / (2 * 2)
        assert report.lambda1 == pytest.approx(0.0)

    def test_rejection_is_scaled_gradient(self, rng):
        cfg = GslConfig(lam=0.036)
        g = rng.normal(size=4)
        dy, report = snap_gradient(g, rng.normal(size=4), cfg, rejected=True)
        assert_array_equal(dy, 0.036 * g)
        assert report.rejected and report.lambda1 == 0.036 and report.lambda2 == 0.0
        assert report.gradient_cosine == pytest.approx(1.0)


class TestGslBackward:
    def test_forward_is_identity(self, rng):
        y = rng.normal(size=(3, 4))
        assert gsl_forward(y) is y

    def test_single_neighbor_snaps_towards_quantizer(self, rng, tiny_codebook):
        cfg = GslConfig(neighbors=1)
        y = rng.normal(size=(20, 4))
        g = rng.normal(size=(20, 4))
        _, reports = gsl_backward(y, g, tiny_codebook, cfg)
        for yi, report in zip(y, reports):
            assert report.chosen_code == encode(tiny_codebook, yi)

    def test_single_neighbor_alignment_equals_baseline(self, rng, tiny_codebook):
        cfg = GslConfig(neighbors=1)
        y = rng.normal(size=(20, 4))
        g = rng.normal(size=(20, 4))
        _, reports = gsl_backward(y, g, tiny_codebook, cfg)
        assert_allclose([r.alignment for r in reports], baseline_alignment(y, g, tiny_codebook), atol=1e-6)

    def test_zero_gradient_rows(self, rng, tiny_codebook):
        y = rng.normal(size=(3, 4))
        g = rng.normal(size=(3, 4))
        g[1] = 0.0
        dy, reports = gsl_backward(y, g, tiny_codebook, GslConfig(neighbors=4))
        assert_array_equal(dy[1], 0.0)
        assert reports[1].rejected and reports[1].alignment == 0.0

    def test_batch_is_composition_of_single_operations(self, rng, tiny_codebook):
        cfg = GslConfig(neighbors=6)
        y = rng.normal(size=(4, 4))
        g = rng.normal(size=(4, 4))
        dy, reports = gsl_backward(y, g, tiny_codebook, cfg)
        for i in range(4):
            cands, vectors = candidates_of(tiny_codebook, y[i], 6)
            sel = select_codeword(g[i], y[i], cands, compute_sigma(y[i], vectors), cfg)
            expected, report = snap_gradient(g[i], sel.delta_c, cfg, sel.rejected, sel.code, sel.alignment)
            assert_allclose(dy[i], expected)
            assert reports[i] == report

    def test_neighbor_count_clamped(self, rng, tiny_codebook, caplog):
        y = rng.normal(size=(2, 4))
        dy, reports = gsl_backward(y, rng.normal(size=(2, 4)), tiny_codebook, GslConfig(neighbors=100))
        assert len(reports) == 2
        assert "exceeds" in caplog.text

    def test_dimension_mismatch(self, tiny_codebook):
        with pytest.raises(DimensionMismatchError):
            gsl_backward(np.zeros((2, 6)), np.ones((2, 6)), tiny_codebook, GslConfig())


class TestBaselineBiasedGradient:
    def test_codeword_concatenation_gets_raw_gradient(self, rng, tiny_codebook):
        y = decode(tiny_codebook, PqCode((3, 1)))
        g = rng.normal(size=4)
        assert_allclose(baseline_biased_gradient(y, g, tiny_codebook, 0.5), g)

    def test_zero_weight(self, rng, tiny_codebook):
        g = rng.normal(size=(5, 4))
        assert_array_equal(baseline_biased_gradient(rng.normal(size=(5, 4)), g, tiny_codebook, 0.0), g)

    def test_residual_term(self, rng, tiny_codebook):
        y = rng.normal(size=(6, 4))
        g = rng.normal(size=(6, 4))
        residual = y - decode_batch(tiny_codebook, encode_batch(tiny_codebook, y))
        assert_allclose(baseline_biased_gradient(y, g, tiny_codebook, 0.036), g + 0.072 * residual, rtol=1e-6, atol=1e-9)


class TestRefreshCodebook:
    def test_sequential_refresh_bumps_version(self, rng, tiny_codebook):
        new = refresh_codebook(tiny_codebook, rng.normal(size=(10, 4)), GslConfig())
        assert new.version == tiny_codebook.version + 1
        assert new.counts.sum() == 2 * 10

    def test_full_retrain(self, rng, tiny_codebook):
        cfg = GslConfig(refresh_mode="full_retrain", refresh_iters=3)
        stream = rng.normal(size=(30, 4))
        a = refresh_codebook(tiny_codebook, stream, cfg, seed=1)
        b = refresh_codebook(tiny_codebook, stream, cfg, seed=1)
        assert a.version == 1
        assert_array_equal(a.codewords, b.codewords)

    def test_empty_stream(self, tiny_codebook):
        with pytest.raises(InsufficientDataError):
            refresh_codebook(tiny_codebook, np.empty((0, 4)), GslConfig())


class TestSnapLog:
    def test_rows_and_histograms(self, tmp_path, rng, tiny_codebook):
        y = rng.normal(size=(5, 4))
        _, reports = gsl_backward(y, rng.normal(size=(5, 4)), tiny_codebook, GslConfig(neighbors=4))
        with SnapLogWriter(tmp_path / "snap.csv") as log:
            log.write(0, reports, sample_ids=[10, 11, 12, 13, 14])
        lines = (tmp_path / "snap.csv").read_text().splitlines()
        assert lines[0] == "iteration,sample_id,chosen_code,lambda1,lambda2,alignment,rejected"
        assert len(lines) == 6 and lines[1].startswith("0,10,")
        assert 0.0 <= rejection_rate(reports) <= 1.0

        hist = alignment_histogram([r.alignment for r in reports])
        assert sum(count for _, _, count in hist) == 5
        assert hist[0][0] == -1.0 and hist[-1][1] == 1.0
        write_alignment_histograms(tmp_path / "hist.csv", [("gsl", hist)])
        assert len((tmp_path / "hist.csv").read_text().splitlines()) == 21

    def test_writer_outside_context(self, tmp_path):
        with pytest.raises(RuntimeError):
            SnapLogWriter(tmp_path / "x.csv").write(0, [])

    def test_batch_summaries(self):
        reports = [
            SnapReport(chosen_code=None, lambda1=0.0, lambda2=0.0, alignment=-0.5, rejected=True),
            SnapReport(chosen_code=PqCode((0,)), lambda1=0.1, lambda2=0.2, alignment=0.9, rejected=False),
        ]
        assert mean_alignment(reports) == pytest.approx(0.2)
        assert rejection_rate(reports) == pytest.approx(0.5)
        assert mean_alignment([]) == 0.0


class TestSnappingInvariants:
    def test_accepted_snaps_keep_a_descent_component(self, rng):
        cfg = GslConfig(lam=0.036, neighbors=16, lambda1_denominator="cosine_squared")
        accepted = 0
        for _ in range(200):
            cb = Codebook(codewords=rng.normal(size=(2, 4, 3)))
            y, g = rng.normal(size=(2, 6))
            cands, vectors = candidates_of(cb, y, 16)
            sel = select_codeword(g, y, cands, compute_sigma(y, vectors), cfg)
            dy, report = snap_gradient(g, sel.delta_c, cfg, sel.rejected, sel.code, sel.alignment)
            if report.rejected:
                continue
            accepted += 1
            assert g @ sel.delta_c > 0
            assert report.lambda1 >= 0.0
            assert report.lambda2 * (g @ sel.delta_c) > 0
            assert g @ dy > 0
        assert accepted > 100

    def test_small_step_along_direction_approaches_codeword(self, rng):
        cfg = GslConfig(neighbors=16)
        for _ in range(100):
            cb = Codebook(codewords=rng.normal(size=(2, 4, 3)))
            y, g = rng.normal(size=(2, 6))
            cands, vectors = candidates_of(cb, y, 16)
            sel = select_codeword(g, y, cands, compute_sigma(y, vectors), cfg)
            if sel.delta_c is None:
                continue
            c = decode(cb, sel.code).astype(np.float64)
            eta = 1e-3
            assert np.linalg.norm(y + eta * sel.delta_c - c) < np.linalg.norm(y - c)


class TestSelectionSign:
    def test_canonical_name_and_alias(self):
        assert GslConfig().selection_sign == "paper_literal"
        assert GslConfig(selection_sign="paper_literal").sign == 1.0
        alias = GslConfig(selection_sign="gradient_aligned")
        assert alias.selection_sign == "paper_literal" and alias.sign == 1.0
        assert GslConfig(selection_sign="descent_aligned").sign == -1.0

    def test_unknown_sign(self):
        with pytest.raises(ValueError):
            GslConfig(selection_sign="uphill")
