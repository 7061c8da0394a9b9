"""Gradient snapping layer.

Forward is the identity. Backward replaces each representation gradient g
by a mix of its residual and its projection on the direction towards a
neighboring codeword:

    dy = lambda1 * g + lambda2 * dc
    lambda2 = g.dc / ||dc||
    lambda1 = (1 - (g.dc)^2 / (||dc||^2 * D)) * lambda

where dc = f(||c - y||) (c - y) / ||c - y|| for the codeword c, among the T
nearest, that scores best against g. When no codeword scores positively the
snap is rejected and dy = lambda * g.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import (
    DegenerateDirectionError,
    DimensionMismatchError,
    InsufficientDataError,
    NonFiniteError,
)
from modules.vq.models import Codebook, PqCode
from modules.vq.service import (
    decode_batch,
    encode_batch,
    enumerate_neighbor_codewords,
    sequential_kmeans_update,
    train_codebook,
)
from .models import GslConfig, SnapReport, SnapSelection

logger = logging.getLogger(__name__)

DEGENERATE_DISTANCE = 1e-12


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


# ==================== SNAPPING PRIMITIVES ====================

def snap_direction(c, y, sigma: float, f_variant: str = "gaussian_sqdist") -> np.ndarray:
    """Weighted unit direction from y towards codeword c.

    ``||dc|| = f`` with f = exp(-||c-y||^2 / sigma) (gaussian_sqdist) or
    exp(-||c-y||^4 / sigma) (literal).

    Raises:
        DegenerateDirectionError: If ||c - y|| < 1e-12
        ValueError: If sigma <= 0 or the variant is unknown
    """
    diff = np.asarray(c, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    dist = float(np.linalg.norm(diff))
    if dist < DEGENERATE_DISTANCE:
        raise DegenerateDirectionError("Codeword coincides with the representation")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")

    sq = dist * dist
    if f_variant == "gaussian_sqdist":
        weight = np.exp(-sq / sigma)
    elif f_variant == "literal":
        weight = np.exp(-(sq * sq) / sigma)
    else:
        raise ValueError(f"Unknown f_variant {f_variant!r}")
    return weight * diff / dist


def compute_sigma(y, neighbor_vectors) -> float:
    """Mean (non-squared) l2 distance between y and its enumerated codewords.

    Raises:
        InsufficientDataError: If the neighbor list is empty
    """
    vectors = np.asarray(neighbor_vectors, dtype=np.float64)
    if vectors.size == 0:
        raise InsufficientDataError("Cannot compute sigma from an empty neighbor list")
    vectors = vectors.reshape(-1, np.asarray(y).reshape(-1).shape[0])
    return float(np.linalg.norm(vectors - np.asarray(y, dtype=np.float64).reshape(1, -1), axis=1).mean())


def select_codeword(
    g,
    y,
    candidates: Sequence[Tuple[PqCode, np.ndarray]],
    sigma: float,
    cfg: GslConfig,
) -> SnapSelection:
    """Pick the enumerated codeword whose direction best matches the gradient.

    ``candidates`` are (code, decoded vector) pairs in enumeration order
    (nearest first), so the first of equal scores wins. Candidates that
    coincide with y are skipped. The selection is rejected when the best
    score is <= 0; its alignment is then the largest cos(s * g, c - y)
    among the candidates.
    """
    grad = np.asarray(g, dtype=np.float64)
    point = np.asarray(y, dtype=np.float64)
    signed = cfg.sign * grad

    best: Optional[SnapSelection] = None
    best_alignment = -1.0
    for code, vector in candidates:
        try:
            dc = snap_direction(vector, point, sigma, cfg.f_variant)
        except DegenerateDirectionError:
            continue
        score = float(np.dot(signed, dc))
        alignment = _cosine(signed, np.asarray(vector, dtype=np.float64) - point)
        best_alignment = max(best_alignment, alignment)
        if best is None or score > best.score:
            best = SnapSelection(delta_c=dc, code=code, score=score, alignment=alignment, rejected=False)

    if best is None:
        return SnapSelection(delta_c=None, code=None, score=0.0, alignment=0.0, rejected=True)
    if best.score <= 0.0:
        return SnapSelection(
            delta_c=best.delta_c, code=best.code, score=best.score,
            alignment=best_alignment, rejected=True,
        )
    return best


def snap_gradient(
    g,
    delta_c: Optional[np.ndarray],
    cfg: GslConfig,
    rejected: bool = False,
    code: Optional[PqCode] = None,
    alignment: Optional[float] = None,
) -> Tuple[np.ndarray, SnapReport]:
    """Combine the raw gradient with its projection on delta_c.

    On rejection (or without a usable direction) lambda1 = lambda,
    lambda2 = 0 and dy = lambda * g. ``alignment`` defaults to
    cos(s * g, delta_c).

    Raises:
        NonFiniteError: If the result is not finite
    """
    grad = np.asarray(g, dtype=np.float64)
    if alignment is None:
        alignment = 0.0 if delta_c is None else _cosine(cfg.sign * grad, np.asarray(delta_c, dtype=np.float64))

    dc_norm = 0.0 if delta_c is None else float(np.linalg.norm(delta_c))
    if rejected or dc_norm == 0.0:
        dy = cfg.lam * grad
        report = SnapReport(
            chosen_code=code, lambda1=cfg.lam, lambda2=0.0, alignment=alignment,
            rejected=True, gradient_cosine=_cosine(dy, grad),
        )
        return dy, report

    dc = np.asarray(delta_c, dtype=np.float64)
    g_norm = float(np.linalg.norm(grad))
    proj = float(np.dot(grad, dc))
    denominator = g_norm if cfg.lambda1_denominator == "literal" else g_norm * g_norm

    lambda2 = proj / dc_norm
    lambda1 = (1.0 - (proj * proj) / (dc_norm * dc_norm * denominator)) * cfg.lam
    dy = lambda1 * grad + lambda2 * dc

    if not (np.isfinite(lambda1) and np.isfinite(lambda2) and np.all(np.isfinite(dy))):
        raise NonFiniteError(f"Snapped gradient is not finite (lambda1={lambda1}, lambda2={lambda2})")

    report = SnapReport(
        chosen_code=code, lambda1=float(lambda1), lambda2=float(lambda2),
        alignment=alignment, rejected=False, gradient_cosine=_cosine(dy, grad),
    )
    return dy, report


# ==================== LAYER ====================

def gsl_forward(representations: np.ndarray) -> np.ndarray:
    """The layer outputs the representation unchanged."""
    return representations


def gsl_backward(
    representations: np.ndarray,
    gradients: np.ndarray,
    cb: Codebook,
    cfg: GslConfig,
) -> Tuple[np.ndarray, List[SnapReport]]:
    """Snap every row's gradient against one codebook snapshot.

    Rows with a zero raw gradient pass through as zero and are reported as
    rejected. T is clamped to K^M.

    Raises:
        DimensionMismatchError: If representation and codebook dims differ
    """
    y = np.asarray(representations, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    if y.shape != g.shape:
        raise DimensionMismatchError(f"Representations {y.shape} and gradients {g.shape} differ in shape")
    if y.shape[1] != cb.dim:
        raise DimensionMismatchError(f"Representation dim {y.shape[1]} != codebook dim {cb.dim}")

    T = min(cfg.neighbors, cb.K ** cb.M)
    if T < cfg.neighbors:
        logger.warning(f"Neighbor count {cfg.neighbors} exceeds K^M={cb.K ** cb.M}; using {T}")

    snapped = np.zeros_like(g)
    reports: List[SnapReport] = []
    for i in range(y.shape[0]):
        if not np.any(g[i]):
            reports.append(SnapReport(
                chosen_code=None, lambda1=cfg.lam, lambda2=0.0, alignment=0.0,
                rejected=True, gradient_cosine=0.0,
            ))
            continue

        neighbors = enumerate_neighbor_codewords(cb, y[i], T)
        codes = [n.code for n in neighbors]
        vectors = decode_batch(cb, np.array([c.indices for c in codes], dtype=np.int64))
        sigma = compute_sigma(y[i], vectors)
        selection = select_codeword(g[i], y[i], list(zip(codes, vectors)), sigma, cfg)
        snapped[i], report = snap_gradient(
            g[i], selection.delta_c, cfg, rejected=selection.rejected,
            code=selection.code, alignment=selection.alignment,
        )
        reports.append(report)
        logger.debug(
            f"Sample {i}: code={selection.code} lambda1={report.lambda1:.4g} "
            f"lambda2={report.lambda2:.4g} rejected={report.rejected}"
        )

    return snapped, reports


# ==================== OUTPUT-REGULARIZATION BASELINE ====================

def baseline_biased_gradient(y, g, cb: Codebook, lambda_q: float) -> np.ndarray:
    """dE/dy + 2 * lambda_q * (y - q(y)), the per-sample bias baseline."""
    if lambda_q < 0:
        raise ValueError(f"lambda_q must be >= 0, got {lambda_q}")
    y = np.asarray(y, dtype=np.float64)
    rows = y.reshape(-1, cb.dim)
    residual = rows - decode_batch(cb, encode_batch(cb, rows)).astype(np.float64)
    return np.asarray(g, dtype=np.float64) + 2.0 * lambda_q * residual.reshape(y.shape)


def baseline_alignment(y, g, cb: Codebook, sign: float = 1.0) -> np.ndarray:
    """cos(sign * g, q(y) - y) per row; the baseline's counterpart of SnapReport.alignment."""
    y = np.asarray(y, dtype=np.float64).reshape(-1, cb.dim)
    g = np.asarray(g, dtype=np.float64).reshape(y.shape)
    towards = decode_batch(cb, encode_batch(cb, y)).astype(np.float64) - y
    return np.array([_cosine(sign * gi, ti) for gi, ti in zip(g, towards)])


# ==================== CODEBOOK REFRESH ====================

def refresh_codebook(cb: Codebook, stream, cfg: GslConfig, seed: int = 0) -> Codebook:
    """Fit the codebook to recent representations; returns version + 1.

    Raises:
        InsufficientDataError: If the stream is empty (or smaller than K for
            full retraining)
        DimensionMismatchError: If dimensions disagree
    """
    x = np.asarray(stream, dtype=np.float32)
    if x.size == 0:
        raise InsufficientDataError("Cannot refresh a codebook from an empty stream")

    if cfg.refresh_mode == "sequential_kmeans":
        new_cb = sequential_kmeans_update(cb, x)
    else:
        if x.ndim != 2 or x.shape[1] != cb.dim:
            raise DimensionMismatchError(f"Stream shape {x.shape} does not match codebook dim {cb.dim}")
        trained = train_codebook(x, cb.M, cb.K, iters=cfg.refresh_iters, seed=seed + cb.version + 1)
        new_cb = cb.successor(trained.codewords, trained.counts)

    logger.debug(f"Codebook refreshed ({cfg.refresh_mode}) to version {new_cb.version} from {x.shape[0]} vectors")
    return new_cb
