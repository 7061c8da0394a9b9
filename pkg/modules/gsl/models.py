"""Data types for the gradient snapping layer."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from modules.vq.models import PqCode

F_VARIANTS = ("gaussian_sqdist", "literal")
SELECTION_SIGNS = ("paper_literal", "descent_aligned")
SELECTION_SIGN_ALIASES = {"gradient_aligned": "paper_literal"}
LAMBDA1_DENOMINATORS = ("literal", "cosine_squared")
REFRESH_MODES = ("sequential_kmeans", "full_retrain")


@dataclass(frozen=True)
class GslConfig:
    """Snapping hyper-parameters.

    Attributes:
        lam: Residual scale lambda (> 0)
        neighbors: Number T of enumerated full codewords
        f_variant: ``gaussian_sqdist`` uses exp(-||c-y||^2 / sigma);
            ``literal`` uses exp(-||c-y||^4 / sigma)
        selection_sign: ``paper_literal`` (alias ``gradient_aligned``) maximizes
            g.dc; ``descent_aligned`` maximizes (-g).dc
        lambda1_denominator: ``cosine_squared`` divides by ||g||^2,
            ``literal`` by ||g||
        update_interval: Training iterations between codebook refreshes
        refresh_mode: ``sequential_kmeans`` or ``full_retrain``
        refresh_iters: k-means steps used by ``full_retrain``
    """

    lam: float = 0.036
    neighbors: int = 150
    f_variant: str = "gaussian_sqdist"
    selection_sign: str = "paper_literal"
    lambda1_denominator: str = "cosine_squared"
    update_interval: int = 1
    refresh_mode: str = "sequential_kmeans"
    refresh_iters: int = 10

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.neighbors < 1:
            raise ValueError(f"neighbors must be >= 1, got {self.neighbors}")
        if self.update_interval < 1:
            raise ValueError(f"update_interval must be >= 1, got {self.update_interval}")
        object.__setattr__(
            self, "selection_sign", SELECTION_SIGN_ALIASES.get(self.selection_sign, self.selection_sign)
        )
        if self.refresh_iters < 1:
            raise ValueError(f"refresh_iters must be >= 1, got {self.refresh_iters}")
        for name, allowed in (
            ("f_variant", F_VARIANTS),
            ("selection_sign", SELECTION_SIGNS),
            ("lambda1_denominator", LAMBDA1_DENOMINATORS),
            ("refresh_mode", REFRESH_MODES),
        ):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    @property
    def sign(self) -> float:
        """+1 when selection follows g, -1 when it follows -g."""
        return 1.0 if self.selection_sign == "paper_literal" else -1.0


@dataclass(frozen=True, eq=False)
class SnapSelection:
    """Outcome of scoring the enumerated codewords for one sample.

    Attributes:
        delta_c: Chosen direction (None when rejected without any candidate)
        code: Code of the chosen (or best-scoring) codeword
        score: Selection score s * g.dc of the best candidate
        alignment: Normalized score, cos(s * g, dc) of the best candidate
        rejected: True when the best score is <= 0 or no candidate exists
    """

    delta_c: Optional[np.ndarray]
    code: Optional[PqCode]
    score: float
    alignment: float
    rejected: bool


@dataclass(frozen=True)
class SnapReport:
    """Per-sample record of one snapping decision.

    ``alignment`` is the normalized inner product between the raw gradient
    and the snapping direction (the quantity whose histogram compares
    snapping with output regularization); ``gradient_cosine`` is
    cos(dy, g).
    """

    chosen_code: Optional[PqCode]
    lambda1: float
    lambda2: float
    alignment: float
    rejected: bool
    gradient_cosine: float = 1.0
