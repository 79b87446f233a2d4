"""Pearson correlation, its Fisher-style stretch and the MFP distance.

All pair computations use pairwise-complete observations: a timestep counts
for the pair (n, m) only if both meters observed it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lvtopo.errors import DataError, UndefinedCorrelationError
from lvtopo.model import DistanceMatrix, VoltagePanel

# Largest float strictly below 1; MFP is clamped here so the [0, 1) range
# survives rounding for strongly anti-correlated pairs.
_BELOW_ONE = float(np.nextafter(1.0, 0.0))
INVALID_FILL = 1.0 - 1e-9


@dataclass(frozen=True)
class CorrelationConfig:
    """Kernel constants.

    ``a`` shifts the softplus in the MFP map. With a = 0 the distance is
    already exactly 0 from rho ~ 0.47 upward, which erases the gap between
    same-feeder and cross-feeder pairs. a = -8 keeps MFP at 0 for
    rho >= 0.995 and within 1e-4 of 1 for rho <= 0.
    """

    alpha: float = 0.01
    a: float = -8.0
    min_overlap: int = 16

    def __post_init__(self):
        if not self.alpha > 0:
            raise DataError("alpha must be > 0")
        if self.min_overlap < 3:
            raise DataError("min_overlap must be >= 3")


def _joint(x, y, mask_x, mask_y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DataError(f"series lengths differ: {x.shape} vs {y.shape}")
    m = np.ones(x.shape, bool)
    if mask_x is not None:
        m &= np.asarray(mask_x, bool)
    if mask_y is not None:
        m &= np.asarray(mask_y, bool)
    return x[m], y[m]


def pcc(x, y, mask_x=None, mask_y=None, cfg: CorrelationConfig | None = None) -> float:
    """Pearson coefficient over the jointly observed timesteps."""
    cfg = cfg or CorrelationConfig()
    xs, ys = _joint(x, y, mask_x, mask_y)
    if xs.size < cfg.min_overlap:
        raise UndefinedCorrelationError(
            f"only {xs.size} joint observations (need {cfg.min_overlap})"
        )
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx <= 0 or syy <= 0:
        raise UndefinedCorrelationError("zero variance on the overlap")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def fpcc(rho, cfg: CorrelationConfig | None = None):
    """ln((1 + rho) / (1 - rho + alpha)). Finite at rho = 1; -inf at rho = -1."""
    cfg = cfg or CorrelationConfig()
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log1p(rho) - np.log(1.0 - rho + cfg.alpha)
    return float(out) if out.ndim == 0 else out


def mfp_from_rho(rho, cfg: CorrelationConfig | None = None):
    """1 - min{softplus(a + 4*fpcc)/4, 1}, clamped strictly below 1."""
    cfg = cfg or CorrelationConfig()
    z = cfg.a + 4.0 * np.asarray(fpcc(rho, cfg))
    likelihood = np.logaddexp(0.0, z) / 4.0
    out = 1.0 - np.minimum(likelihood, 1.0)
    out = np.minimum(out, _BELOW_ONE)
    return float(out) if out.ndim == 0 else out


def mfp(x, y, mask_x=None, mask_y=None, cfg: CorrelationConfig | None = None) -> float:
    return mfp_from_rho(pcc(x, y, mask_x, mask_y, cfg), cfg)


def pairwise_pcc(values: np.ndarray, mask: np.ndarray, min_overlap: int = 3):
    """Pairwise-complete Pearson matrix for all rows.

    Returns ``(rho, overlap, valid)``; ``rho`` is NaN where the pair has fewer
    than ``min_overlap`` joint observations or zero variance on the overlap.
    """
    mask = np.asarray(mask, bool)
    w = mask.astype(float)
    # Centre each row on its own observed mean; PCC is shift invariant and
    # this keeps the sums of squares well conditioned around ~230 V.
    cnt = w.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = np.where(cnt > 0, (np.where(mask, values, 0.0)).sum(axis=1, keepdims=True) / cnt, 0.0)
    x = np.where(mask, values - mu, 0.0)
    x2 = x * x
    n = w @ w.T
    sx = x @ w.T          # sum of x_i over joint observations of (i, j)
    sy = sx.T
    sxy = x @ x.T
    sxx = x2 @ w.T
    syy = sxx.T
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = sxy - sx * sy / n
        vx = sxx - sx * sx / n
        vy = syy - sy * sy / n
        rho = cov / np.sqrt(vx * vy)
    # Relative variance floor: catches series constant on the overlap.
    scale = np.maximum(sxx, 1e-300)
    valid = (n >= min_overlap) & (vx > 1e-12 * scale) & (vy > 1e-12 * scale.T)
    rho = np.where(valid, np.clip(rho, -1.0, 1.0), np.nan)
    np.fill_diagonal(rho, np.where(np.diag(valid), 1.0, np.nan))
    return rho, n, valid


def pairwise_euclidean(values: np.ndarray, mask: np.ndarray, min_overlap: int = 1):
    """Overlap-scaled Euclidean distance sqrt(sum (x-y)^2 * T / overlap).

    Returns ``(dist, overlap, valid)``.
    """
    mask = np.asarray(mask, bool)
    t = mask.shape[1]
    w = mask.astype(float)
    # A common shift leaves every difference unchanged and keeps the expanded
    # square below from cancelling digits on ~230 V magnitudes.
    shift = float(values[mask].mean()) if mask.any() else 0.0
    x = np.where(mask, values - shift, 0.0)
    n = w @ w.T
    x2 = x * x
    sq = x2 @ w.T + w @ x2.T - 2.0 * (x @ x.T)
    sq = np.maximum(sq, 0.0)
    valid = n >= max(min_overlap, 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.sqrt(sq * t / n)
    dist = np.where(valid, dist, np.nan)
    np.fill_diagonal(dist, 0.0)
    return dist, n, valid


def distance_matrix(
    panel: VoltagePanel,
    kind: str = "mfp",
    cfg: CorrelationConfig | None = None,
    fill_invalid: bool = False,
) -> DistanceMatrix:
    """All-pairs MFP or Euclidean distances for the panel's meters.

    Invalid pairs (too little overlap, constant series) come back as NaN with
    ``invalid`` set, unless ``fill_invalid`` replaces them by a maximal
    distance.
    """
    cfg = cfg or CorrelationConfig()
    if panel.n_meters < 2:
        raise DataError("distance matrix needs at least two meters")
    kind = kind.lower()
    if kind == "mfp":
        rho, _, valid = pairwise_pcc(panel.values, panel.mask, cfg.min_overlap)
        d = np.where(valid, mfp_from_rho(np.nan_to_num(rho), cfg), np.nan)
        fill = INVALID_FILL
    elif kind == "euclidean":
        # one joint cell suffices for a scaled Euclidean distance
        d, _, valid = pairwise_euclidean(panel.values, panel.mask)
        fill = float(np.nanmax(d)) * 2 if np.any(valid) else 1.0
    else:
        raise DataError(f"unknown distance kind {kind!r}")
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    invalid = np.isnan(d)
    if fill_invalid and invalid.any():
        d = np.where(invalid, fill, d)
        invalid = np.zeros_like(invalid)
    return DistanceMatrix(d=d, kind=kind, meter_order=panel.meter_ids, invalid=invalid)


def correlation_distance(panel: VoltagePanel, min_overlap: int = 3, fill_invalid: bool = False):
    """Distance 1 - min{max{rho, 0}, 1} used for phase grouping."""
    rho, _, valid = pairwise_pcc(panel.values, panel.mask, min_overlap)
    d = np.where(valid, 1.0 - np.clip(np.nan_to_num(rho), 0.0, 1.0), np.nan)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    invalid = np.isnan(d)
    if fill_invalid and invalid.any():
        d = np.where(invalid, 1.0, d)
        invalid = np.zeros_like(invalid)
    return DistanceMatrix(d=d, kind="correlation", meter_order=panel.meter_ids, invalid=invalid)
