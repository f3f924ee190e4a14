"""
Trend Fitting Helpers
Thin wrappers around scikit-learn's LinearRegression used by every exponent,
slope and extrapolation fit in the laboratory.
"""

import logging
from typing import List, Optional

import numpy as np
from pydantic import BaseModel
from sklearn.linear_model import LinearRegression

from errors import FitRejectedError

logger = logging.getLogger(__name__)


class LineFit(BaseModel):
    slope: float
    intercept: float
    residual: float        # RMS of the residuals
    r2: float
    n_points: int


class MultiFit(BaseModel):
    coefficients: List[float]
    intercept: float
    residual: float
    n_points: int


def _clean(x: np.ndarray, y: np.ndarray):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    keep = np.isfinite(x) & np.isfinite(y)
    return x[keep], y[keep]


def fit_line(x, y, min_points: int = 3) -> LineFit:
    """Least-squares line y = slope·x + intercept."""
    x, y = _clean(x, y)
    if x.size < min_points:
        raise FitRejectedError(f"need at least {min_points} points, got {x.size}")

    model = LinearRegression()
    model.fit(x.reshape(-1, 1), y)
    pred = model.predict(x.reshape(-1, 1))
    residual = float(np.sqrt(np.mean((y - pred) ** 2)))
    r2 = float(model.score(x.reshape(-1, 1), y)) if np.ptp(y) > 0 else 1.0

    return LineFit(
        slope=float(model.coef_[0]),
        intercept=float(model.intercept_),
        residual=residual,
        r2=r2,
        n_points=int(x.size),
    )


def fit_loglog(x, y, min_points: int = 3) -> LineFit:
    """Slope of log|y| against log x; non-positive samples are dropped."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.abs(np.asarray(y, dtype=float).ravel())
    keep = (x > 0) & (y > 0)
    if keep.sum() < x.size:
        logger.debug(f"[Fit] dropped {x.size - keep.sum()} non-positive samples")
    return fit_line(np.log(x[keep]), np.log(y[keep]), min_points=min_points)


def fit_multi(columns: List[np.ndarray], y, min_points: Optional[int] = None) -> MultiFit:
    """y = intercept + Σ c_k·columns[k]."""
    X = np.column_stack([np.asarray(c, dtype=float).ravel() for c in columns])
    y = np.asarray(y, dtype=float).ravel()
    keep = np.all(np.isfinite(X), axis=1) & np.isfinite(y)
    X, y = X[keep], y[keep]
    needed = min_points or (X.shape[1] + 2)
    if y.size < needed:
        raise FitRejectedError(f"need at least {needed} points for a {X.shape[1]}-regressor fit, got {y.size}")

    model = LinearRegression()
    model.fit(X, y)
    residual = float(np.sqrt(np.mean((y - model.predict(X)) ** 2)))
    return MultiFit(
        coefficients=[float(c) for c in model.coef_],
        intercept=float(model.intercept_),
        residual=residual,
        n_points=int(y.size),
    )
