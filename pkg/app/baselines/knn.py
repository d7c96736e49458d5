"""
KNN imputation of missing sensor readings.
"""

import logging

import numpy as np
from sklearn.impute import KNNImputer

from app.exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)


def knn_impute(matrix, k: int = 5) -> np.ndarray:
    """
    Fill every NaN with the mean of that column over the ``k`` nearest rows.

    Distances are Euclidean over co-observed columns (``nan_euclidean``, which
    rescales by the fraction of columns present); only rows that observe the
    column being filled count as neighbours. Observed entries are returned
    unchanged.

    Raises:
        DataError: If a row or a column has no observed value.
    """
    if k < 1:
        raise ConfigError("knn_k", f"must be >= 1, got {k}")
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DataError(f"Expected a (T, d) matrix, got shape {matrix.shape}")
    missing = np.isnan(matrix)
    empty_rows = np.flatnonzero(missing.all(axis=1))
    if empty_rows.size:
        raise DataError(f"Row {int(empty_rows[0])} has no observed value",
                        {"rows": empty_rows[:10].tolist(), "count": int(empty_rows.size)})
    empty_cols = np.flatnonzero(missing.all(axis=0))
    if empty_cols.size:
        raise DataError(f"Column {int(empty_cols[0])} has no observed value", {"columns": empty_cols.tolist()})
    if not missing.any():
        return matrix.copy()

    logger.debug(f"KNN imputing {int(missing.sum())} of {matrix.size} entries with k={k}")
    imputed = KNNImputer(n_neighbors=k, weights='uniform', metric='nan_euclidean').fit_transform(matrix)
    imputed[~missing] = matrix[~missing]
    return imputed
