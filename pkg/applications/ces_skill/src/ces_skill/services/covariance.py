import logging

import numpy as np

from ces_skill.core.settings import settings
from ces_skill.models.estimation import MomentSet

LOGGER = logging.getLogger(__name__)

# reciprocal condition number below which a matrix is treated as singular
_SINGULAR_RCOND = 1e-14


def is_singular(matrix: np.ndarray) -> bool:
    if not np.all(np.isfinite(matrix)):
        return True
    return bool(1.0 / np.linalg.cond(matrix) < _SINGULAR_RCOND)


def invert_weight(matrix: np.ndarray) -> tuple[np.ndarray, bool]:
    """Inverse of a moment covariance; a ridge is added when it is singular."""
    matrix = 0.5 * (matrix + matrix.T)
    ridged = is_singular(matrix)
    if ridged:
        LOGGER.warning("Singular moment covariance, adding ridge %g", settings.ridge)
        matrix = matrix + settings.ridge * np.eye(matrix.shape[0])
    inverse = np.linalg.inv(matrix)
    return 0.5 * (inverse + inverse.T), ridged


def cluster_moment_cov(moments: MomentSet) -> np.ndarray:
    """(1/N) sum over clusters of u_c u_c', u_c the summed contributions of cluster c."""
    h = moments.contributions
    labels, index = np.unique(moments.clusters, return_inverse=True)
    sums = np.zeros((len(labels), h.shape[1]))
    np.add.at(sums, index, h)
    return sums.T @ sums / moments.n_obs


def observation_moment_cov(moments: MomentSet) -> np.ndarray:
    h = moments.contributions
    return h.T @ h / moments.n_obs


def cov_sandwich(
    jacobian: np.ndarray, weight: np.ndarray, moment_cov: np.ndarray, n_obs: int
) -> np.ndarray:
    bread_inner = jacobian.T @ weight @ jacobian
    if is_singular(bread_inner):
        LOGGER.warning("G'WG is singular, using the pseudo-inverse")
        bread = np.linalg.pinv(bread_inner)
    else:
        bread = np.linalg.inv(bread_inner)
    butter = jacobian.T @ weight @ moment_cov @ weight @ jacobian
    cov = bread @ butter @ bread / n_obs
    return 0.5 * (cov + cov.T)


def partialled_block(
    jacobian: np.ndarray, weight: np.ndarray, moment_cov: np.ndarray, n_obs: int, k: int = 2
) -> np.ndarray | None:
    """
    Sandwich covariance of the first `k` parameters with the others partialled out.

    With A = C'G and W = CC', the leading columns of A are residualised on the
    rest; H = (A1'A1)^-1 A1' then gives the block as H C'SC H' / N. Only the
    leading columns need to be identified. None when they are not.
    """
    root = np.linalg.cholesky(weight)
    a = root.T @ jacobian
    head, rest = a[:, :k], a[:, k:]
    if rest.shape[1]:
        coef, *_ = np.linalg.lstsq(rest, head, rcond=None)
        head = head - rest @ coef
    inner = head.T @ head
    if is_singular(inner):
        return None
    h = np.linalg.solve(inner, head.T) @ root.T
    cov = h @ moment_cov @ h.T / n_obs
    return 0.5 * (cov + cov.T)


def _with_block(
    jacobian: np.ndarray, weight: np.ndarray, moment_cov: np.ndarray, n_obs: int
) -> np.ndarray:
    cov = cov_sandwich(jacobian, weight, moment_cov, n_obs)
    block = partialled_block(jacobian, weight, moment_cov, n_obs)
    if block is not None:
        cov[:2, :2] = block
    return cov


def clustered_cov(moments: MomentSet, jacobian: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """
    Sandwich covariance of the estimator with moment contributions clustered by
    country. The sigma, rho block has the trend coefficients partialled out.
    """
    n_clusters = len(np.unique(moments.clusters))
    if n_clusters < jacobian.shape[1]:
        LOGGER.warning(
            "%d clusters for %d parameters: clustered covariance is rank deficient",
            n_clusters,
            jacobian.shape[1],
        )
    return _with_block(jacobian, weight, cluster_moment_cov(moments), moments.n_obs)


def unclustered_cov(moments: MomentSet, jacobian: np.ndarray, weight: np.ndarray) -> np.ndarray:
    return _with_block(jacobian, weight, observation_moment_cov(moments), moments.n_obs)
