"""Outlier-robust point cloud primitives: the GNC-TLS centroid, score based
robust pooling and the sampling baselines it is compared with."""

import typing
import logging
import warnings
import dataclasses

import numpy as np

from .errors import DimensionMismatch
from .geometry import CadModel
from .geometry import PointCloud
from .geometry import as_points

__all__ = [
    "GncConfig",
    "PoolingParams",
    "gnc_tls_weights",
    "robust_centroid",
    "center_cloud",
    "pooling_scores",
    "robust_pool",
    "fps",
    "random_sample",
    "color_distance_pooling_params",
    "outlier_fraction",
]

logger = logging.getLogger(__name__)

# the smallest initial control parameter of the GNC schedule
MIN_INITIAL_MU = 1e-6

@dataclasses.dataclass
class GncConfig:
    c_bar_centroid: float
    mu_update: float = 1.4
    max_outer_iters: int = 100
    convergence_tol: float = 1e-6

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Check the values.

        Raises
        ------
        ValueError
            When a value is out of its range
        """
        if not self.c_bar_centroid > 0:
            raise ValueError("c_bar_centroid must be positive, got {}.".format(
                self.c_bar_centroid))
        if not self.mu_update > 1:
            raise ValueError("mu_update must be greater than 1, got {}.".format(
                self.mu_update))
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1, got {}.".format(
                self.max_outer_iters))
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive, got {}.".format(
                self.convergence_tol))

    @classmethod
    def forModel(cls, model: CadModel, **overrides) -> "GncConfig":
        """Get the defaults for the model, the clamp is 10% of the diameter."""
        values = {"c_bar_centroid": 0.1 * model.diameter}
        values.update(overrides)
        return cls(**values)

    def toDict(self) -> dict:
        return dataclasses.asdict(self)

def gnc_tls_weights(squared_residuals: np.ndarray, mu: float,
                    c_bar: float) -> np.ndarray:
    """The GNC-TLS weights for the control parameter `mu`.

    Residuals below `mu / (mu + 1) c_bar^2` get weight 1, above
    `(mu + 1) / mu c_bar^2` weight 0, in between the weight falls off as
    `c_bar sqrt(mu (mu + 1)) / r - mu`.
    """
    r2 = np.asarray(squared_residuals, dtype=float)
    c2 = c_bar ** 2
    lower = mu / (mu + 1) * c2
    upper = (mu + 1) / mu * c2

    weights = np.zeros_like(r2)
    weights[r2 <= lower] = 1.0
    between = (r2 > lower) & (r2 < upper)
    weights[between] = (c_bar * np.sqrt(mu * (mu + 1)) / np.sqrt(r2[between]) - mu)
    return np.clip(weights, 0.0, 1.0)

def _weighted_mean(points: np.ndarray, weights: np.ndarray) -> typing.Optional[np.ndarray]:
    total = np.sum(weights)
    if total <= 0:
        return None
    return points @ weights / total

def robust_centroid(X: typing.Union[PointCloud, np.ndarray],
                    cfg: GncConfig) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Estimate the centroid of the cloud under a TLS loss with graduated
    non-convexity.

    The estimate starts at the plain mean. The surrogate loss starts convex
    and is tightened by `cfg.mu_update` per outer iteration, alternating a
    weighted mean with a weight update, until the weights are stable.

    If no point keeps a positive weight the plain mean is returned with all
    weights zero and a `RuntimeWarning` is issued.

    Parameters
    ----------
    X : PointCloud or numpy.ndarray
        The points
    cfg : GncConfig
        The clamp and schedule

    Returns
    -------
    numpy.ndarray, numpy.ndarray
        The centroid and the final weight of every point
    """
    points = as_points(X)
    n = points.shape[1]
    c_bar = cfg.c_bar_centroid
    c2 = c_bar ** 2

    mean = points.mean(axis=1)
    weights = np.ones(n)
    r2 = np.sum((points - mean[:, None]) ** 2, axis=0)

    denominator = 2 * r2.max() - c2
    if denominator <= 0:
        # every point is an inlier of the convex surrogate
        return mean, weights

    mu = max(c2 / denominator, MIN_INITIAL_MU)
    centroid = mean
    for iteration in range(cfg.max_outer_iters):
        estimate = _weighted_mean(points, weights)
        if estimate is None:
            break
        centroid = estimate

        r2 = np.sum((points - centroid[:, None]) ** 2, axis=0)
        new_weights = gnc_tls_weights(r2, mu, c_bar)
        change = np.max(np.abs(new_weights - weights))
        weights = new_weights
        mu *= cfg.mu_update

        if change < cfg.convergence_tol:
            break

    final = _weighted_mean(points, weights)
    if final is None:
        warnings.warn("All points were rejected by the robust centroid, " +
                      "using the plain mean.", RuntimeWarning)
        logger.debug("GNC centroid rejected all {} points".format(n))
        return mean, np.zeros(n)

    logger.debug("GNC centroid finished after {} outer iterations with {} of "
                 "{} inliers".format(iteration + 1, int(np.sum(weights > 0.5)), n))
    return final, weights

def center_cloud(X: PointCloud, x_bar: np.ndarray) -> PointCloud:
    """Shift the cloud so that `x_bar` becomes the origin."""
    return X.withPoints(X.points - np.asarray(x_bar, dtype=float).reshape(3, 1))

@dataclasses.dataclass(frozen=True, eq=False)
class PoolingParams:
    """The parameters of the robust pooling score map.

    The per-point map is `mlp(f) = w2 . relu(w1 f + b1) + b2`, the scores
    of a cloud are `W [mlp(f_1), ..., mlp(f_n)] + w`.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    mixing_matrix: np.ndarray
    mixing_bias: np.ndarray
    n_prime: int

    def __post_init__(self) -> None:
        for name in ("w1", "b1", "w2", "mixing_matrix", "mixing_bias"):
            value = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(value)):
                raise ValueError("The pooling parameter '{}' is not finite.".format(name))
            value.setflags(write=False)
            object.__setattr__(self, name, value)

        hidden, _ = self.w1.shape
        if self.b1.shape != (hidden, ) or self.w2.shape != (hidden, ):
            raise DimensionMismatch("The score map layers do not fit",
                                    (hidden, ), (self.b1.shape, self.w2.shape))
        if self.mixing_matrix.shape != (self.n, self.n) or self.mixing_bias.shape != (self.n, ):
            raise DimensionMismatch("The mixing layer must be n x n with an " +
                                    "n-vector bias", (self.n, self.n),
                                    (self.mixing_matrix.shape, self.mixing_bias.shape))
        if not 1 <= self.n_prime < self.n:
            raise ValueError("n_prime must be in [1, {}), got {}.".format(
                self.n, self.n_prime))
        if not np.isfinite(self.b2):
            raise ValueError("The pooling parameter 'b2' is not finite.")

    @property
    def n(self) -> int:
        return self.mixing_matrix.shape[0]

    @property
    def d(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def random(cls, d: int, n: int, n_prime: int, hidden: typing.Optional[int]=16,
               seed: typing.Optional[int]=0) -> "PoolingParams":
        """Get randomly initialized parameters, the mixing layer starts at
        the identity."""
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0, 1 / np.sqrt(d), size=(hidden, d)),
                   np.zeros(hidden),
                   rng.normal(0, 1 / np.sqrt(hidden), size=hidden),
                   0.0, np.eye(n), np.zeros(n), n_prime)

    def mlp(self, features: np.ndarray) -> np.ndarray:
        hidden = np.maximum(self.w1 @ features + self.b1[:, None], 0.0)
        return self.w2 @ hidden + self.b2

def pooling_scores(features: np.ndarray, params: PoolingParams) -> np.ndarray:
    """Compute the per-point scores `W mlp(f) + w`.

    Raises
    ------
    DimensionMismatch
        When the feature size or point count does not fit the parameters
    """
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[None, :]
    if features.shape[0] != params.d:
        raise DimensionMismatch("The feature size does not fit the score map",
                                params.d, features.shape[0])
    if features.shape[1] != params.n:
        raise DimensionMismatch("The point count does not fit the mixing layer",
                                params.n, features.shape[1])
    return params.mixing_matrix @ params.mlp(features) + params.mixing_bias

def robust_pool(X: PointCloud, params: PoolingParams,
                return_indices: typing.Optional[bool]=False
                ) -> typing.Union[PointCloud, typing.Tuple[PointCloud, np.ndarray]]:
    """Keep the `n_prime` points with the highest scores.

    Equal scores are ranked by index. The kept points stay in their
    original order and carry their features.

    Raises
    ------
    ValueError
        When the cloud has no features
    DimensionMismatch
        When the cloud does not fit the parameters

    Parameters
    ----------
    X : PointCloud
        The cloud with features
    params : PoolingParams
        The score map
    return_indices : bool, optional
        Whether to return the kept column indices too, default: False

    Returns
    -------
    PointCloud or tuple
        The pooled cloud, and its indices if `return_indices` is True
    """
    if X.features is None:
        raise ValueError("Robust pooling needs a cloud with features.")

    scores = pooling_scores(X.features, params)
    ranking = np.lexsort((np.arange(X.n), -scores))
    indices = np.sort(ranking[:params.n_prime])

    pooled = X.select(indices)
    if return_indices:
        return pooled, indices
    return pooled

def _check_sample_size(n: int, n_prime: int) -> None:
    if not 1 <= n_prime <= n:
        raise ValueError("The sample size must be in [1, {}], got {}.".format(n, n_prime))

def fps(X: PointCloud, n_prime: int, seed: int,
        start_index: typing.Optional[int]=None,
        return_indices: typing.Optional[bool]=False
        ) -> typing.Union[PointCloud, typing.Tuple[PointCloud, np.ndarray]]:
    """Farthest point sampling.

    The first point is drawn with `seed` unless `start_index` is given, each
    further point maximizes the distance to the points selected so far.
    Ties go to the lowest index. The points are returned in selection order.

    Parameters
    ----------
    X : PointCloud
        The cloud
    n_prime : int
        The number of points to select, at most `X.n`
    seed : int
        The seed for the first point
    start_index : int, optional
        The first point, default: None
    return_indices : bool, optional
        Whether to return the selected indices too, default: False

    Returns
    -------
    PointCloud or tuple
        The sample, and its indices if `return_indices` is True
    """
    points = X.points
    n = points.shape[1]
    _check_sample_size(n, n_prime)

    if start_index is None:
        start_index = int(np.random.default_rng(seed).integers(n))

    indices = np.empty(n_prime, dtype=int)
    indices[0] = start_index
    closest = np.sum((points - points[:, start_index, None]) ** 2, axis=0)
    # selected points never win again, so duplicates still give distinct indices
    closest[start_index] = -1.0
    for k in range(1, n_prime):
        indices[k] = int(np.argmax(closest))
        closest = np.minimum(closest, np.sum(
            (points - points[:, indices[k], None]) ** 2, axis=0))
        closest[indices[:k + 1]] = -1.0

    sample = X.select(indices)
    if return_indices:
        return sample, indices
    return sample

def random_sample(X: PointCloud, n_prime: int, seed: int,
                  return_indices: typing.Optional[bool]=False
                  ) -> typing.Union[PointCloud, typing.Tuple[PointCloud, np.ndarray]]:
    """Sample `n_prime` points uniformly without replacement, in their
    original order."""
    _check_sample_size(X.n, n_prime)
    indices = np.sort(np.random.default_rng(seed).choice(X.n, size=n_prime,
                                                          replace=False))
    sample = X.select(indices)
    if return_indices:
        return sample, indices
    return sample

def color_distance_pooling_params(reference: typing.Sequence[float], n: int,
                                  n_prime: int) -> PoolingParams:
    """Get a score map rating points by their color closeness.

    The per-point score is the negative L1 distance of the feature to
    `reference`, built from the hidden units `relu(f - c)` and
    `relu(c - f)`. The mixing layer is the identity.
    """
    reference = np.asarray(reference, dtype=float).reshape(-1)
    d = reference.size
    return PoolingParams(np.vstack([np.eye(d), -np.eye(d)]),
                         np.concatenate([-reference, reference]),
                         -np.ones(2 * d), 0.0, np.eye(n), np.zeros(n), n_prime)

def outlier_fraction(indices: typing.Sequence[int],
                     outlier_flags: typing.Sequence[bool]) -> float:
    """The fraction of the selected indices that are flagged as outliers."""
    indices = np.asarray(indices, dtype=int)
    if indices.size == 0:
        return 0.0
    return float(np.mean(np.asarray(outlier_flags, dtype=bool)[indices]))
