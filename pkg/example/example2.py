import numpy as np
import robustpose

rng = np.random.default_rng(0)

# 700 points in a small ball, 300 outliers spread around it
inliers = np.array([[1.0], [1.0], [1.0]]) + rng.normal(0, 0.01, size=(3, 700))
outliers = rng.uniform(-1, 1, size=(3, 300))
colors = np.column_stack([np.tile([[0.8], [0.3], [0.2]], 700), rng.random((3, 300))])
flags = np.r_[np.zeros(700, dtype=bool), np.ones(300, dtype=bool)]
X = robustpose.PointCloud(np.column_stack([inliers, outliers]), colors)

centroid, weights = robustpose.robust_centroid(X, robustpose.GncConfig(c_bar_centroid=0.1))
print("mean:            {}".format(np.round(X.points.mean(axis=1), 3)))
print("robust centroid: {} ({} inliers kept)".format(np.round(centroid, 3),
                                                     int(np.sum(weights > 0.5))))

# keep 64 points, by farthest point sampling and by color-scored pooling
_, sampled = robustpose.fps(X, 64, seed=0, return_indices=True)
params = robustpose.color_distance_pooling_params([0.8, 0.3, 0.2], X.n, 64)
_, pooled = robustpose.robust_pool(X, params, return_indices=True)
print("outliers in the FPS sample:    {:.1%}".format(
	robustpose.outlier_fraction(sampled, flags)))
print("outliers in the pooled sample: {:.1%}".format(
	robustpose.outlier_fraction(pooled, flags)))
