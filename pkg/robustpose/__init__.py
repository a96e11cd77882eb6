"""Outlier-robust object pose estimation from keypoints and point clouds.

Detected keypoints are registered to the annotated keypoints of a known CAD
model. The robust corrector refines them so that the registered model fits
the observed point cloud under a truncated least squares loss, and the
observable correctness certificates decide at runtime whether a pose is
consistent with the point cloud and the segmentation mask. The certificates
gate the self-training of an ensemble of keypoint detectors on unlabeled
scenes.

Usage:
```python
import robustpose

model = robustpose.builtin_model("box", (0.3, 0.2, 0.1))
cfg = robustpose.SceneConfig()
scene = robustpose.generate_scene(model, cfg, seed=1)
y_tilde = robustpose.perturb_keypoints(scene.y_star, 0.4, 0.8, model.diameter, seed=2)

result = robustpose.solve_correction(
    y_tilde, model, scene.X, robustpose.CorrectorConfig.forModel(model))
certificate = robustpose.observable_correctness(
    scene.X, scene.M, result.corrected_pose, model, cfg.camera,
    robustpose.CertificateConfig.forModel(model))
print(certificate.oc)
```

The experiments are run with the `robustpose` command, see
`robustpose --help`.
"""

from .errors import *
from .geometry import *
from .formats import *
from .corrector import *
from .certificates import *
from .robust_points import *
from .synth import *
from .ensemble import *

__version__ = "0.3.0"
