import numpy as np
import robustpose

model = robustpose.builtin_model("cylinder", (0.2, 0.2, 0.15))
scene_cfg = robustpose.SceneConfig()
scene = robustpose.generate_scene(model, scene_cfg, seed=7)

cert_cfg = robustpose.CertificateConfig.forModel(model)

# the ground truth and a pose that is off by half the diameter
T = scene.T_star
candidates = {
	"ground truth": T,
	"shifted": robustpose.Pose(T.rotation, T.translation +
	                           np.array([0.5 * model.diameter, 0, 0])),
}

for name, pose in candidates.items():
	result = robustpose.observable_correctness(scene.X, scene.M, pose, model,
	                                           scene_cfg.camera, cert_cfg)
	print("{:>12}: {}".format(name, result.toJson()))

# the rendered silhouette can be saved as a PGM for inspection
robustpose.render_mask(T, model, scene_cfg.camera, cert_cfg).save("silhouette.pgm")
