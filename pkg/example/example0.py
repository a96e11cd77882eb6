import robustpose

# the object we are looking for and a clean scene of it
model = robustpose.builtin_model("box", (0.3, 0.2, 0.1))
scene = robustpose.generate_scene(model, robustpose.SceneConfig().clean(), seed=1)

# a poor detector: 80% of the keypoints are off by up to 20% of the diameter
y_tilde = robustpose.perturb_keypoints(scene.y_star, sigma=0.4, f=0.8,
                                       D=model.diameter, seed=2)

cfg = robustpose.CorrectorConfig.forModel(model)
before = robustpose.no_correction(y_tilde, model, scene.X, cfg)
after = robustpose.solve_correction(y_tilde, model, scene.X, cfg)

for name, result in (("registration only", before), ("corrector", after)):
	adds = robustpose.adds_metric(result.corrected_pose, scene.T_star, model)
	print("{:>18}: ADD-S {:.4f} m ({:.1%} of the diameter), {} iterations".format(
		name, adds, adds / model.diameter, result.iterations))
