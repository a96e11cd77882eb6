import robustpose

# write a small dataset, read it back and certify the stored ground truth
model = robustpose.builtin_model("lbracket", (0.25, 0.25, 0.08), m=1024)
cfg = robustpose.SceneConfig(gaussian_noise_std=0.002, outlier_rate=0.05)

scenes = robustpose.generate_scenes(model, cfg, count=5, seed=3)
robustpose.save_scene_dataset("lbracket_scenes", scenes, model, cfg)

loaded, manifest = robustpose.load_scene_dataset("lbracket_scenes")
cert_cfg = robustpose.CertificateConfig.forModel(model)
for index, scene in enumerate(loaded):
	result = robustpose.observable_correctness(scene.X, scene.M, scene.T_star,
	                                           model, cfg.camera, cert_cfg)
	print("scene {}: {} points, certified: {}".format(index, scene.X.n, result.oc))

# the same is available on the command line:
#   robustpose gen-scenes --out lbracket_scenes
#   robustpose certify --scene lbracket_scenes --index 0 --offset 0.5
