import logging

import robustpose

logging.basicConfig(format="%(name)s: %(message)s", level=logging.INFO)

model = robustpose.builtin_model("box", (0.3, 0.2, 0.1), m=1024)
camera = robustpose.CameraIntrinsics()

# the simulated domain is clean, the "real" one is noisy and has outliers
sim_cfg = robustpose.SceneConfig(blob_count=0, erosion_radius=0)
real_cfg = robustpose.SceneConfig(gaussian_noise_std=0.005, outlier_rate=0.2)
sim_scenes = robustpose.generate_scenes(model, sim_cfg, 100, seed=0)
real_scenes = [s.withoutGroundTruth()
               for s in robustpose.generate_scenes(model, real_cfg, 60, seed=1)]
eval_scenes = robustpose.generate_scenes(model, real_cfg, 20, seed=2)

train_cfg = robustpose.TrainConfig(epochs=10, iterations=30, batch_size=10)
corrector_cfg = robustpose.CorrectorConfig.forModel(model, max_iters=50)
cert_cfg = robustpose.CertificateConfig.forModel(model)

detectors = [robustpose.pretrain_supervised(
	robustpose.KeypointDetector(model, robustpose.DetectorConfig(), seed=s),
	sim_scenes, train_cfg) for s in (1, 2)]

trained, log = robustpose.self_train(detectors, real_scenes, model, corrector_cfg,
                                     cert_cfg, train_cfg, camera,
                                     eval_scenes=eval_scenes)
log.save("train_log.csv")

for row in robustpose.evaluate_detectors(trained, eval_scenes, model, corrector_cfg,
                                         cert_cfg, camera):
	print(row)
for index, detector in enumerate(trained):
	robustpose.save_detector(detector, "detector_{}".format(index + 1))
