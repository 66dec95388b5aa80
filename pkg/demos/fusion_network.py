"""
A two-branch network from scratch
=================================

An image branch and a covariate branch each produce a feature vector; the
two are concatenated and a single dense layer makes the prediction. Every
gradient is hand-derived, so we check it against finite differences before
training anything.
"""

import numpy as np

from sdmfusion.fusion import (FusionConfig, FusionModel, ModelParams, TrainConfig, build_dataset,
                              concat_features, loss_and_grad, predict, train)
from sdmfusion.metrics import mae
from sdmfusion.occurrence import split_train_test
from sdmfusion.testkit import WorldConfig, generate_world, max_relative_error, numerical_gradient

cfg = FusionConfig(image_shape=(1, 8, 8), n_tabular=10, conv_channels=(4, 8), img_features=16,
                   tab_hidden=(16,), tab_features=8, task="regression")
model = FusionModel.create(cfg)
print("parameters:", model.params.size, "| concat width:", cfg.concat_dim)

# Gradient check on a tiny batch.
rng = np.random.default_rng(0)
images, tabular = rng.normal(size=(4, 1, 8, 8)), rng.normal(size=(4, 10))
y = np.array([0.0, 2.0, 7.0, 30.0])
model.params.flat[:] += rng.normal(0, 0.05, model.params.size)  # move biases off zero
_, grad = loss_and_grad(model, images, tabular, y)
numeric = numerical_gradient(
    lambda th: loss_and_grad(FusionModel(cfg, ModelParams(cfg.layout(), th), model.norm), images, tabular, y)[0],
    model.params.flat.copy())
print("max relative gradient error: %.2e" % max_relative_error(grad, numeric))
print("fused features for one cell:", concat_features(model, images[:1], tabular[:1]).shape)

# Fit counts on a synthetic world using NDVI patches plus covariates.
world = generate_world(WorldConfig(lam=40.0), seed=1)
train_cells, test_cells = split_train_test(world.presence_samples(), 0.8, seed=1)
data, test = build_dataset(train_cells, "NDVI"), build_dataset(test_cells, "NDVI")
result = train(FusionModel.create(cfg), data, TrainConfig(epochs=30, seed=1), test=test)
for rec in result.trace[::5]:
    print(f"epoch {rec.epoch:3d}  train MAE {rec.train_metric:7.2f}  test MAE {rec.test_metric:7.2f}")
baseline = mae(test.targets, np.full(len(test), data.targets.mean()))
print("test MAE %.2f vs predicting the mean %.2f" % (mae(test.targets, predict(result.model, test.images,
                                                                                 test.tabular)), baseline))
