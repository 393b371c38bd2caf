#!/usr/bin/env python3
"""Train a miniature model end to end on small phantoms.

Uses a reduced profile (300x128 pixels) so the whole loop runs in about a
minute on a laptop: synthesize volumes, train with the plateau/early-stop
protocol, run sliced inference, fit curves, and score MADLBP/Hausdorff.
"""

import os
import time

import numpy as np

from cornet import data, metrics, phantom, postproc
from cornet._runtime import tune_runtime
from cornet.cli import infer_volume
from cornet.network import NetworkConfig, build_network, save_checkpoint
from cornet.training import TrainConfig, tiles_from_volume, train

tune_runtime()

profile = data.DeviceProfile("mini-demo", 12.0, 3.0, 300, 128, 4)
train_vols = [phantom.synth_volume(100 + i, profile, name=f"train{i}") for i in range(3)]
test_vol = phantom.synth_volume(900, profile, name="test0")

samples = []
for vol in train_vols:
    samples.extend(tiles_from_volume(vol))
print(f"{len(samples)} training tiles of shape {samples[0].image.shape}")

net = build_network(
    NetworkConfig(depth=2, growth=(6, 10), bottleneck_channels=6, dilations=(1, 2, 4)),
    seed=3, dtype=np.float32,
)
cfg = TrainConfig(learning_rate=5e-3, batch_size=2, max_epochs=25, seed=3,
                  validation_fraction=0.34)
t0 = time.time()
net, history = train(net, samples, cfg, log=print)
print(f"trained {history.stopping_epoch} epochs in {time.time() - t0:.0f}s, "
      f"best val {history.best_val_loss:.5f} at epoch {history.best_epoch}")

out_dir = os.path.join(os.path.dirname(__file__), "output", "mini_model")
os.makedirs(out_dir, exist_ok=True)
save_checkpoint(net, os.path.join(out_dir, "model.ckpt"))
history.to_csv(os.path.join(out_dir, "history.csv"))

# sliced inference on the held-out volume, then curve metrics vs the truth
_, curve_sets = infer_volume(net, test_vol)
for name in data.INTERFACES:
    mads, hds = [], []
    for i, pred in enumerate(curve_sets):
        pts = postproc.ColumnPoints(name, np.arange(profile.width_px, dtype=float),
                                    test_vol.curves[i][name])
        truth = postproc.fit_lowess(pts, width=profile.width_px, profile=profile,
                                    clip_height=profile.height_px)
        G = metrics.PointSet.from_curve(truth.y_of_x, profile)
        S = metrics.PointSet.from_curve(pred[name].y_of_x, profile)
        mads.append(metrics.madlbp(G, S, profile.width_px))
        hds.append(metrics.hausdorff(G, S))
    print(f"{name}: MADLBP {np.mean(mads):.3f} px   HD {np.mean(hds):.2f} um")
print(f"artifacts in {out_dir}")
