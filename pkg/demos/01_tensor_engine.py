#!/usr/bin/env python3
"""Tour of the differentiable tensor engine.

Builds the layer primitives by hand, checks a couple of textbook
convolution results, and runs the finite-difference gradient suite.
"""

import numpy as np

from cornet import gradcheck
from cornet import tensor as T

# A 3x3 all-ones kernel over a 3x3 all-ones image (padding 1) counts the
# neighbours of each pixel: 9 in the middle, 6 on edges, 4 in corners.
x = T.TensorND(np.ones((1, 1, 3, 3)))
spec = T.ConvSpec(1, 1, (3, 3), padding=(1, 1),
                  weights=T.TensorND(np.ones((1, 1, 3, 3)), requires_grad=True),
                  bias=T.TensorND(np.zeros(1), requires_grad=True))
print("neighbour counts:\n", T.conv2d(x, spec).values[0, 0])

# Dilated kernels widen the receptive field: an impulse smeared by a
# width-3 dilation-2 kernel lands at offsets -2, 0, +2.
impulse = np.zeros((1, 1, 1, 5))
impulse[0, 0, 0, 2] = 1.0
dilated = T.ConvSpec(1, 1, (1, 3), dilation=(1, 2), padding=(0, 2),
                     weights=T.TensorND(np.ones((1, 1, 1, 3))),
                     bias=T.TensorND(np.zeros(1)))
print("dilated impulse response:", T.conv2d(T.TensorND(impulse), dilated).values.ravel())

# Reverse-mode gradients: mean squared error of a conv against a target.
rng = np.random.default_rng(0)
xt = T.TensorND(rng.normal(size=(1, 2, 8, 8)))
learned = T.ConvSpec.he_init(2, 3, (3, 3), padding=(1, 1), rng=rng)
target = T.TensorND(rng.normal(size=(1, 3, 8, 8)))
loss = T.mse_loss(T.conv2d(xt, learned), target)
loss.backward()
print("loss:", loss.item(), " |dW|:", float(np.abs(learned.weights.grad).sum()))

# One ADAM step moves each weight by roughly the learning rate at first.
state = T.AdamState.create([learned.weights, learned.bias], learning_rate=1e-2)
before = learned.weights.values.copy()
T.adam_step([learned.weights, learned.bias], state)
print("median |step| / lr:", float(np.median(np.abs(before - learned.weights.values))) / 1e-2)

# Every op's analytic gradient is checked against central differences.
print("\nfinite-difference spot check (5 cases per op):")
for rep in gradcheck.run_suite(cases_per_op=5):
    print(f"  {rep.name:20s} max rel err {rep.max_rel_err:.2e}  {'ok' if rep.passed else 'BAD'}")
