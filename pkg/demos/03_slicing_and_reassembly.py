#!/usr/bin/env python3
"""Width-wise slicing and overlap-averaged reassembly.

Full-width B-scans are cut into 256-wide tiles for the network; widths
that are not multiples of 256 get a right-aligned final tile whose overlap
is averaged on the way back.
"""

import numpy as np

from cornet import data

for width in (1024, 1000, 400):
    image = np.zeros((4, width))
    slices = data.slice_width(image)
    print(f"width {width}: offsets {slices.offsets}"
          + ("" if width % 256 == 0 else "  (last tile right-aligned)"))

# Round trip: slicing a score map and averaging it back is exact.
rng = np.random.default_rng(0)
scores = rng.random((4, 32, 1000))
slices = data.slice_width(scores)
back = data.reassemble(slices.tiles_of(scores), slices)
print("round-trip exact:", np.array_equal(back, scores))

# Disagreeing tiles average in the overlap.
tiny = data.slice_width(np.zeros((1, 6)), tile_w=4)
merged = data.reassemble([np.full((1, 4), 0.2), np.full((1, 4), 0.4)], tiny)
print("overlap average:", merged[0])

# argmax over averaged class scores gives the label map
probs = rng.random((4, 8, 520))
labels = data.scores_to_labels(probs)
print("label values:", sorted(set(labels.ravel().tolist())))
