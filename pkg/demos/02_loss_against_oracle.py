"""
Transducer loss versus brute-force path enumeration
===================================================

"""

import math

import numpy as np

from samplewise_rnnt.loss import transducer_loss_sample
from samplewise_rnnt.oracle import count_paths, enumerate_paths_loss, fd_tolerance, finite_diff, uniform_loss
from samplewise_rnnt.tensor import AllocationTracker, Tensor, use_tracker

rng = np.random.default_rng(0)
T, U, V = 4, 2, 3
h = rng.normal(size=(T, U + 1, V))
labels = [2, 1]

with use_tracker(AllocationTracker()):
    L, dh = transducer_loss_sample(Tensor.from_array(h, "f64"), labels)

# the oracle walks every one of the C(T+U-1, U) alignments explicitly
print("paths:", count_paths(T, U), "=", math.comb(T + U - 1, U))
print("lattice loss:", L)
print("oracle  loss:", enumerate_paths_loss(h, None, labels))

# with all-zero scores every path has probability V^-(T+U)
with use_tracker(AllocationTracker()):
    L0, _ = transducer_loss_sample(Tensor.from_array(np.zeros((5, 4, 4)), "f64"), [1, 1, 1])
print("uniform:", L0, "closed form:", uniform_loss(5, 3, 4))


# gradient against central differences
def f(x):
    with use_tracker(AllocationTracker()):
        return transducer_loss_sample(Tensor.from_array(x, "f64"), labels)[0]


numeric = finite_diff(f, h)
print("max |dh - fd|:", np.abs(dh.data - numeric).max())
print("within tolerance:", bool(np.all(np.abs(dh.data - numeric) <= fd_tolerance(numeric))))

# each cell's gradient sums to zero over the vocabulary
print("max |sum_k dh|:", np.abs(dh.data.sum(-1)).max())
