"""
Tracked tensors and the allocation ledger
=========================================

Every Tensor charges its bytes to the active AllocationTracker.
"""

import numpy as np

from samplewise_rnnt.errors import OutOfMemoryError
from samplewise_rnnt.tensor import AllocationTracker, alloc, crop, use_tracker

tracker = AllocationTracker()
with use_tracker(tracker):
    a = alloc([4, 100], "f32", name="a")
    b = alloc([4, 100], "f64", name="b")
    print("live after two allocs:", tracker.live_bytes)  # 1600 + 3200

    # freeing refunds the bytes; the peak stays put
    b.free()
    print("live / peak:", tracker.live_bytes, tracker.peak_bytes)

    # select() is a borrowed view, so it costs nothing
    row = a.select(2)
    print("view owned?", row.owned, "live:", tracker.live_bytes)

    # crop copies a prefix and pays for it
    a.data[:] = np.arange(400).reshape(4, 100)
    c = crop(a, [2, 3])
    print(c.data, "live:", tracker.live_bytes)

# a ceiling turns the tracker into a small simulated device
small = AllocationTracker(ceiling_bytes=1024)
with use_tracker(small):
    try:
        alloc([16, 32], "f32", name="too_big")
    except OutOfMemoryError as e:
        print("oom:", e.name, e.nbytes, "bytes")
