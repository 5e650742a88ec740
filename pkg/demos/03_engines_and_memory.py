"""
Batched versus sample-wise training steps
=========================================

Same gradients, very different peak memory.
"""

from samplewise_rnnt.bench import BenchConfig, synth_inputs
from samplewise_rnnt.engine import MODES, EngineConfig, compare_results, run
from samplewise_rnnt.tensor import AllocationTracker, use_tracker

cfg = BenchConfig(B=16, T=50, U=10, H=64, H_A=64, H_L=64, V=128)
print("true lengths:", synth_inputs(cfg)[0].t_len.tolist())

results = {}
for mode in MODES:
    tracker = AllocationTracker()
    with use_tracker(tracker):
        batch, jp, op = synth_inputs(cfg)
        tracker.reset()
        L, grads = run(batch, jp, op, EngineConfig(mode=mode, worker_count=4))
        results[mode] = (L, grads)
        print(f"{mode:<18} loss={L:.6f}  peak={tracker.peak_bytes / 2**20:7.2f} MiB")

# every sample-wise variant reproduces the batched gradients
for mode in MODES[1:]:
    worst = max(compare_results(results[mode], results["batched"]).values())
    print(f"{mode:<18} max relative error vs batched: {worst:.2e}")

# peak versus batch size
for B in (1, 4, 16, 64):
    row = []
    for mode in ("batched", "sample_wise"):
        tracker = AllocationTracker()
        with use_tracker(tracker):
            batch, jp, op = synth_inputs(BenchConfig(B=B, T=50, U=10, H=64, H_A=64, H_L=64, V=128))
            tracker.reset()
            run(batch, jp, op, EngineConfig(mode=mode))
            row.append(tracker.peak_bytes / 2**20)
    print(f"B={B:<3} batched {row[0]:8.2f} MiB   sample_wise {row[1]:6.2f} MiB")
