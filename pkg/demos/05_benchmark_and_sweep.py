"""
Benchmarks, sweeps and a simulated memory ceiling
=================================================

"""

from samplewise_rnnt.bench import BenchConfig, analytic_sizes, emit_report, run_benchmark, sweep
from samplewise_rnnt.engine import batched_4d_bytes

# full-size shapes are only ever sized, never allocated here
full = BenchConfig(B=16, T=500, U=100, H=1024, H_A=1024, H_L=1024, V=4096)
print({k: f"{v / 2**30:.2f} GiB" for k, v in analytic_sizes(full).items()})

cfg = BenchConfig(B=16, warmup_steps=1, bench_steps=3)
ceiling = batched_4d_bytes(16, cfg.T, cfg.U, cfg.H, cfg.V) // 2
results = []
for mode in ("batched", "sample_wise", "sample_wise_pr", "sample_wise_pr_dp"):
    results.append(run_benchmark(BenchConfig(**{**cfg.__dict__, "mode": mode, "allocation_ceiling_bytes": ceiling})))
print(emit_report(results, "csv"))

# batch-size sweep: batched grows with B, sample-wise barely moves
base = BenchConfig(T=50, U=10, H=64, H_A=64, H_L=64, V=128, warmup_steps=0, bench_steps=1, mode="sample_wise")
print(emit_report(sweep(base, "batch_size", [1, 2, 4, 8, 16]), "csv"))

# length sweep with explicit TxU points
print(emit_report(sweep(base, "lengths", ["50x10", "139x27", "232x46"]), "csv"))
