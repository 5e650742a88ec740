"""
How many samples fit side by side
=================================

"""

from samplewise_rnnt.engine import compute_parallel_iterations

# one f32 score tensor per sample must fit in the budget
for T, U in [(50, 10), (139, 27), (232, 46), (500, 100)]:
    pi = compute_parallel_iterations(T, U, 4096, budget=1e9)
    print(f"T={T:<4} U={U:<4} V=4096 -> {pi:2d} parallel samples")

# a smaller budget halves the window step by step, never below one
for budget in (1e9, 2.5e8, 6e7, 1e6):
    print(f"budget {budget:.1e}: PI = {compute_parallel_iterations(50, 10, 4096, budget)}")
