"""Selective scan: sequential recurrence vs the associative parallel scan.

The core of the recognizer is a diagonal linear recurrence whose
coefficients change at every step. This script shows that the log-depth
doubling scan reproduces the step-by-step reference, that the recurrence
stays bounded on very long inputs, and how the two evaluation modes
trade off wall time.
"""

import time

import numpy as np

from ssmocr import ssm
from ssmocr.tensor import Tensor

rng = np.random.default_rng(0)

print("== equivalence of scan modes ==")
for n_steps in (16, 256, 1024):
    a = rng.uniform(0.0, 1.0, (n_steps, 32, 16))
    bx = rng.standard_normal((n_steps, 32, 16))
    c = rng.standard_normal((n_steps, 16))
    args = [Tensor(v, dtype="f32") for v in (a, bx, c)]
    y_seq = ssm.selective_scan(*args, mode="sequential")
    y_par = ssm.selective_scan(*args, mode="parallel")
    diff = np.abs(y_seq.data - y_par.data).max()
    print(f"  L={n_steps:5d}: max |sequential - parallel| = {diff:.2e}")

print("\n== timing (f32, 64 channels, state 16) ==")
print("the doubling scan runs log2(L) vectorized passes (O(L log L) element")
print("work) instead of L interpreter steps; which wins on a CPU depends on")
print("the shape, while on parallel hardware the log-depth form is the point")
for n_steps in (256, 1024, 4096):
    a = rng.uniform(0.0, 1.0, (n_steps, 64, 16)).astype(np.float32)
    bx = rng.standard_normal((n_steps, 64, 16)).astype(np.float32)
    t0 = time.perf_counter()
    ssm._scan_sequential(a, bx)
    t_seq = time.perf_counter() - t0
    t0 = time.perf_counter()
    ssm._scan_parallel(a, bx)
    t_par = time.perf_counter() - t0
    print(f"  L={n_steps:5d}: sequential {t_seq * 1e3:7.1f} ms   "
          f"parallel {t_par * 1e3:6.1f} ms")

print("\n== stability on a very long input ==")
block = ssm.MambaBlock(8, n_state=4, expand=2, rng=np.random.default_rng(1))
state = block.init_state()
norms = []
for t in range(20_000):
    block.step(rng.uniform(-1, 1, 8).astype(np.float32), state)
    if (t + 1) % 5000 == 0:
        norms.append(np.abs(state.h).max())
        print(f"  after {t + 1:6d} steps: max |state| = {norms[-1]:.4f}")
print("  the negative-definite dynamics keep the state bounded forever")
