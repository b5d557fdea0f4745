"""
Backward sweep versus forward sensitivities
===========================================

Time one full covariance gradient on constant-velocity models of growing
size. Forward sensitivities need one filter sweep per free entry of the
parameter; the backward sweep needs one pass in total.
"""

from kfgrad.bench import run_bench

# a shorter horizon keeps this quick; `kfgrad bench` runs the full 1440 steps
N = 300

for target in ("R", "P0"):
    rows = run_bench(dims=(2, 4, 6), N=N, reps=5, methods=("backward", "sensitivity"),
                     target=target)
    print(f"gradient with respect to {target}, N = {N}")
    for row in rows:
        line = f"  {row.method:<12} d={row.d}  {row.median_ms:8.1f} ms  {row.multiplies:>10} mults"
        if row.method == "sensitivity":
            line += f"  ({row.ratio_to_backward:.1f}x slower)"
        print(line)

# R has m(m+1)/2 free entries and P0 has d(d+1)/2, so the gap is far wider
# for P0: the ratio tracks the number of free entries
