"""Tail-bound curves for the figure setting M=300, beta=rho=0.9.

For each probability p the deviation eps(p) beyond which the main tail
bound drops below p, at a few iterations, plus the expectation and
norm-bounded-error curves.
"""

from proxtail.cli import bound_fan_rows

rows = bound_fan_rows(M=300, beta=0.9, rho=0.9, k_range=(1, 100))
ks = (1, 10, 25, 50, 100)
def order(name):
    return (0, -float(name.split("=")[1])) if name.startswith("main") else (1, name)


names = sorted({r[2] for r in rows}, key=order)
print("curve".ljust(22) + "".join(f"k={k:<10d}" for k in ks))
for name in names:
    vals = {r[0]: r[1] for r in rows if r[2] == name}
    print(name.ljust(22) + "".join(f"{vals[k]:<12.4g}" for k in ks))
