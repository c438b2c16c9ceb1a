"""Infeasible pair of bounds: x >= 1 together with x <= 0."""
from scipy.optimize import linprog

res = linprog(
    c=[1.0],
    A_ub=[[1.0], [-1.0]],
    b_ub=[0.0, -1.0],
    method="highs",
)
if res.status != 0:
    print(f"INFEASIBLE: status {res.status} {res.message}")
    raise SystemExit(3)
print(f"RESULT: {res.fun}")
