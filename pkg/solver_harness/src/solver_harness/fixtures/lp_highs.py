"""Maximize x + y subject to x <= 2, y <= 3, x >= 0, y >= 0."""
from scipy.optimize import linprog

res = linprog(
    c=[-1.0, -1.0],
    A_ub=[[1.0, 0.0], [0.0, 1.0]],
    b_ub=[2.0, 3.0],
    method="highs",
)
if res.status != 0:
    raise SystemExit(f"solver status {res.status}: {res.message}")
print(f"RESULT: {-res.fun}")
