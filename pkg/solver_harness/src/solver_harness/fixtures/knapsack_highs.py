"""0/1 knapsack, capacity 5, items (weight, value): (2,3), (3,4), (4,5)."""
import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

weights = np.array([2.0, 3.0, 4.0])
values = np.array([3.0, 4.0, 5.0])
res = milp(
    c=-values,
    constraints=LinearConstraint(weights[np.newaxis, :], ub=[5.0]),
    integrality=np.ones(3),
    bounds=Bounds(0.0, 1.0),
)
if not res.success:
    raise SystemExit(f"solver failed: {res.message}")
print(f"RESULT: {-res.fun}")
