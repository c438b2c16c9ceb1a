"""Same 0/1 knapsack through CBC; needs the python-mip wheel."""
from mip import BINARY, Model, maximize, xsum

weights = [2.0, 3.0, 4.0]
values = [3.0, 4.0, 5.0]
model = Model(solver_name="CBC")
model.verbose = 0
x = [model.add_var(var_type=BINARY) for _ in weights]
model.objective = maximize(xsum(v * xi for v, xi in zip(values, x)))
model += xsum(w * xi for w, xi in zip(weights, x)) <= 5.0
status = model.optimize()
if model.objective_value is None:
    raise SystemExit(f"solver status {status}")
print(f"RESULT: {model.objective_value}")
