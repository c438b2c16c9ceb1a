"""Same 0/1 knapsack through GLPK's integer solver."""
from cvxopt import glpk, matrix

glpk.options["msg_lev"] = "GLP_MSG_OFF"

# minimize -values'x subject to weights'x <= 5, x binary
c = matrix([-3.0, -4.0, -5.0])
G = matrix([[2.0], [3.0], [4.0]])
h = matrix([5.0])
status, x = glpk.ilp(c=c, G=G, h=h, B=set(range(3)))
if status != "optimal":
    raise SystemExit(f"solver status {status}")
value = -sum(ci * xi for ci, xi in zip(c, x))
print(f"RESULT: {value}")
