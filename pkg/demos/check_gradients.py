"""Compare every analytical derivative the planner hands to the solver
against central differences on a few random problems.

    python3 demos/check_gradients.py [trials]
"""
import sys

import numpy as np

from ingrasp.gradcheck import central_difference, random_problem, run_gradcheck
from ingrasp import default_hand
from ingrasp.trajopt import total_cost

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 20

# One problem by hand first: objective value and gradient at a random point.
prob, x = random_problem(default_hand(), np.random.default_rng(3))
f, g = total_cost(x, prob)
fd = central_difference(lambda z: total_cost(z, prob)[0], x)
print(f"{x.size} variables, J = {f:.4e}, |g - fd| / |fd| = {np.linalg.norm(g - fd) / np.linalg.norm(fd):.2e}")

print(run_gradcheck(trials=trials).summary())
