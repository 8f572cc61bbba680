"""Mesh refinement study on the bundled example and on a linear BVP with known solution.

Prints the sup weighted error for N = 32 .. 1024 and the ratio between successive N.
"""
import math

import numpy as np

from psihilfer.cli import load_config, run
from psihilfer.linear import LinearProblem, solve_linear_bvp
from psihilfer.psi_core import OrderParams, PsiMap, graded_mesh

NS = (32, 64, 128, 256, 512, 1024)


def example_errors():
    out = []
    for N in NS:
        cfg = load_config("example6")
        cfg.mesh.N = N
        cfg.solver.n_samples = 1000
        out.append(run(cfg)["final_error"])
    return out


def linear_errors(alpha=0.6, beta=0.4, M=0.5, r=0.3):
    """Linear BVP with psi = t + t^2 and exact solution y = A U^(gamma-1) + U^2."""
    order = OrderParams(alpha, beta)
    g = order.gamma
    psi = PsiMap(lambda t: t + t**2, lambda t: 1 + 2 * t, 1.0)
    w = float(psi.offset(1.0))
    # U^(gamma-1) is annihilated by the derivative; A is fixed by the boundary relation.
    A = r * 2 * w ** (3 - g) / (math.gamma(4 - g) * (1 - r) * math.gamma(g))

    def forcing(t):
        U = psi.offset(t)
        return 2 * U ** (2 - alpha) / math.gamma(3 - alpha) - M * (A * U ** (g - 1) + U**2)

    out = []
    for N in NS:
        p = LinearProblem(order, psi, M, graded_mesh(1.0, N, g), r)
        y, _ = solve_linear_bvp(p, forcing)
        U = psi.offset(y.mesh.nodes)
        exact_v = A + U ** (3 - g)
        out.append(float(np.max(np.abs(y.values - exact_v))))
    return out


def report(name, errs):
    print(name)
    prev = None
    for N, e in zip(NS, errs):
        ratio = "" if prev is None or e == 0 else f"{prev / e:6.2f}"
        print(f"  N={N:5d}  err={e:.3e}  {ratio}")
        prev = e


if __name__ == "__main__":
    report("bundled example, Picard (error vs exact solution)", example_errors())
    report("linear BVP, psi = t + t^2, alpha = 0.6, beta = 0.4", linear_errors())
