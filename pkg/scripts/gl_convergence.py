"""Error of the shifted GL Riesz operator on x^3(1-x)^3 against the analytic series.

    python3 scripts/gl_convergence.py --alpha 1.2 1.5 1.8
"""
import argparse

import numpy as np

from bofpinn.fracops import AnalyticFracOracle, GLStencil, Grid1D, analytic_riesz


def errors(alpha, order, Ns):
    out = []
    for N in Ns:
        g = Grid1D(0.0, 1.0, N)
        x = g.nodes
        ex = np.zeros_like(x)
        ex[1:-1] = analytic_riesz(AnalyticFracOracle("bump", alpha), x[1:-1])
        e = GLStencil(g, alpha, order).matrix() @ (x ** 3 * (1 - x) ** 3) - ex
        out.append((float(np.sqrt(np.mean(e ** 2))), float(np.max(np.abs(e)))))
    return np.array(out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--alpha", type=float, nargs="+", default=[1.2, 1.5, 1.8])
    ap.add_argument("--N", type=int, nargs="+", default=[64, 128, 256, 512])
    a = ap.parse_args()
    print("alpha,order,N,l2_err,max_err")
    slopes = []
    for alpha in a.alpha:
        for order in (1, 2):
            E = errors(alpha, order, a.N)
            for N, (l2, mx) in zip(a.N, E):
                print(f"{alpha},{order},{N},{l2:.6e},{mx:.6e}")
            s = -np.polyfit(np.log(a.N), np.log(E), 1)[0]
            slopes.append(f"# alpha={alpha} order={order}: slope l2 {s[0]:.3f}, max {s[1]:.3f}")
    print("\n".join(slopes))


if __name__ == "__main__":
    main()
