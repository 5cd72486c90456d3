"""QMC-BO on the closed-form benchmark stops at the first eigenvalue crossing (pi/8)."""
import math

from bofpinn.classic import CrossingDetected, qmc_bo_solve
from bofpinn.config import defaults_for
from bofpinn.harness import _ref_samples, build_problem

cfg = defaults_for("rd1d-manufactured")
p = build_problem(cfg)
try:
    qmc_bo_solve(p, _ref_samples(cfg, p), 64, 2, t_s=0.05, dt=1e-4, T=0.6)
    print("no crossing detected")
except CrossingDetected as e:
    print(e)
    print(f"predicted pi/8 = {math.pi / 8:.5f}, gap {abs(e.t - math.pi / 8):.2e}")
