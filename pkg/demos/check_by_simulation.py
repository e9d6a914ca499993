# Compare the approximation with a crude Monte Carlo run, then push to a
# smaller probability with the tilted estimator.  About a minute on one core.
import math
import os

from scipy import optimize

from asymtail.asymptotics import approx_max_tail
from asymtail.simulate import estimate_tail_prob, estimate_tail_prob_tilted
from asymtail.tail_models import builtin_models, drifted

pareto = builtin_models()["Pareto"]
workers = os.cpu_count() or 1

def level(inc, p):
    return optimize.brentq(lambda x: approx_max_tail(inc, x).log_total - math.log(p), 0.5, 1e4)

inc = drifted(pareto, 0.05)
xs = [level(inc, p) for p in (1e-1, 1e-2, 1e-3)]
est = estimate_tail_prob(inc, xs, 200_000, seed=1, workers=workers)
print("crude Monte Carlo, n = 200000")
for x, e in zip(xs, est):
    f = approx_max_tail(inc, x).total
    print(f"  x={x:8.3f}  formula {f:.3e}  MC {e.p_hat:.3e}  CI [{e.ci_low:.3e}, {e.ci_high:.3e}]")

# 1e-5 is out of reach for a crude run of this size.  Tilting only helps
# while the exponential term still matters, hence the smaller drift here.
# The likelihood ratio is heavy tailed at this level, so expect a wide
# batch-means interval at n = 20000.
inc = drifted(pareto, 0.01)
x = level(inc, 1e-5)
t = estimate_tail_prob_tilted(inc, x, 20_000, seed=2, workers=workers)
print(f"tilted, a=0.01, x={x:.3f}: formula {approx_max_tail(inc, x).total:.3e}  "
      f"estimate {t.p_hat:.3e}  CI [{t.ci_low:.3e}, {t.ci_high:.3e}]")
