"""Verifying backward rules with central finite differences.

Every differentiable operation in the package carries a hand-written
backward rule; grad_check compares the analytic gradient of any scalar
function against (f(x + eps e_i) - f(x - eps e_i)) / 2 eps. The CLI command
`chase gradcheck` runs the full battery; this script shows the API on a few
hand-picked functions, including one deliberately mis-scaled gradient.
"""

import numpy as np

from chase import EntityPair, Value, grad_check, mmd_sq, mpmmd_loss
from chase import autodiff as ad

rng = np.random.default_rng(0)

print("1) quadratic form x -> sum(x*x) + sum(relu(x))")
rep = grad_check(lambda x: ad.vsum(x * x) + ad.vsum(ad.relu(x)), rng.standard_normal(10))
print("  ", rep)

print("\n2) kernel two-sample statistic w.r.t. one sample set (fixed bandwidth)")
other = ad.as_value(rng.standard_normal((8, 2)))
rep = grad_check(lambda x: mmd_sq(x, other, bandwidth=1.0), rng.standard_normal((8, 2)))
print("  ", rep)

print("\n3) pair-wise objective w.r.t. a whole shifted batch")
rep = grad_check(
    lambda x: mpmmd_loss(x, [EntityPair(0, 1)], bandwidth=1.0),
    rng.standard_normal((2, 2, 3, 2, 2)),
)
print("  ", rep)

print("\n4) what a broken rule looks like: gradient scaled by 2")


def doubled_gradient(x):
    # correct forward, wrong backward: a textbook bug grad_check catches
    out = ad.vsum(x * x)
    return ad.scale(out, 0.5) + ad.scale(Value(out.data * 0.5), 1.0)


rep = grad_check(doubled_gradient, rng.standard_normal(6))
print("  ", rep)
print("   (analytic gradient is half the numeric one, so the check fails loudly)")
