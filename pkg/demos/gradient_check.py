"""
Checking the hand-written gradients
===================================

Every parameter tensor of a tiny transformer is nudged by central finite
differences and compared with the reverse-mode gradient of the
cross-entropy loss. Then the same check is aimed at a deliberately broken
GELU derivative to show that it would notice.
"""
import numpy as np

from posevinet import autodiff as ad
from posevinet import vit

report = vit.gradient_check(seed=7)
for line in report.lines():
    print(line)
print("all groups within", report.tol, ":", report.passed)

# a single op in isolation: f(x) = sum(gelu(x) * w)
rng = np.random.default_rng(0)
x = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = rng.normal(size=(3, 4))
good = ad.finite_diff_check(lambda: ad.tensor_sum(ad.gelu(x) * w), {"x": x})
print("gelu, correct derivative:", good.lines()[0])

original = ad._gelu_grad
ad._gelu_grad = lambda z: original(z) * 1.01     # one percent off
try:
    bad = ad.finite_diff_check(lambda: ad.tensor_sum(ad.gelu(x) * w), {"x": x})
finally:
    ad._gelu_grad = original
print("gelu, scaled derivative: ", bad.lines()[0])
