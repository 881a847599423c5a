"""
Verifying backpropagation with finite differences
=================================================

Every layer's backward pass should be the exact derivative of its
forward pass. The check perturbs each parameter by +-h, recomputes the
loss, and compares the central difference against the analytic
gradient. Run on tiny double-precision networks this agrees to ~1e-8;
anything past 1e-5 means a broken derivative.

The same check ships on the command line: `canonface gradcheck`.
"""

import numpy as np

from canonface import net, verify

# a miniature of the recovery architecture: locally connected layer,
# relu, pooling, dense output
spec = net.NetworkSpec((1, 8, 8), (
    net.LocalConv(k=3, out_channels=4),
    net.Relu(),
    net.MaxPool(2),
    net.Dense(4),
))
network = net.Network(spec, seed=0, dtype=np.float64)
rng = np.random.default_rng(0)
x = rng.random((1, 1, 8, 8))
target = rng.random((1, 4))
report = net.grad_check(network, x, target, loss="recon", max_checks=4000)
print(f"recovery-style net: max relative error {report.max_rel_error:.3e} "
      f"over {report.checked} parameters -> {'ok' if report.ok else 'FAIL'}")

# the five-branch pair network, shrunk the same way
tiny_sizes = {"whole": (8, 8), "forehead": (6, 8), "eye": (6, 8),
              "nose": (6, 6), "mouth": (6, 8)}
model = verify.FcnModel(
    verify.fcn_spec(conv_channels=2, component_sizes=tiny_sizes),
    seed=0, dtype=np.float64,
)
batches = verify.random_pair_batches(model, np.random.default_rng(0))
report = verify.fcn_grad_check(model, batches, label=1)
print(f"pair net:           max relative error {report.max_rel_error:.3e} "
      f"over {report.checked} parameters -> {'ok' if report.ok else 'FAIL'}")
