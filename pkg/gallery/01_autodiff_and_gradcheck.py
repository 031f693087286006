"""
Reverse-mode gradients on a tape
================================

Every operation executed inside a ``Tape`` context records a backward rule.
Calling ``tape.backward(loss)`` walks the records in reverse and leaves a
``.grad`` array on each tensor that asked for one.
"""

import numpy as np

from bpmfusion.tensor_core import Tape, Tensor, bce_with_logits, conv3d, flatten, grad_check, linear, relu
from bpmfusion.verify import format_results, run_suite

rng = np.random.default_rng(0)

# a batch of two single-channel 6x6x6 volumes and a strided, padded kernel
x = Tensor(rng.standard_normal((2, 1, 6, 6, 6)))
w = Tensor(rng.standard_normal((4, 1, 3, 3, 3)) * 0.2, requires_grad=True)
b = Tensor(np.zeros(4), requires_grad=True)
head = Tensor(rng.standard_normal((1, 4 * 3 * 3 * 3)) * 0.1, requires_grad=True)

with Tape() as tape:
    h = relu(conv3d(x, w, b, stride=2, padding=1))
    logits = flatten(linear(flatten(h, 1), head), 0)
    loss = bce_with_logits(logits, np.array([1, 0]))
tape.backward(loss)

print("recorded ops:", tape.op_names())
print("feature map", h.shape, "loss", float(loss.data))
print("kernel gradient norm", np.linalg.norm(w.grad))

# A finite-difference check perturbs every input entry by +-eps and compares.
def network(w, b, head):
    out = flatten(linear(flatten(relu(conv3d(x, w, b, stride=2, padding=1)), 1), head), 0)
    return bce_with_logits(out, np.array([1, 0]))

print("max relative error:", grad_check(network, [w, b, head]))

# The same check, run over every operator plus a tiny end-to-end network.
print(format_results(run_suite(seed=0)))
