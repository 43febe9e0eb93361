"""Finite-difference verification of the hand-written backward passes.

Every gradient in the trainer is derived and coded by hand (LSTM through
time, attention softmax, fused embeddings, the feed-forward discriminator),
so central-difference checks are the safety net.  This demo checks a single
component and then the two end-to-end training losses.

Run:  python3 demos/03_gradient_checks.py
"""

import numpy as np

from metadapt import LstmParams, grad_check
from metadapt.nn import lstm_backward, lstm_forward
from metadapt.harness import run_gradient_checks

# --- one component: LSTM-through-time -------------------------------------
rng = np.random.default_rng(0)
params = LstmParams.init(input_size=5, hidden_size=4, rng=rng)
X = rng.normal(size=(5, 6))
probe = rng.normal(size=(4, 6))


def loss_fn():
    out, cache = lstm_forward(X, params)
    lstm_backward(probe, cache, params)     # analytic grads into params
    return float((probe * out).sum())


err = grad_check(loss_fn, params.params(), n_coords=500, rng=rng)
print(f"LSTM backward vs central differences: max relative error {err:.3e}")

# --- the two training losses ----------------------------------------------
# discriminator loss w.r.t. its weights, generator loss w.r.t. the BiLSTM
# and attention projection, on a small random episode
errs = run_gradient_checks(seed=0)
for name, e in errs.items():
    print(f"{name}: max relative error {e:.3e} "
          f"({'ok' if e < 1e-5 else 'SUSPECT'})")
