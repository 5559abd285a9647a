"""Finite-difference gradient verification across every layer type and a
small full model."""

import numpy as np

from ..model import LRPCANet, ModelConfig, Stage
from ..nn import BatchNorm2d, Conv2d, Dense, GlobalAvgPool, ReLU, SEBlock, Sigmoid, grad_check


class _StageNet:
    """Adapts a Stage to the single-input interface grad_check expects:
    input is D (T and N held fixed), outputs are (B, T', N', D')."""

    def __init__(self, stage, T, N):
        self.stage, self.T, self.N = stage, T, N

    def named_parameters(self):
        return self.stage.named_parameters()

    def zero_grad(self):
        self.stage.zero_grad()

    def forward(self, D):
        rec = self.stage.forward((D, self.T, self.N))
        return rec.T, rec.N, rec.D

    def backward(self, grads):
        return self.stage.backward((grads[2], grads[0], grads[1]))[0]


def _jitter(module, rng, scale=0.1):
    # zero-initialised convs would make upstream gradients vanish trivially
    for _, p in module.named_parameters():
        p.value += scale * rng.standard_normal(p.value.shape)
    return module


# Composite networks route each first-layer weight through thousands of ReLU
# pre-activations; a step of 1e-5 lets a few of them cross zero, so those
# cases use a smaller step (round-off is still far below tolerance).
LAYER_STEP = 1e-5
COMPOSITE_STEP = 1e-6
COMPOSITE_CASES = ("stage", "model K=2 16x16")


def gradcheck_cases(seed=0):
    """``[(name, network, input)]`` in float64."""
    # separate stream from grad_check's projection draws, which use ``seed``
    rng = np.random.default_rng([seed, 11])
    f64 = np.float64
    x4 = rng.standard_normal((2, 3, 6, 6))
    cfg = ModelConfig(K=2, C=8, BC=4, se_ratio=4)
    cases = [
        ("conv2d 3->5", Conv2d(3, 5, rng, f64), x4),
        ("conv2d 1->4", Conv2d(1, 4, rng, f64), rng.standard_normal((2, 1, 6, 6))),
        ("conv2d 12->1", Conv2d(12, 1, rng, f64), rng.standard_normal((2, 12, 5, 5))),
        ("batchnorm", _jitter(BatchNorm2d(3, f64), rng), x4),
        ("relu", ReLU(), x4),
        ("sigmoid", Sigmoid(), x4),
        ("global_avg_pool", GlobalAvgPool(), x4),
        ("dense", Dense(5, 3, rng, f64), rng.standard_normal((4, 5))),
        ("se_block", _jitter(SEBlock(8, 4, rng, f64), rng), rng.standard_normal((2, 8, 5, 5))),
    ]
    stage = _jitter(Stage(cfg, rng, f64), rng)
    shape = (2, 1, 8, 8)
    cases.append(("stage", _StageNet(stage, rng.standard_normal(shape), rng.standard_normal(shape)),
                  rng.standard_normal(shape)))
    model = _jitter(LRPCANet(ModelConfig(K=2), seed=seed, dtype=f64), rng)
    cases.append(("model K=2 16x16", model, rng.random((2, 1, 16, 16))))
    return cases


def run_gradcheck(seed=0, samples=6, tolerance=1e-4):
    """``[(name, GradCheckResult)]`` for every case."""
    results = []
    for name, net, x in gradcheck_cases(seed):
        h = COMPOSITE_STEP if name in COMPOSITE_CASES else LAYER_STEP
        results.append((name, grad_check(net, x, tolerance=tolerance, h=h, samples=samples, seed=seed)))
    return results
