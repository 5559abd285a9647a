"""The K-stage unfolded low-rank + sparse + noise decomposition network.

Each stage refines ``(D, T, N)`` in four steps:

* background:      B  = R + W(R),          R = D - T - N
* target:          T' = U - eps * H(U),    U = T + D - B - N
* noise:           N' = V - sigma * F(V),  V = N + D - B - T'
* reconstruction:  D' = M(B + T' + N')

``W``, ``H``, ``F`` and ``M`` are small conv groups; ``eps`` and ``sigma`` are
learnable per-stage scalars.  The target and noise updates are the
proximal-gradient steps with their mixing weights fixed at 0.5; the resulting
factor of two is absorbed into ``H``/``F`` and the learned step sizes.
"""

from dataclasses import dataclass

import numpy as np

from ..nn import BatchNorm2d, Conv2d, Module, Parameter, ReLU, SEBlock, Sequential, ShapeError
from .config import ModelConfig

# mixing weights of the target / noise updates (not learned)
TARGET_MIX = 0.5
NOISE_MIX = 0.5


def conv_group(kind, cfg, rng=None, dtype=np.float32, se=True):
    """Build one of the three conv-group layouts.

    ``kind`` is ``"background"`` (with BN), ``"gradient"`` (no BN, used for
    both the target and noise modules) or ``"reconstruction"``.  The last conv
    of background/gradient groups starts at zero.
    """
    C, BC = cfg.C, cfg.BC
    layers = []
    if kind in ("background", "gradient"):
        use_bn = kind == "background"
        plan = [(1, BC), (BC, C)] + [(C, C)] * cfg.n_fill
        for cin, cout in plan:
            layers.append(Conv2d(cin, cout, rng, dtype))
            if use_bn:
                layers.append(BatchNorm2d(cout, dtype))
            layers.append(ReLU())
        if se:
            layers.append(SEBlock(C, cfg.se_ratio, rng, dtype))
        layers.append(Conv2d(C, 1, rng, dtype, zero=True))
    elif kind == "reconstruction":
        for cin, cout in [(1, C)] + [(C, C)] * cfg.l_D:
            layers.append(Conv2d(cin, cout, rng, dtype))
            layers.append(ReLU())
        if se:
            layers.append(SEBlock(C, cfg.se_ratio, rng, dtype))
        layers.append(Conv2d(C, 1, rng, dtype))
    else:
        raise ValueError(f"unknown conv group kind {kind!r}")
    return Sequential(*layers)


def _same_shape(op, *planes):
    ref = planes[0].shape
    for p in planes[1:]:
        if p.shape != ref:
            raise ShapeError(op, "plane shape", ref, p.shape)
    if len(ref) != 4 or ref[1] != 1:
        raise ShapeError(op, "plane layout", "(batch, 1, H, W)", ref)


@dataclass
class StageRecord:
    B: np.ndarray
    T: np.ndarray
    N: np.ndarray
    D: np.ndarray


class Stage(Module):
    def __init__(self, cfg, rng=None, dtype=np.float32):
        se_b, se_t, se_n, se_r = cfg.se_enabled
        self.background = conv_group("background", cfg, rng, dtype, se_b)
        self.target = conv_group("gradient", cfg, rng, dtype, se_t)
        self.noise = conv_group("gradient", cfg, rng, dtype, se_n)
        self.reconstruction = conv_group("reconstruction", cfg, rng, dtype, se_r)
        self.epsilon = Parameter("epsilon", np.full(1, cfg.eps_init, dtype=dtype))
        self.sigma = Parameter("sigma", np.full(1, cfg.sigma_init, dtype=dtype))
        self._saved = None

    # the four module updates; each caches what backward needs in its branch
    def update_background(self, D, T, N):
        _same_shape("background", D, T, N)
        R = D - T - N
        return R + self.background.forward(R)

    def update_target(self, D, T, N, B):
        _same_shape("target", D, T, N, B)
        U = T + D - B - N
        hU = self.target.forward(U)
        return U - self.epsilon.value * hU, hU

    def update_noise(self, D, N, B, T_next):
        _same_shape("noise", D, N, B, T_next)
        V = N + D - B - T_next
        fV = self.noise.forward(V)
        return V - self.sigma.value * fV, fV

    def reconstruct(self, B, T_next, N_next):
        _same_shape("reconstruction", B, T_next, N_next)
        return self.reconstruction.forward(B + T_next + N_next)

    def forward(self, state):
        D, T, N = state
        B = self.update_background(D, T, N)
        T1, hU = self.update_target(D, T, N, B)
        N1, fV = self.update_noise(D, N, B, T1)
        D1 = self.reconstruct(B, T1, N1)
        self._saved = (hU, fV)
        return StageRecord(B, T1, N1, D1)

    def backward(self, grads):
        """``grads = (dD', dT', dN')`` -> ``(dD, dT, dN)`` for this stage's inputs."""
        dD1, dT1, dN1 = grads
        hU, fV = self._saved
        dS = self.reconstruction.backward(dD1)
        dB = dS
        dT1 = dT1 + dS
        dN1 = dN1 + dS

        self.sigma.grad += -np.sum(dN1 * fV)
        dV = dN1 + self.noise.backward(-self.sigma.value * dN1)
        dN = dV
        dD = dV.copy()
        dB = dB - dV
        dT1 = dT1 - dV

        self.epsilon.grad += -np.sum(dT1 * hU)
        dU = dT1 + self.target.backward(-self.epsilon.value * dT1)
        dT = dU
        dD += dU
        dB = dB - dU
        dN = dN - dU

        dR = dB + self.background.backward(dB)
        dD += dR
        dT = dT - dR
        dN = dN - dR
        return dD, dT, dN


class LRPCANet(Module):
    """Stack of ``cfg.K`` stages.  ``forward(image)`` returns ``(T_K, D_K)``."""

    def __init__(self, cfg=None, seed=None, dtype=np.float32):
        self.config = cfg or ModelConfig()
        rng = None if seed is None else np.random.default_rng(seed)
        self.stages = [Stage(self.config, rng, dtype) for _ in range(self.config.K)]
        self.dtype = dtype
        self.last_trace = None

    def forward(self, image, keep_trace=False):
        if image.ndim != 4 or image.shape[1] != 1:
            raise ShapeError("model", "input layout", "(batch, 1, H, W)", image.shape)
        D = image
        T = np.zeros_like(image)
        N = np.zeros_like(image)
        trace = []
        for stage in self.stages:
            rec = stage.forward((D, T, N))
            D, T, N = rec.D, rec.T, rec.N
            if keep_trace:
                trace.append(rec)
        self.last_trace = trace if keep_trace else None
        return T, D

    def backward(self, grads):
        dT, dD = grads
        dN = np.zeros_like(dT)
        for stage in reversed(self.stages):
            dD, dT, dN = stage.backward((dD, dT, dN))
        # T0 and N0 are constants; only D0 is the input
        return dD

    def astype(self, dtype):
        super().astype(dtype)
        self.dtype = dtype
        return self


def model_forward(image, model, keep_trace=False):
    T, D = model.forward(image, keep_trace=keep_trace)
    return T, D, model.last_trace


def count_parameters(cfg):
    """Number of trainable scalars of the network described by ``cfg``."""
    return LRPCANet(cfg).num_parameters()


def se_parameter_count(cfg):
    """Trainable scalars held by the enabled SE blocks."""
    total = 0
    for stage in LRPCANet(cfg).stages:
        for m in stage.modules():
            if isinstance(m, SEBlock):
                total += m.num_parameters()
    return total


# functional views of the four stage updates; ``state`` is ``(D, T, N)``
def sebem_forward(state, stage):
    return stage.update_background(*state)


def setem_forward(state, B_next, stage):
    D, T, N = state
    return stage.update_target(D, T, N, B_next)[0]


def senrm_forward(state, B_next, T_next, stage):
    D, _, N = state
    return stage.update_noise(D, N, B_next, T_next)[0]


def seirm_forward(B_next, T_next, N_next, stage):
    return stage.reconstruct(B_next, T_next, N_next)
