from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"non-finite gradient in parameter {name!r}")


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def init_for(self, named_params):
        for name, p in named_params:
            if name not in self.m:
                self.m[name] = np.zeros_like(p.value)
                self.v[name] = np.zeros_like(p.value)


def adam_update(named_params, state):
    """One bias-corrected Adam step over ``(name, Parameter)`` pairs, in place.

    Gradients are validated before anything is touched, so a failing step
    leaves both parameters and state unchanged.
    """
    named_params = list(named_params)
    for name, p in named_params:
        if p.trainable and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(name)
    state.init_for(named_params)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, p in named_params:
        if not p.trainable:
            continue
        g = p.grad
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.value -= step.astype(p.value.dtype, copy=False)
    return named_params, state


class Adam:
    def __init__(self, module, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.module = module
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)
        self.state.init_for(module.named_parameters())

    def step(self):
        adam_update(self.module.named_parameters(), self.state)

    def zero_grad(self):
        self.module.zero_grad()
