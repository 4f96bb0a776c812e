"""Adam with bias correction and per-group learning rates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError


@dataclass
class AdamState:
    m: list
    v: list
    group_of: list          # parameter index -> group index
    learning_rates: list    # one per group
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_groups(cls, groups, **kw) -> "AdamState":
        """``groups`` is a sequence of ``(params, lr)`` pairs."""
        m, v, group_of, lrs = [], [], [], []
        for gi, (params, lr) in enumerate(groups):
            lrs.append(float(lr))
            for p in params:
                m.append(np.zeros(p.shape))
                v.append(np.zeros(p.shape))
                group_of.append(gi)
        return cls(m=m, v=v, group_of=group_of, learning_rates=lrs, **kw)


def adam_step(params, grads, state: AdamState) -> None:
    """One in-place Adam update.  ``grads`` are read, never modified."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise DimensionError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != state.m[i].shape or np.shape(g) != p.shape:
            raise DimensionError(f"adam_step: param {i} shape {p.shape} vs grad {np.shape(g)} "
                                 f"vs state {state.m[i].shape}")
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        lr = state.learning_rates[state.group_of[i]]
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class Adam:
    """Convenience wrapper owning the parameter list and its state."""
    groups: list
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.params = [p for params, _ in self.groups for p in params]
        self.state = AdamState.for_groups(self.groups, beta1=self.beta1, beta2=self.beta2,
                                          epsilon=self.epsilon)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
