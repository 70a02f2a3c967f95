"""Adam optimizer with bias-corrected first and second moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .graph import Param


@dataclass
class AdamHyper:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared step counter."""

    hyper: AdamHyper = field(default_factory=AdamHyper)
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Param], state: AdamState) -> AdamState:
    """Apply one Adam update in place using each parameter's .grad.

    A NaN/Inf gradient aborts the run with a diagnostic naming the
    parameter; the step counter advances by exactly one per call.
    """
    hp = state.hyper
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - hp.beta1 ** t
    bc2 = 1.0 - hp.beta2 ** t
    for p in params:
        g = p.grad
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {p.name!r}")
        m = state.first_moment.get(p.name)
        v = state.second_moment.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
            state.first_moment[p.name] = m
            state.second_moment[p.name] = v
        m *= hp.beta1
        m += (1.0 - hp.beta1) * g
        v *= hp.beta2
        v += (1.0 - hp.beta2) * np.square(g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (hp.lr * m_hat / (np.sqrt(v_hat) + hp.eps)).astype(p.data.dtype, copy=False)
    return state


class Adam:
    """Thin stateful wrapper binding an AdamState to a parameter list."""

    def __init__(self, params: list[Param], lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(hyper=AdamHyper(lr, beta1, beta2, eps))

    def step(self) -> None:
        adam_step(self.params, self.state)

    @property
    def step_count(self) -> int:
        return self.state.step_count
