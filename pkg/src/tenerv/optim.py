"""Adam optimizer over :class:`~tenerv.tensor.Tensor` parameters."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor, UsageError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


class Adam:
    """Adam with bias correction (Kingma & Ba). Moments follow parameter dtype."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.state = AdamState(
            lr=lr,
            beta1=betas[0],
            beta2=betas[1],
            eps=eps,
            m=[np.zeros_like(p.data) for p in self.params],
            v=[np.zeros_like(p.data) for p in self.params],
        )

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        st = self.state
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise UsageError(f"parameter {i} {p.shape} has no gradient")
            if p.grad.shape != p.shape:
                raise UsageError(f"gradient shape {p.grad.shape} != parameter {p.shape}")
        st.step += 1
        bc1 = 1.0 - st.beta1**st.step
        bc2 = 1.0 - st.beta2**st.step
        step_size = st.lr / bc1
        root_bc2 = math.sqrt(bc2)
        for p, m, v in zip(self.params, st.m, st.v):
            g = p.grad
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            denom = np.sqrt(v) / root_bc2 + st.eps
            p.data -= (step_size * m / denom).astype(p.dtype, copy=False)


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """Functional form: one Adam update of ``params`` using their ``.grad``."""
    opt = Adam.__new__(Adam)
    opt.params = list(params)
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in opt.params]
        state.v = [np.zeros_like(p.data) for p in opt.params]
    opt.state = state
    opt.step()
