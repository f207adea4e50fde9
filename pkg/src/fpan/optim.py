"""Gradient-based optimizers over named parameter dicts.

Both optimizers walk parameters in dict order (insertion order, which
the network builder fixes), keep their running statistics as float32
numpy arrays keyed by parameter name, and update parameter data in
place.  State dicts round-trip through checkpoints so a resumed run
continues bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import OptimizerError


def decayed_lr(base_lr: float, step: int, decay: float = 0.9,
               interval: int = 500) -> float:
    """Smooth exponential schedule: base_lr * decay ** (step / interval)."""
    return base_lr * decay ** (step / interval)


class _Optimizer:
    def __init__(self, params: dict):
        self.params = dict(params)

    def _grad(self, name, p):
        if p.grad is None:
            raise OptimizerError(f"parameter {name!r} has no gradient")
        g = p.grad
        if not np.isfinite(g).all():
            raise OptimizerError(f"parameter {name!r} has a non-finite gradient")
        return g

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        raise NotImplementedError

    def load_state(self, state: dict):
        raise NotImplementedError


class RMSProp(_Optimizer):
    """Running mean of squared gradients; update g / (sqrt(v) + eps)."""

    def __init__(self, params: dict, rho: float = 0.9, eps: float = 1e-8):
        super().__init__(params)
        self.rho = rho
        self.eps = eps
        self.sq = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, lr: float):
        for name, p in self.params.items():
            g = self._grad(name, p)
            v = self.sq[name]
            v *= self.rho
            v += (1.0 - self.rho) * g * g
            p.data -= (lr * g / (np.sqrt(v) + self.eps)).astype(p.data.dtype)

    def state_dict(self):
        return {f"sq/{k}": v.copy() for k, v in self.sq.items()}

    def load_state(self, state: dict):
        for name in self.sq:
            key = f"sq/{name}"
            if key not in state:
                raise OptimizerError(f"optimizer state missing {key!r}")
            if state[key].shape != self.sq[name].shape:
                raise OptimizerError(f"optimizer state {key!r} has wrong shape")
            self.sq[name] = state[key].astype(self.sq[name].dtype).copy()


class Adam(_Optimizer):
    """Adam with bias correction; defaults follow common practice."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, lr: float):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = self._grad(name, p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mh = m / c1
            vh = v / c2
            p.data -= (lr * mh / (np.sqrt(vh) + self.eps)).astype(p.data.dtype)

    def state_dict(self):
        out = {f"m/{k}": v.copy() for k, v in self.m.items()}
        out.update({f"v/{k}": v.copy() for k, v in self.v.items()})
        out["t"] = np.array([float(self.t)], dtype=np.float32)
        return out

    def load_state(self, state: dict):
        if "t" not in state:
            raise OptimizerError("optimizer state missing 't'")
        self.t = int(round(float(state["t"][0])))
        for slot, table in (("m", self.m), ("v", self.v)):
            for name in table:
                key = f"{slot}/{name}"
                if key not in state:
                    raise OptimizerError(f"optimizer state missing {key!r}")
                if state[key].shape != table[name].shape:
                    raise OptimizerError(f"optimizer state {key!r} has wrong shape")
                table[name] = state[key].astype(table[name].dtype).copy()


OPTIMIZERS = {"rmsprop": RMSProp, "adam": Adam}


def make_optimizer(kind: str, params: dict) -> _Optimizer:
    if kind not in OPTIMIZERS:
        raise OptimizerError(f"unknown optimizer {kind!r}, pick from {sorted(OPTIMIZERS)}")
    return OPTIMIZERS[kind](params)
