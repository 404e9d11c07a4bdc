"""
Module containers and the small layer set shared by every model in the package.

Parameters and child modules assigned as attributes are registered in
insertion order, which gives every parameter a canonical dotted name
(``blocks.0.attn_cross.to_q.weight``) used by checkpoints and adapters.
"""

from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError
from . import ops
from .tensor import Parameter, Tensor, as_tensor


class Module:
    """Base class: attribute-registered parameters and children."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        params = self.__dict__.get("_params")
        children = self.__dict__.get("_children")
        if params is None:
            raise ContractError(f"{type(self).__name__}.__init__ must call Module.__init__")
        params.pop(name, None)
        children.pop(name, None)
        if isinstance(value, Parameter):
            params[name] = value
        elif isinstance(value, Module):
            children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(prefix + name + ".")

    def requires_grad_(self, flag: bool = True) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict and set(own) != set(state):
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            raise ContractError(f"State mismatch: missing={missing} unexpected={unexpected}")
        for name, value in state.items():
            if name not in own:
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.shape != own[name].shape:
                raise ContractError(f"{name}: expected {own[name].shape}, got {value.shape}")
            own[name].data = value.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    """Children named ``0``, ``1``, ... in order."""

    def __init__(self, modules: Sequence[Module] = ()):
        super().__init__()
        for i, m in enumerate(modules):
            setattr(self, str(i), m)

    def __getitem__(self, i: int) -> Module:
        return self._children[str(i)]

    def __len__(self) -> int:
        return len(self._children)

    def __iter__(self):
        return iter(self._children.values())


class Linear(Module):
    """
    ``y = x W^T + b`` with ``W`` stored as (d_out, d_in).

    An optional ``adapter`` receives ``(x, base_output)`` and returns the
    adapted output; it is how low-rank adapters hook into projections.
    """

    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        bias: bool = True,
        std: Optional[float] = None,
    ):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        std = (1.0 / np.sqrt(d_in)) if std is None else std
        self.weight = Parameter(rng.normal(0.0, std, size=(d_out, d_in)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None
        self.adapter = None

    def base_forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise ContractError(f"Linear expects last dim {self.d_in}, got {x.shape}")
        y = ops.matmul(x, ops.transpose(self.weight, (1, 0)))
        if self.bias is not None:
            y = ops.add(y, self.bias)
        return y

    def forward(self, x) -> Tensor:
        y = self.base_forward(x)
        if self.adapter is not None:
            y = self.adapter(x, y)
        return y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))

    def forward(self, x) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) linear interpolation with aligned corners."""
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    w = pos - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - w)
    np.add.at(m, (rows, hi), w)
    return m


def upsample_bilinear(x, size: int) -> Tensor:
    """Bilinear (aligned corners) resize of a (B, H, W, C) tensor to (B, size, size, C)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ContractError(f"upsample_bilinear expects (B, H, W, C), got {x.shape}")
    mh = Tensor(interpolation_matrix(x.shape[1], size))
    mw_t = Tensor(interpolation_matrix(x.shape[2], size).T)
    y = ops.transpose(x, (0, 3, 1, 2))
    y = ops.matmul(ops.matmul(mh, y), mw_t)
    return ops.transpose(y, (0, 2, 3, 1))
