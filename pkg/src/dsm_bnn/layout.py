"""Model shapes and the flat unconstrained parameter layout."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

TASKS = ("regression", "binary_classification")


@dataclass(frozen=True)
class NetworkShape:
    """One hidden tanh layer: p inputs, H hidden units, d outputs."""

    p: int
    H: int
    d: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        if self.p < 1 or self.H < 1 or self.d < 1:
            raise ValueError(f"invalid network shape {self}")
        if self.activation != "tanh":
            raise ValueError("only the tanh activation is supported")


@dataclass(frozen=True)
class LinearShape:
    """Linear regression on p coefficients plus an intercept."""

    p: int
    d: int = 1

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"invalid linear shape {self}")
        if self.d != 1:
            raise ValueError("linear models have a single output")


class Layout:
    """Named blocks of the flat sampler state.

    The shrunk weights form a (groups x width) matrix. For networks a group is
    a hidden unit (one local scale and one simplex per row); for linear models
    there is a single row with one local scale per coefficient.
    """

    def __init__(self, shape, family: str, task: str = "regression"):
        from .priors import FAMILIES, simplex_kind

        if family not in FAMILIES:
            raise ValueError(f"unknown prior family {family!r}")
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        self.shape = shape
        self.family = family
        self.task = task
        self.is_network = isinstance(shape, NetworkShape)
        p = shape.p
        if self.is_network:
            self.groups, self.width = shape.H, p
            self.lambda_per_row = True
            n_lambda, n_slab = shape.H, shape.H
        else:
            self.groups, self.width = 1, p
            self.lambda_per_row = False
            n_lambda, n_slab = p, 1
        self.simplex = simplex_kind(family)

        blocks = [("z_W1", (self.groups, self.width))]
        if self.is_network:
            blocks += [("b1", (shape.H,)), ("W_L", (shape.H, shape.d))]
        blocks.append(("b_L", (shape.d,)))
        if family != "Gaussian":
            blocks += [("log_tau", ()), ("log_lambda", (n_lambda,))]
            if self.simplex == "dirichlet":
                blocks.append(("xi", (self.groups, self.width - 1)))
            elif self.simplex == "beta":
                blocks.append(("xi", (self.groups, self.width)))
            blocks.append(("log_c_sq", (n_slab,)))
        if task == "regression":
            blocks.append(("log_sigma", ()))

        self.blocks = blocks
        self.slices = {}
        offset = 0
        for name, shp in blocks:
            size = int(np.prod(shp)) if shp else 1
            self.slices[name] = (slice(offset, offset + size), shp)
            offset += size
        self.dim = offset

    def __eq__(self, other):
        return isinstance(other, Layout) and (self.shape, self.family, self.task) == (
            other.shape, other.family, other.task)

    def __hash__(self):
        return hash((self.shape, self.family, self.task))

    def __repr__(self):
        return f"Layout({self.shape}, family={self.family!r}, task={self.task!r}, dim={self.dim})"

    def __contains__(self, name):
        return name in self.slices

    def split(self, theta: np.ndarray) -> dict:
        """Views of each named block, reshaped; scalars come back as floats."""
        if theta.shape[-1] != self.dim:
            raise ValueError(f"state has length {theta.shape[-1]}, layout expects {self.dim}")
        out = {}
        for name, (sl, shp) in self.slices.items():
            block = theta[..., sl]
            out[name] = block.reshape(theta.shape[:-1] + shp) if shp else block[..., 0]
        return out

    def join(self, blocks: dict) -> np.ndarray:
        theta = np.zeros(self.dim)
        for name, (sl, shp) in self.slices.items():
            theta[sl] = np.ravel(blocks[name])
        return theta

    @cached_property
    def coordinate_names(self) -> list[str]:
        names = []
        for name, (_, shp) in self.slices.items():
            if not shp:
                names.append(name)
            else:
                for idx in np.ndindex(*shp):
                    names.append(f"{name}[{','.join(map(str, idx))}]")
        return names


@dataclass
class ParameterVector:
    """A flat unconstrained state together with its layout."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.dim,):
            raise ValueError(f"expected a vector of length {self.layout.dim}")

    def __getitem__(self, name):
        return self.layout.split(self.values)[name]
