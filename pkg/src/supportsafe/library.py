"""Candidate Hamiltonian libraries with analytic gradients.

A basis term is written as a small expression over the state coordinate
names, e.g. ``"q^2*p"``, ``"cos(q)"``, ``"px^2"`` or ``"1"``.  Products of
integer powers and a single ``sin``/``cos`` factor of one coordinate are
supported, which covers every library used by the known-equation systems.
"""

from dataclasses import dataclass
import re

import numpy as np

_FACTOR = re.compile(r"^(sin|cos)\((\w+)\)$|^(\w+)(?:\^(\d+))?$")


@dataclass(frozen=True)
class Factor:
    kind: str  # "pow", "sin" or "cos"
    coord: int
    power: int = 1

    def value(self, z):
        x = z[:, self.coord]
        if self.kind == "sin":
            return np.sin(x)
        if self.kind == "cos":
            return np.cos(x)
        return x**self.power

    def derivative(self, z):
        x = z[:, self.coord]
        if self.kind == "sin":
            return np.cos(x)
        if self.kind == "cos":
            return -np.sin(x)
        if self.power == 1:
            return np.ones_like(x)
        return self.power * x ** (self.power - 1)


@dataclass(frozen=True)
class Basis:
    name: str
    factors: tuple

    def __call__(self, z):
        z = np.atleast_2d(z)
        out = np.ones(z.shape[0])
        for f in self.factors:
            out = out * f.value(z)
        return out

    def gradient(self, z):
        """Gradient of the term at each row of ``z``; shape (n, d)."""
        z = np.atleast_2d(z)
        g = np.zeros_like(z, dtype=float)
        for i, fi in enumerate(self.factors):
            part = fi.derivative(z)
            for j, fj in enumerate(self.factors):
                if j != i:
                    part = part * fj.value(z)
            g[:, fi.coord] += part
        return g


def parse_basis(name, coords):
    """Parse a term such as ``"q^2*p"`` over coordinate names ``coords``."""
    index = {c: i for i, c in enumerate(coords)}
    name = name.replace(" ", "")
    if name == "1":
        return Basis("1", ())
    factors = []
    for token in name.split("*"):
        m = _FACTOR.match(token)
        if m is None:
            raise ValueError(f"cannot parse basis factor {token!r}")
        trig, trig_arg, var, power = m.groups()
        if trig:
            if trig_arg not in index:
                raise ValueError(f"unknown coordinate {trig_arg!r} in {name!r}")
            factors.append(Factor(trig, index[trig_arg]))
        else:
            if var not in index:
                raise ValueError(f"unknown coordinate {var!r} in {name!r}")
            factors.append(Factor("pow", index[var], int(power or 1)))
    return Basis(name, tuple(factors))


@dataclass(frozen=True)
class LibrarySpec:
    """Ordered list of candidate terms over named state coordinates."""

    names: tuple
    coords: tuple

    def __post_init__(self):
        if len(self.names) > 12:
            raise ValueError("library limited to 12 terms")
        object.__setattr__(self, "_terms", tuple(parse_basis(n, self.coords) for n in self.names))

    @property
    def size(self):
        return len(self.names)

    @property
    def dim(self):
        return len(self.coords)

    @property
    def terms(self):
        return self._terms

    def index(self, name):
        return self.names.index(name)

    def values(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.column_stack([t(z) for t in self._terms])

    def gradients(self, z):
        """Stacked gradients, shape (n, p, d)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.stack([t.gradient(z) for t in self._terms], axis=1)

    def hamiltonian(self, z, xi):
        return self.values(z) @ np.asarray(xi, dtype=float)

    def grad_hamiltonian(self, z, xi):
        return np.einsum("npd,p->nd", self.gradients(z), np.asarray(xi, dtype=float))


def build_library(z, spec):
    """Evaluate the library at samples ``z``.

    Returns ``(theta, grad_theta)`` with ``theta`` of shape (n, p) and
    ``grad_theta`` of shape (n, p, d).
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if not np.all(np.isfinite(z)):
        raise ValueError("library evaluation requires finite states")
    return spec.values(z), spec.gradients(z)
