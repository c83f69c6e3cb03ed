"""Evaluable observable dictionaries: identity, monomial, neural (ELU MLP),
state-inclusive composition, constant augmentation, and affine pre-composition.

All dictionaries map state columns X (n x N) to lifted columns (n_L x N).
Neural dictionaries carry a flat parameter vector and support exact
reverse-mode parameter gradients for the training loops in ``solvers``.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NonFiniteStateError


def elu(u):
    return np.where(u >= 0, u, np.expm1(np.minimum(u, 0.0)))


def elu_prime(u):
    return np.where(u >= 0, 1.0, np.exp(np.minimum(u, 0.0)))


def _as_columns(x, n):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[:, None]
    if x.shape[0] != n:
        raise ConfigError(f"expected input dimension {n}, got {x.shape[0]}")
    return x, single


class Dictionary:
    """Base class; subclasses set n, n_L, kind, is_state_inclusive, has_constant."""

    kind = None
    is_state_inclusive = False
    has_constant = False

    def __call__(self, x):
        X, single = _as_columns(x, self.n)
        out = self._eval(X)
        return out[:, 0] if single else out

    def _eval(self, X):
        raise NotImplementedError

    @property
    def n_params(self):
        return 0

    def params_vec(self):
        return np.empty(0)

    def set_params_vec(self, v):
        if len(v) != 0:
            raise ConfigError("dictionary has no parameters")

    def param_gradient(self, x, cotangent):
        """Gradient of sum(cotangent * eval(x)) with respect to the flat params."""
        X, single = _as_columns(x, self.n)
        C = np.asarray(cotangent, dtype=float)
        if single:
            C = C[:, None]
        if C.shape != (self.n_L, X.shape[1]):
            raise ConfigError("cotangent shape mismatch")
        return self._param_gradient(X, C)

    def _param_gradient(self, X, C):
        return np.empty(0)

    def to_dict(self):
        d = {"kind": self.kind, "n": self.n, "n_L": self.n_L,
             "is_state_inclusive": self.is_state_inclusive,
             "has_constant": self.has_constant,
             "architecture": self._architecture(),
             "params": self.params_vec().tolist()}
        return d

    def _architecture(self):
        return {}

    @staticmethod
    def from_dict(d):
        kind = d["kind"]
        arch = d["architecture"]
        if kind == "identity":
            return IdentityDictionary(d["n"])
        if kind == "monomial":
            return MonomialDictionary(d["n"], [tuple(e) for e in arch["exponents"]])
        if kind == "neural":
            dic = NeuralDictionary(d["n"], arch["widths"], arch["n_outputs"], seed=0)
            dic.set_params_vec(np.array(d["params"]))
            return dic
        if kind == "state-inclusive":
            return StateInclusiveDictionary(Dictionary.from_dict(arch["inner"]))
        if kind == "constant-appended":
            return ConstantAppendedDictionary(Dictionary.from_dict(arch["inner"]))
        if kind == "affine-input":
            return AffineInputDictionary(Dictionary.from_dict(arch["inner"]),
                                         np.array(arch["A"]), np.array(arch["a"]))
        if kind == "stacked":
            return StackedDictionary([Dictionary.from_dict(b) for b in arch["blocks"]])
        raise ConfigError(f"unknown dictionary kind {kind!r}")


class IdentityDictionary(Dictionary):
    kind = "identity"
    is_state_inclusive = True

    def __init__(self, n):
        self.n = n
        self.n_L = n

    def _eval(self, X):
        return X.copy()


class MonomialDictionary(Dictionary):
    """Observables prod_i x_i^{p_{r,i}} for a list of exponent tuples."""

    kind = "monomial"

    def __init__(self, n, exponents):
        self.n = n
        self.exponents = [tuple(int(e) for e in row) for row in exponents]
        for row in self.exponents:
            if len(row) != n or any(e < 0 for e in row):
                raise ConfigError("exponents must be nonnegative integer n-tuples")
        self.n_L = len(self.exponents)
        unit = [tuple(1 if j == i else 0 for j in range(n)) for i in range(n)]
        self.is_state_inclusive = self.exponents[:n] == unit

    def _eval(self, X):
        out = np.ones((self.n_L, X.shape[1]))
        for r, row in enumerate(self.exponents):
            for i, e in enumerate(row):
                if e:
                    out[r] *= X[i] ** e
        return out

    def _architecture(self):
        return {"exponents": [list(e) for e in self.exponents]}


class NeuralDictionary(Dictionary):
    """Feed-forward ELU network g_L o elu o ... o elu o g_1, not state-inclusive."""

    kind = "neural"

    def __init__(self, n, widths, n_outputs, seed=0):
        if n_outputs < 1 or any(w < 1 for w in widths):
            raise ConfigError("all layer sizes must be >= 1")
        self.n = n
        self.widths = list(widths)
        self.n_outputs = n_outputs
        self.n_L = n_outputs
        rng = np.random.default_rng(seed)
        sizes = [n] + self.widths + [n_outputs]
        self.W = []
        self.b = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            s = 1.0 / np.sqrt(fan_in)
            self.W.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
            self.b.append(rng.uniform(-s, s, size=fan_out))

    @property
    def n_params(self):
        return sum(w.size + bb.size for w, bb in zip(self.W, self.b))

    def params_vec(self):
        return np.concatenate([np.concatenate([w.ravel(), bb]) for w, bb in zip(self.W, self.b)])

    def set_params_vec(self, v):
        v = np.asarray(v, dtype=float)
        if v.size != self.n_params:
            raise ConfigError("parameter vector length mismatch")
        pos = 0
        for i, (w, bb) in enumerate(zip(self.W, self.b)):
            self.W[i] = v[pos:pos + w.size].reshape(w.shape)
            pos += w.size
            self.b[i] = v[pos:pos + bb.size].copy()
            pos += bb.size

    def _forward(self, X):
        pre = []  # pre-activations per layer
        a = X
        acts = [a]
        for i, (w, bb) in enumerate(zip(self.W, self.b)):
            z = w @ a + bb[:, None]
            if not np.all(np.isfinite(z)):
                raise NonFiniteStateError(f"non-finite activation in layer {i + 1}", layer=i + 1)
            pre.append(z)
            a = elu(z) if i < len(self.W) - 1 else z
            acts.append(a)
        return pre, acts

    def _eval(self, X):
        return self._forward(X)[1][-1]

    def _param_gradient(self, X, C):
        pre, acts = self._forward(X)
        grads_W = [None] * len(self.W)
        grads_b = [None] * len(self.W)
        delta = C
        for i in range(len(self.W) - 1, -1, -1):
            grads_W[i] = delta @ acts[i].T
            grads_b[i] = delta.sum(axis=1)
            if i > 0:
                delta = (self.W[i].T @ delta) * elu_prime(pre[i - 1])
        return np.concatenate([np.concatenate([gw.ravel(), gb])
                               for gw, gb in zip(grads_W, grads_b)])

    def _architecture(self):
        return {"widths": self.widths, "n_outputs": self.n_outputs}


class _WrapperDictionary(Dictionary):
    def __init__(self, inner):
        self.inner = inner
        self.n = inner.n

    @property
    def n_params(self):
        return self.inner.n_params

    def params_vec(self):
        return self.inner.params_vec()

    def set_params_vec(self, v):
        self.inner.set_params_vec(v)


class StateInclusiveDictionary(_WrapperDictionary):
    """[x; inner(x)] -- prepends the raw state block so the state itself is
    always among the observables."""

    kind = "state-inclusive"
    is_state_inclusive = True

    def __init__(self, inner):
        if inner.has_constant:
            raise ConfigError("append the constant after state inclusion, not before")
        super().__init__(inner)
        self.n_L = inner.n + inner.n_L

    def _eval(self, X):
        return np.vstack([X, self.inner._eval(X)])

    def _param_gradient(self, X, C):
        return self.inner._param_gradient(X, C[self.n:])

    def _architecture(self):
        return {"inner": self.inner.to_dict()}


class ConstantAppendedDictionary(_WrapperDictionary):
    """[inner(x); 1] -- trailing constant observable."""

    kind = "constant-appended"
    has_constant = True

    def __init__(self, inner):
        if inner.has_constant:
            raise ConfigError("dictionary already contains the constant observable")
        super().__init__(inner)
        self.n_L = inner.n_L + 1
        self.is_state_inclusive = inner.is_state_inclusive

    def _eval(self, X):
        return np.vstack([self.inner._eval(X), np.ones((1, X.shape[1]))])

    def _param_gradient(self, X, C):
        return self.inner._param_gradient(X, C[:-1])

    def _architecture(self):
        return {"inner": self.inner.to_dict()}


class AffineInputDictionary(_WrapperDictionary):
    """inner(A x + a) -- used for observables in transformed coordinates."""

    kind = "affine-input"

    def __init__(self, inner, A, a):
        super().__init__(inner)
        self.A = np.asarray(A, dtype=float)
        self.a = np.asarray(a, dtype=float)
        if self.A.shape != (inner.n, inner.n) or self.a.shape != (inner.n,):
            raise ConfigError("affine map shape mismatch")
        self.n_L = inner.n_L
        self.is_state_inclusive = False

    def _mapped(self, X):
        return self.A @ X + self.a[:, None]

    def _eval(self, X):
        return self.inner._eval(self._mapped(X))

    def _param_gradient(self, X, C):
        return self.inner._param_gradient(self._mapped(X), C)

    def _architecture(self):
        return {"inner": self.inner.to_dict(), "A": self.A.tolist(), "a": self.a.tolist()}


class StackedDictionary(Dictionary):
    """Vertical concatenation of several dictionaries over the same input."""

    kind = "stacked"

    def __init__(self, blocks):
        if not blocks:
            raise ConfigError("need at least one block")
        self.blocks = list(blocks)
        self.n = blocks[0].n
        if any(b.n != self.n for b in blocks):
            raise ConfigError("all blocks must share the input dimension")
        self.n_L = sum(b.n_L for b in blocks)
        self.is_state_inclusive = blocks[0].is_state_inclusive
        self.has_constant = any(b.has_constant for b in blocks)

    @property
    def n_params(self):
        return sum(b.n_params for b in self.blocks)

    def params_vec(self):
        parts = [b.params_vec() for b in self.blocks]
        return np.concatenate(parts) if parts else np.empty(0)

    def set_params_vec(self, v):
        pos = 0
        for b in self.blocks:
            b.set_params_vec(v[pos:pos + b.n_params])
            pos += b.n_params

    def _eval(self, X):
        return np.vstack([b._eval(X) for b in self.blocks])

    def _param_gradient(self, X, C):
        parts = []
        row = 0
        for b in self.blocks:
            parts.append(b._param_gradient(X, C[row:row + b.n_L]))
            row += b.n_L
        return np.concatenate(parts) if parts else np.empty(0)

    def _architecture(self):
        return {"blocks": [b.to_dict() for b in self.blocks]}


def make_monomial(n, exponent_list):
    """State-inclusive monomial dictionary: unit monomials for the n states
    followed by the given extra exponent tuples. An empty list gives the
    identity dictionary."""
    if not exponent_list:
        return IdentityDictionary(n)
    unit = [tuple(1 if j == i else 0 for j in range(n)) for i in range(n)]
    return MonomialDictionary(n, unit + [tuple(e) for e in exponent_list])


def make_neural(n, n_hidden_layers, nodes_per_layer, n_outputs, seed):
    """State-inclusive neural dictionary [x; phi(x)] with equal-width hidden
    layers and ELU activations; n_L = n + n_outputs."""
    net = NeuralDictionary(n, [nodes_per_layer] * n_hidden_layers, n_outputs, seed=seed)
    return StateInclusiveDictionary(net)


def append_constant(dic):
    """Add the trailing constant observable 1 (rejects double appends)."""
    return ConstantAppendedDictionary(dic)


def nonlinear_part(dic):
    """The phi block of a state-inclusive, constant-free dictionary."""
    if dic.has_constant:
        raise ConfigError("strip the constant before taking the nonlinear part")
    if not dic.is_state_inclusive:
        raise ConfigError("dictionary is not state-inclusive")
    if isinstance(dic, IdentityDictionary):
        return MonomialDictionary(dic.n, [])
    if isinstance(dic, StateInclusiveDictionary):
        return dic.inner
    if isinstance(dic, MonomialDictionary):
        return MonomialDictionary(dic.n, dic.exponents[dic.n:])
    if isinstance(dic, StackedDictionary):
        return StackedDictionary([nonlinear_part(dic.blocks[0])] + dic.blocks[1:])
    raise ConfigError(f"cannot split dictionary of kind {dic.kind!r}")
