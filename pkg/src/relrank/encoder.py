"""Context-sensitive term encoding with a residual bidirectional LSTM.

The hidden size equals the embedding size: each output position is
``[forward_hidden + embedding ; backward_hidden + embedding]``, length
2 * dim, so the encoder can only reshape the embedding space, not change
its width.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ParameterSet, Tensor, concat, stack
from .errors import ConfigError


def orthogonal_matrix(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    # Fix signs so the factorization (and hence the init) is unique.
    return q * np.sign(np.diag(r))


class LstmCell:
    """One recurrent cell; gate order [input, forget, output, candidate].

    Input weights are (dim, 4*dim) and applied as ``x @ w_in`` for the whole
    sequence at once; recurrent weights are (4*dim, dim).  The forget-gate
    bias block starts at 1.0, everything else at 0.
    """

    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        bound = 1.0 / np.sqrt(dim)
        self.w_in = Tensor(rng.uniform(-bound, bound, (dim, 4 * dim)))
        self.w_rec = Tensor(np.vstack([orthogonal_matrix(rng, dim) for _ in range(4)]))
        bias = np.zeros(4 * dim)
        bias[dim:2 * dim] = 1.0
        self.bias = Tensor(bias)

    def parameters(self, prefix: str):
        return [(f"{prefix}.w_in", self.w_in), (f"{prefix}.w_rec", self.w_rec),
                (f"{prefix}.bias", self.bias)]

    def step(self, zx: Tensor, h: Tensor, c: Tensor):
        d = self.dim
        z = zx + self.w_rec @ h + self.bias
        gate_in = z[0:d].sigmoid()
        gate_forget = z[d:2 * d].sigmoid()
        gate_out = z[2 * d:3 * d].sigmoid()
        candidate = z[3 * d:4 * d].tanh()
        c_new = gate_forget * c + gate_in * candidate
        h_new = gate_out * c_new.tanh()
        return h_new, c_new

    def run(self, x: Tensor, positions) -> list[Tensor]:
        """Hidden states visiting ``positions`` in order, returned in visit order."""
        zx = x @ self.w_in
        h = Tensor(np.zeros(self.dim))
        c = Tensor(np.zeros(self.dim))
        states = []
        for pos in positions:
            h, c = self.step(zx[pos], h, c)
            states.append(h)
        return states


class BiRnnEncoder:
    """Residual bidirectional encoder over per-position embedding vectors."""

    def __init__(self, dim: int, rng: np.random.Generator | None = None,
                 dropout: float = 0.0):
        if rng is None:
            rng = np.random.default_rng(0)
        self.dim = dim
        self.dropout = float(dropout)
        self.forward_cell = LstmCell(dim, rng)
        self.backward_cell = LstmCell(dim, rng)

    @property
    def output_dim(self) -> int:
        return 2 * self.dim

    def parameters(self, prefix: str = "encoder"):
        return (self.forward_cell.parameters(f"{prefix}.fwd")
                + self.backward_cell.parameters(f"{prefix}.bwd"))

    def register(self, params: ParameterSet, prefix: str = "encoder") -> None:
        for name, tensor in self.parameters(prefix):
            params.add(name, tensor)

    def encode(self, x: Tensor, dropout_rng: np.random.Generator | None = None) -> Tensor:
        """Encode an (n, dim) sequence into (n, 2*dim) context vectors.

        ``dropout_rng`` enables input dropout (training only); inverted
        scaling keeps the expected activation unchanged.
        """
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ConfigError(
                f"encoder expects (n, {self.dim}) inputs, got {x.shape}")
        n = x.shape[0]
        if self.dropout > 0.0 and dropout_rng is not None:
            keep = (dropout_rng.random(x.shape) >= self.dropout) / (1.0 - self.dropout)
            x = x * Tensor(keep)
        fwd = self.forward_cell.run(x, range(n))
        bwd = self.backward_cell.run(x, range(n - 1, -1, -1))
        bwd.reverse()
        return concat([stack(fwd) + x, stack(bwd) + x], axis=1)
