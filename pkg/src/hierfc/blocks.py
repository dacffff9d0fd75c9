"""Neural building blocks on the autodiff tape.

All blocks operate on batches: a sequence input is (B, steps, features) as a
plain array, states and activations are (B, hidden) Tensors. Parameters live
in flat name->Tensor dicts so the optimizer and checkpoint code can stay
structure-agnostic.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, constant


class BlockError(ValueError):
    pass


GATES = ("i", "f", "o", "g")


def init_lstm(rng: np.random.Generator, prefix: str, input_dim: int, hidden: int,
              params: dict) -> None:
    """Four-gate LSTM weights: W* (input_dim, hidden), U* (hidden, hidden),
    b* (hidden,). Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero
    except the forget gate's, which starts at 1."""
    for gate in GATES:
        wb = 1.0 / np.sqrt(input_dim)
        ub = 1.0 / np.sqrt(hidden)
        params[f"{prefix}.W{gate}"] = Tensor(
            rng.uniform(-wb, wb, size=(input_dim, hidden)), requires_grad=True
        )
        params[f"{prefix}.U{gate}"] = Tensor(
            rng.uniform(-ub, ub, size=(hidden, hidden)), requires_grad=True
        )
        bias = np.ones(hidden) if gate == "f" else np.zeros(hidden)
        params[f"{prefix}.b{gate}"] = Tensor(bias, requires_grad=True)


def init_affine(rng: np.random.Generator, prefix: str, in_dim: int, out_dim: int,
                params: dict) -> None:
    bound = 1.0 / np.sqrt(in_dim)
    params[f"{prefix}.W"] = Tensor(
        rng.uniform(-bound, bound, size=(in_dim, out_dim)), requires_grad=True
    )
    params[f"{prefix}.b"] = Tensor(np.zeros(out_dim), requires_grad=True)


def affine(params: dict, prefix: str, x: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{prefix}.W"]), params[f"{prefix}.b"])


def lstm_cell(params: dict, prefix: str, x: Tensor, h: Tensor, c: Tensor):
    """One LSTM step; returns (h', c')."""
    def gate(name):
        return ad.add(
            ad.add(ad.matmul(x, params[f"{prefix}.W{name}"]),
                   ad.matmul(h, params[f"{prefix}.U{name}"])),
            params[f"{prefix}.b{name}"],
        )

    i = ad.sigmoid(gate("i"))
    f = ad.sigmoid(gate("f"))
    o = ad.sigmoid(gate("o"))
    g = ad.tanh(gate("g"))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def lstm_encode(params: dict, prefix: str, sequence: np.ndarray):
    """Run the LSTM over (B, steps, input_dim); returns terminal (h, c)."""
    sequence = np.asarray(sequence, dtype=np.float64)
    if sequence.ndim != 3:
        raise BlockError(f"lstm_encode needs (B, steps, input_dim), got {sequence.shape}")
    input_dim = params[f"{prefix}.Wi"].data.shape[0]
    if sequence.shape[2] != input_dim:
        raise BlockError(
            f"{prefix}: input_dim {sequence.shape[2]} != expected {input_dim}"
        )
    B = sequence.shape[0]
    hidden = params[f"{prefix}.Ui"].data.shape[0]
    h = constant(np.zeros((B, hidden)))
    c = constant(np.zeros((B, hidden)))
    for t in range(sequence.shape[1]):
        h, c = lstm_cell(params, prefix, constant(sequence[:, t, :]), h, c)
    return h, c


def tvar_decode(params: dict, prefix: str, enc_h: Tensor, xf: np.ndarray, F: int):
    """F independent heads; head f maps concat(enc_h, X_F[f]) through one ReLU
    hidden layer to a length-H AR weight vector. Returns a list of (B, H)."""
    xf = np.asarray(xf, dtype=np.float64)
    if xf.ndim != 3 or xf.shape[1] != F:
        raise BlockError(f"tvar_decode: X_F must be (B, {F}, D), got {xf.shape}")
    heads = []
    for f in range(F):
        key = f"{prefix}.head{f}.fc1.W"
        if key not in params:
            raise BlockError(f"tvar_decode: missing head {f} (prefix {prefix})")
        head_in = ad.concat([enc_h, constant(xf[:, f, :])], axis=-1)
        hidden = ad.relu(affine(params, f"{prefix}.head{f}.fc1", head_in))
        heads.append(affine(params, f"{prefix}.head{f}.fc2", hidden))
    return heads


def basis_decode(params: dict, lstm_prefix: str, read_prefix: str,
                 enc_h: Tensor, enc_c: Tensor, xf: np.ndarray, F: int):
    """LSTM decoder seeded with the encoder states, consuming X_F rows; a
    shared affine readout yields the (B, K) basis vector per step."""
    xf = np.asarray(xf, dtype=np.float64)
    if xf.ndim != 3 or xf.shape[1] != F:
        raise BlockError(f"basis_decode: X_F must be (B, {F}, D), got {xf.shape}")
    h, c = enc_h, enc_c
    out = []
    for f in range(F):
        h, c = lstm_cell(params, lstm_prefix, constant(xf[:, f, :]), h, c)
        out.append(affine(params, read_prefix, h))
    return out


def embed_lookup(table: Tensor, indices) -> Tensor:
    """Rows of embeddings for the given series: (K, N) table -> (B, K)."""
    indices = np.asarray(indices, dtype=np.int64)
    N = table.data.shape[1]
    if indices.size and (indices.min() < 0 or indices.max() >= N):
        raise BlockError(f"embedding index out of range [0, {N})")
    return ad.take_columns(table, indices)
