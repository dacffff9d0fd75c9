"""The two-branch forecaster and its training loss.

A prediction for series i over F future steps is

    yhat_f = <y_hist_i, a_f(X_hist, X_fut, Z_hist)> + <theta_i, b_f(X_hist, X_fut, Z_hist)>

where `a` comes from the time-varying-AR branch (an LSTM encoder plus F
fully-connected heads) and `b` from the basis branch (an LSTM
encoder/decoder). Neither network sees the series' own history or embedding,
so `a` and `b` are shared across all series at a timestamp and the AR term is
coherent by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import blocks
from .autodiff import Tensor, constant
from .blocks import BlockError
from .data import ForecastWindow
from .hierarchy import HierarchyTree

MODES = ("full", "no_reg", "tvar_only", "bd_only")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    H: int
    F: int
    K: int
    R: int
    D: int
    n_series: int
    enc_hidden: int
    dec_hidden: int
    lambda_e: float = 0.0
    mode: str = "full"
    shared_encoder: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ModelError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.lambda_e < 0:
            raise ModelError(f"lambda_e must be >= 0, got {self.lambda_e}")
        for name in ("H", "F", "K", "D", "n_series", "enc_hidden", "dec_hidden"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1")
        if self.R < 0:
            raise ModelError("R must be >= 0")

    @property
    def uses_tvar(self) -> bool:
        return self.mode != "bd_only"

    @property
    def uses_bd(self) -> bool:
        return self.mode != "tvar_only"

    @property
    def effective_lambda(self) -> float:
        if self.mode in ("no_reg", "tvar_only"):
            return 0.0
        return self.lambda_e

    @property
    def enc_input_dim(self) -> int:
        return self.D + self.R


@dataclass
class ModelParams:
    """Flat name->Tensor map; iteration order is creation order and fixed."""

    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    @property
    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.tensors.values())


def _encoder_prefixes(config: ModelConfig) -> tuple[str, str]:
    """(tvar encoder prefix, bd encoder prefix)."""
    if config.shared_encoder:
        return "enc", "enc"
    return "tvar_enc", "bd_enc"


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic initialization; the draw order is the dict order."""
    rng = np.random.default_rng(seed)
    p: dict[str, Tensor] = {}
    tvar_enc, bd_enc = _encoder_prefixes(config)
    made = set()
    if config.uses_tvar:
        blocks.init_lstm(rng, tvar_enc, config.enc_input_dim, config.enc_hidden, p)
        made.add(tvar_enc)
        for f in range(config.F):
            blocks.init_affine(
                rng, f"tvar.head{f}.fc1", config.enc_hidden + config.D,
                config.dec_hidden, p,
            )
            blocks.init_affine(rng, f"tvar.head{f}.fc2", config.dec_hidden, config.H, p)
    if config.uses_bd:
        if bd_enc not in made:
            blocks.init_lstm(rng, bd_enc, config.enc_input_dim, config.enc_hidden, p)
        blocks.init_lstm(rng, "bd_dec", config.D, config.enc_hidden, p)
        blocks.init_affine(rng, "bd_read", config.enc_hidden, config.K, p)
        p["embed.table"] = Tensor(
            rng.normal(0.0, 0.05, size=(config.K, config.n_series)),
            requires_grad=True,
        )
    return ModelParams(tensors=p)


@dataclass(frozen=True)
class WindowBatch:
    """Dense batch view with per-timestamp deduplication.

    The encoder runs once per distinct window start (U of them); `win_to_uniq`
    scatters encoder outputs back to the B windows.
    """

    history: np.ndarray       # (B, H)
    target: np.ndarray        # (B, F)
    series: np.ndarray        # (B,)
    enc_inputs: np.ndarray    # (U, H, D+R)
    xf: np.ndarray            # (U, F, D)
    win_to_uniq: np.ndarray   # (B,)

    @property
    def size(self) -> int:
        return self.history.shape[0]

    @staticmethod
    def from_windows(windows: list[ForecastWindow]) -> "WindowBatch":
        if not windows:
            raise ModelError("empty batch")
        starts = sorted({w.t_start for w in windows})
        uniq_index = {t: u for u, t in enumerate(starts)}
        by_start: dict[int, ForecastWindow] = {}
        for w in windows:
            by_start.setdefault(w.t_start, w)
        enc_list, xf_list = [], []
        for t in starts:
            w = by_start[t]
            cov_h = np.asarray(w.cov_history, dtype=np.float64)
            if w.z_history is not None:
                enc_list.append(np.concatenate([cov_h, w.z_history], axis=1))
            else:
                enc_list.append(cov_h)
            xf_list.append(np.asarray(w.cov_future, dtype=np.float64))
        return WindowBatch(
            history=np.stack([w.history for w in windows]),
            target=np.stack([w.target for w in windows]),
            series=np.array([w.series for w in windows], dtype=np.int64),
            enc_inputs=np.stack(enc_list),
            xf=np.stack(xf_list),
            win_to_uniq=np.array([uniq_index[w.t_start] for w in windows], dtype=np.int64),
        )


def _check_batch(config: ModelConfig, batch: WindowBatch) -> None:
    B, H = batch.history.shape
    if H != config.H:
        raise ModelError(f"history length {H} != config H {config.H}")
    if batch.target.shape != (B, config.F):
        raise ModelError(f"target shape {batch.target.shape} != (B, {config.F})")
    if batch.enc_inputs.shape[2] != config.enc_input_dim:
        raise ModelError(
            f"encoder input dim {batch.enc_inputs.shape[2]} != D+R = "
            f"{config.enc_input_dim}"
        )
    if batch.xf.shape[1:] != (config.F, config.D):
        raise ModelError(f"X_F shape {batch.xf.shape} != (U, {config.F}, {config.D})")


def forward_batch(params: ModelParams, batch: WindowBatch, config: ModelConfig) -> Tensor:
    """Predictions for a batch, shape (B, F), on the active tape."""
    _check_batch(config, batch)
    p = params.tensors
    tvar_enc, bd_enc = _encoder_prefixes(config)
    step_preds: list[Tensor] = []

    states: dict[str, tuple[Tensor, Tensor]] = {}

    def encode(prefix):
        if prefix not in states:
            if f"{prefix}.Wi" not in p:
                raise ModelError(f"mode {config.mode!r} needs params for {prefix!r}")
            states[prefix] = blocks.lstm_encode(p, prefix, batch.enc_inputs)
        return states[prefix]

    tvar_weights = None
    if config.uses_tvar:
        h_enc, _ = encode(tvar_enc)
        tvar_weights = blocks.tvar_decode(p, "tvar", h_enc, batch.xf, config.F)

    basis = None
    theta = None
    if config.uses_bd:
        if "embed.table" not in p:
            raise ModelError(f"mode {config.mode!r} needs the embedding table")
        bh, bc = encode(bd_enc)
        basis = blocks.basis_decode(p, "bd_dec", "bd_read", bh, bc, batch.xf, config.F)
        theta = blocks.embed_lookup(p["embed.table"], batch.series)

    hist = constant(batch.history)
    for f in range(config.F):
        parts = []
        if tvar_weights is not None:
            a_f = ad.take_rows(tvar_weights[f], batch.win_to_uniq)
            parts.append(ad.inner_product(hist, a_f))
        if basis is not None:
            b_f = ad.take_rows(basis[f], batch.win_to_uniq)
            parts.append(ad.inner_product(theta, b_f))
        pred_f = parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])
        step_preds.append(ad.reshape(pred_f, (batch.size, 1)))
    return step_preds[0] if config.F == 1 else ad.concat(step_preds, axis=-1)


def forward(params: ModelParams, window: ForecastWindow, config: ModelConfig) -> np.ndarray:
    """Length-F prediction for one window (no tape required)."""
    batch = WindowBatch.from_windows([window])
    return forward_batch(params, batch, config).data[0].copy()


def bd_basis_values(params: ModelParams, config: ModelConfig,
                    enc_inputs: np.ndarray, xf: np.ndarray) -> np.ndarray:
    """Basis values b_f for given window contexts, shape (U, F, K), no tape.

    enc_inputs: (U, H, D+R) history-side encoder inputs; xf: (U, F, D).
    Together with the embedding table this reconstructs the decomposition
    branch exactly: that branch's prediction is <theta_i, b_f>.
    """
    if not config.uses_bd:
        raise ModelError(f"mode {config.mode!r} has no basis decomposition")
    p = params.tensors
    _, bd_enc = _encoder_prefixes(config)
    if f"{bd_enc}.Wi" not in p:
        raise ModelError(f"mode {config.mode!r} needs params for {bd_enc!r}")
    enc_inputs = np.asarray(enc_inputs, dtype=np.float64)
    xf = np.asarray(xf, dtype=np.float64)
    if enc_inputs.ndim != 3 or enc_inputs.shape[1:] != (config.H, config.enc_input_dim):
        raise ModelError(
            f"enc_inputs must be (U, {config.H}, {config.enc_input_dim}), "
            f"got {enc_inputs.shape}"
        )
    if xf.shape != (enc_inputs.shape[0], config.F, config.D):
        raise ModelError(
            f"xf must be ({enc_inputs.shape[0]}, {config.F}, {config.D}), "
            f"got {xf.shape}"
        )
    bh, bc = blocks.lstm_encode(p, bd_enc, enc_inputs)
    basis = blocks.basis_decode(p, "bd_dec", "bd_read", bh, bc, xf, config.F)
    return np.stack([b.data for b in basis], axis=1)


def _regularizer_index(tree: HierarchyTree):
    """(parent_repeats, leaves) index arrays over all internal nodes."""
    parents, leaves = [], []
    for pnode, ls in enumerate(tree.leaf_sets):
        if tree.children[pnode]:
            parents.extend([pnode] * len(ls))
            leaves.extend(ls)
    return np.array(parents, dtype=np.int64), np.array(leaves, dtype=np.int64)


def embedding_regularizer(table: Tensor, tree: HierarchyTree) -> Tensor:
    """Sum over internal nodes p of sum over leaves i under p of ||theta_p - theta_i||^2."""
    if table.data.shape[1] != tree.node_count:
        raise ModelError(
            f"table has {table.data.shape[1]} columns, tree has {tree.node_count} nodes"
        )
    parents, leaves = _regularizer_index(tree)
    if parents.size == 0:
        return constant(np.zeros(()))
    tp = blocks.embed_lookup(table, parents)
    tl = blocks.embed_lookup(table, leaves)
    diff = ad.sub(tp, tl)
    return ad.tsum(ad.mul(diff, diff))


def regularizer_value(table: np.ndarray, tree: HierarchyTree) -> float:
    return float(embedding_regularizer(Tensor(np.asarray(table, dtype=np.float64)), tree).data)


def loss(params: ModelParams, batch: WindowBatch, tree: HierarchyTree,
         config: ModelConfig) -> Tensor:
    """Summed absolute prediction error over the batch plus the weighted
    embedding regularizer (added once per call, i.e. once per optimizer step)."""
    preds = forward_batch(params, batch, config)
    total = ad.tsum(ad.absval(ad.sub(preds, constant(batch.target))))
    lam = config.effective_lambda
    if lam > 0.0:
        reg = embedding_regularizer(params["embed.table"], tree)
        total = ad.add(total, ad.scale(reg, lam))
    return total
