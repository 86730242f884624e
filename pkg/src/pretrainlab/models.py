"""Encoders, decoders and heads, with losses and reverse-mode gradients.

Two encoder families are supported:

* ``MlpEncoder`` – ReLU stack acting on row-vector batches,
  ``h_l = relu(h_{l-1} W_lᵀ)`` with ``W_1`` of shape ``m×d`` and the rest ``m×m``.
  Zero layers is allowed and means the identity representation.
* ``TransformerEncoder`` – a stack of ``SaLayer`` blocks acting on ``K×d``
  patch matrices (or ``N×K×d`` stacks)::

      A   = softmax(X W_K (X W_Q)ᵀ / sqrt(d_K)) X W_V
      Z   = α1 A + X
      out = α2 relu(Z W_FC1) W_FC2 + Z

Downstream heads read the MLP's last activation, or the patch sum ``1ᵀh(X)``
for transformers.  Reconstruction uses a linear decoder: ``h Wᵀ`` with ``W``
of shape ``d×m`` (MLP) or ``d×d`` applied patch-wise (transformer).

Losses are batch means: reconstruction ``½‖g(h(z̃)) − y‖²`` per sample and
logistic ``log(1 + exp(−y f))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Union

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, ValidationError
from .linalg import NormReport, norm_report, relu, softmax_rows, spectral_norm

__all__ = [
    "MlpEncoder",
    "LinearDecoder",
    "SaLayer",
    "TransformerEncoder",
    "LinearHead",
    "Composite",
    "Encoder",
    "mlp_forward",
    "sa_forward",
    "transformer_forward",
    "represent",
    "init_mlp",
    "init_decoder",
    "init_sa_layer",
    "init_transformer",
    "loss_and_grads",
    "logistic",
    "layer_norm_cap",
]


def _f64(a, name: str) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MlpEncoder:
    layers: tuple[np.ndarray, ...]
    in_dim: int | None = None

    def __post_init__(self):
        layers = tuple(_f64(w, f"W{i + 1}") for i, w in enumerate(self.layers))
        for i, w in enumerate(layers):
            if w.ndim != 2:
                raise DimensionError(f"W{i + 1} must be 2-D, got {w.shape}")
            if i and w.shape[1] != layers[i - 1].shape[0]:
                raise DimensionError(
                    f"W{i + 1} {w.shape} does not compose with W{i} {layers[i - 1].shape}")
        d = self.in_dim
        if layers:
            if d is not None and d != layers[0].shape[1]:
                raise DimensionError(f"in_dim={d} but W1 has {layers[0].shape[1]} columns")
            d = layers[0].shape[1]
        elif d is None:
            raise ValidationError("an MlpEncoder without layers needs in_dim")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "in_dim", int(d))

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def out_dim(self) -> int:
        return self.layers[-1].shape[0] if self.layers else self.in_dim

    def norm_reports(self) -> list[NormReport]:
        return [norm_report(w) for w in self.layers]


@dataclass(frozen=True)
class LinearDecoder:
    w: np.ndarray

    def __post_init__(self):
        w = _f64(self.w, "decoder")
        if w.ndim != 2:
            raise DimensionError(f"decoder must be 2-D, got {w.shape}")
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class SaLayer:
    w_v: np.ndarray
    w_k: np.ndarray
    w_q: np.ndarray
    w_fc1: np.ndarray
    w_fc2: np.ndarray
    alpha1: float
    alpha2: float

    NAMES = ("w_v", "w_k", "w_q", "w_fc1", "w_fc2")

    def __post_init__(self):
        for n in self.NAMES:
            object.__setattr__(self, n, _f64(getattr(self, n), n))
        d = self.w_v.shape[0]
        dk = self.w_k.shape[1] if self.w_k.ndim == 2 else -1
        m = self.w_fc1.shape[1] if self.w_fc1.ndim == 2 else -1
        want = {"w_v": (d, d), "w_k": (d, dk), "w_q": (d, dk),
                "w_fc1": (d, m), "w_fc2": (m, d)}
        for n, shape in want.items():
            if getattr(self, n).shape != shape:
                raise DimensionError(f"{n} has shape {getattr(self, n).shape}, expected {shape}")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValidationError("alpha1 and alpha2 must be non-negative")
        object.__setattr__(self, "alpha1", float(self.alpha1))
        object.__setattr__(self, "alpha2", float(self.alpha2))

    @property
    def d(self) -> int:
        return self.w_v.shape[0]

    @property
    def d_k(self) -> int:
        return self.w_k.shape[1]

    @property
    def m(self) -> int:
        return self.w_fc1.shape[1]

    def weights(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.NAMES}

    def spectral_cap(self) -> float:
        """Largest spectral norm among the five weights (the ``W`` of the layer)."""
        return max(spectral_norm(w) for w in self.weights().values())


@dataclass(frozen=True)
class TransformerEncoder:
    layers: tuple[SaLayer, ...]
    patch_count: int
    patch_dim: int

    def __post_init__(self):
        layers = tuple(self.layers)
        if self.patch_count < 1 or self.patch_dim < 1:
            raise ValidationError("patch_count and patch_dim must be positive")
        for i, l in enumerate(layers):
            if l.d != self.patch_dim:
                raise DimensionError(f"layer {i + 1} has d={l.d}, expected {self.patch_dim}")
            if (l.d_k, l.m) != (layers[0].d_k, layers[0].m):
                raise DimensionError("all layers must share d_K and m")
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def out_dim(self) -> int:
        return self.patch_dim


Encoder = Union[MlpEncoder, TransformerEncoder]


@dataclass(frozen=True)
class LinearHead:
    theta: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError(f"head radius must be positive, got {self.radius}")
        object.__setattr__(self, "theta", _f64(self.theta, "theta"))
        if np.linalg.norm(self.theta) > self.radius * (1 + 1e-12):
            raise ValidationError("head norm exceeds its radius cap")

    @property
    def multiclass(self) -> bool:
        return self.theta.ndim == 2


@dataclass(frozen=True)
class Composite:
    """Encoder plus optional reconstruction decoder and/or downstream head."""

    encoder: Encoder
    decoder: LinearDecoder | None = None
    head: LinearHead | None = None

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        enc = self.encoder
        if isinstance(enc, MlpEncoder):
            for i, w in enumerate(enc.layers):
                out[f"enc.W{i + 1}"] = w
        else:
            for i, l in enumerate(enc.layers):
                for n, w in l.weights().items():
                    out[f"enc.{i + 1}.{n}"] = w
        if self.decoder is not None:
            out["dec.W"] = self.decoder.w
        if self.head is not None:
            out["head.theta"] = self.head.theta
        return out

    def with_params(self, params: dict[str, np.ndarray]) -> "Composite":
        enc = self.encoder
        if isinstance(enc, MlpEncoder):
            enc = MlpEncoder(tuple(params[f"enc.W{i + 1}"] for i in range(enc.depth)),
                             in_dim=enc.in_dim)
        else:
            enc = replace(enc, layers=tuple(
                replace(l, **{n: params[f"enc.{i + 1}.{n}"] for n in SaLayer.NAMES})
                for i, l in enumerate(enc.layers)))
        dec = LinearDecoder(params["dec.W"]) if self.decoder is not None else None
        head = (LinearHead(params["head.theta"], self.head.radius)
                if self.head is not None else None)
        return Composite(enc, dec, head)


# ---------------------------------------------------------------- forward passes

def mlp_forward(enc: MlpEncoder, x) -> list[np.ndarray]:
    """Activations ``h_1 … h_L``; the last one is the representation."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != enc.in_dim:
        raise DimensionError(f"expected a batch with {enc.in_dim} columns, got {h.shape}")
    acts = []
    for w in enc.layers:
        h = relu(h @ w.T)
        acts.append(h)
    return acts


def _check_patches(x, K: int, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 3) or x.shape[-2:] != (K, d):
        raise DimensionError(f"expected patches of shape (..., {K}, {d}), got {x.shape}")
    return x


def sa_forward(layer: SaLayer, x) -> np.ndarray:
    """One self-attention block on ``K×d`` (or stacked ``N×K×d``) input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 3) or x.shape[-1] != layer.d:
        raise DimensionError(f"expected patches with {layer.d} columns, got {x.shape}")
    scores = (x @ layer.w_k) @ np.swapaxes(x @ layer.w_q, -1, -2) / math.sqrt(layer.d_k)
    z = layer.alpha1 * (softmax_rows(scores) @ (x @ layer.w_v)) + x
    return layer.alpha2 * (relu(z @ layer.w_fc1) @ layer.w_fc2) + z


def transformer_forward(enc: TransformerEncoder, x) -> list[np.ndarray]:
    """Outputs of every layer, ``X^1 … X^L``."""
    h = _check_patches(x, enc.patch_count, enc.patch_dim)
    outs = []
    for l in enc.layers:
        h = sa_forward(l, h)
        outs.append(h)
    return outs


def represent(enc: Encoder, x) -> np.ndarray:
    """Representation fed to downstream heads (``n×p``)."""
    if isinstance(enc, MlpEncoder):
        acts = mlp_forward(enc, x)
        return acts[-1] if acts else np.asarray(x, dtype=np.float64)
    x = _check_patches(x, enc.patch_count, enc.patch_dim)
    outs = transformer_forward(enc, x)
    h = outs[-1] if outs else x
    return h.sum(axis=-2)


# ------------------------------------------------------------------ initialisers

def _gauss(rng: np.random.Generator, shape, m: int) -> np.ndarray:
    return rng.standard_normal(shape) * math.sqrt(2.0 / m)


def init_mlp(d: int, m: int, L: int, rng: np.random.Generator) -> MlpEncoder:
    """Rows drawn i.i.d. from ``N(0, 2I/m)``."""
    if d < 1 or m < 1 or L < 0:
        raise ValidationError("need d, m >= 1 and L >= 0")
    layers = [_gauss(rng, (m, d if i == 0 else m), m) for i in range(L)]
    return MlpEncoder(tuple(layers), in_dim=d)


def init_decoder(d: int, width: int, m: int, rng: np.random.Generator) -> LinearDecoder:
    return LinearDecoder(_gauss(rng, (d, width), m))


def init_sa_layer(d: int, d_k: int, m: int, alpha1: float, alpha2: float,
                  rng: np.random.Generator) -> SaLayer:
    return SaLayer(
        w_v=_gauss(rng, (d, d), m), w_k=_gauss(rng, (d, d_k), m),
        w_q=_gauss(rng, (d, d_k), m), w_fc1=_gauss(rng, (d, m), m),
        w_fc2=_gauss(rng, (m, d), m), alpha1=alpha1, alpha2=alpha2)


def init_transformer(K: int, d: int, d_k: int, m: int, L: int, alpha1: float,
                     alpha2: float, rng: np.random.Generator) -> TransformerEncoder:
    layers = tuple(init_sa_layer(d, d_k, m, alpha1, alpha2, rng) for _ in range(L))
    return TransformerEncoder(layers, patch_count=K, patch_dim=d)


def layer_norm_cap(enc: Encoder) -> list[float]:
    """Per-layer spectral caps ``W(l)`` realised by the current weights."""
    if isinstance(enc, MlpEncoder):
        return [spectral_norm(w) for w in enc.layers]
    return [l.spectral_cap() for l in enc.layers]


# ------------------------------------------------------------- differentiable path

def logistic(z):
    """``φ(z) = log(1 + e^{-z})``."""
    return np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


def _sa_var(layer: SaLayer, pv: dict[str, ad.Var], prefix: str, x: ad.Var) -> ad.Var:
    w = {n: pv[prefix + n] for n in SaLayer.NAMES}
    q = x @ w["w_q"]
    k = x @ w["w_k"]
    scores = (k @ ad.transpose(q)) * (1.0 / math.sqrt(layer.d_k))
    z = ad.softmax(scores) @ (x @ w["w_v"]) * layer.alpha1 + x
    return ad.relu(z @ w["w_fc1"]) @ w["w_fc2"] * layer.alpha2 + z


def encode_var(enc: Encoder, pv: dict[str, ad.Var], x: ad.Var) -> ad.Var:
    """Full encoder output (``N×m`` or ``N×K×d``)."""
    h = x
    if isinstance(enc, MlpEncoder):
        for i in range(enc.depth):
            h = ad.relu(h @ ad.transpose(pv[f"enc.W{i + 1}"]))
        return h
    for i, l in enumerate(enc.layers):
        h = _sa_var(l, pv, f"enc.{i + 1}.", h)
    return h


def represent_var(enc: Encoder, pv: dict[str, ad.Var], x: ad.Var) -> ad.Var:
    h = encode_var(enc, pv, x)
    return h if isinstance(enc, MlpEncoder) else ad.sum_axis(h, -2)


def _check_inputs(enc: Encoder, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if isinstance(enc, MlpEncoder):
        if x.ndim != 2 or x.shape[1] != enc.in_dim:
            raise DimensionError(f"expected a batch with {enc.in_dim} columns, got {x.shape}")
    else:
        x = _check_patches(x, enc.patch_count, enc.patch_dim)
        if x.ndim == 2:
            x = x[None]
    return x


def check_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if not np.all((y == 1.0) | (y == -1.0)):
        raise ValidationError("logistic labels must be -1 or +1")
    return y


def reconstruction_var(model: Composite, pv: dict[str, ad.Var], inputs, targets,
                       loss_mask=None) -> ad.Var:
    """Mean over samples of ``½‖decoder(h(input)) − target‖²``."""
    if model.decoder is None:
        raise ValidationError("reconstruction loss needs a decoder")
    x = _check_inputs(model.encoder, inputs)
    y = np.asarray(targets, dtype=np.float64).reshape(x.shape)
    out = encode_var(model.encoder, pv, ad.const(x)) @ ad.transpose(pv["dec.W"])
    if out.shape != y.shape:
        raise DimensionError(f"decoder output {out.shape} does not match targets {y.shape}")
    r = out - y
    if loss_mask is not None:
        r = r * np.asarray(loss_mask, dtype=np.float64).reshape(y.shape)
    return ad.total(ad.square(r)) * (0.5 / x.shape[0])


def logistic_var(model: Composite, pv: dict[str, ad.Var], inputs, labels) -> ad.Var:
    if model.head is None or model.head.multiclass:
        raise ValidationError("logistic loss needs a binary linear head")
    x = _check_inputs(model.encoder, inputs)
    y = check_labels(labels)
    if y.shape[0] != x.shape[0]:
        raise DimensionError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
    rep = represent_var(model.encoder, pv, ad.const(x))
    f = ad.sum_axis(rep * pv["head.theta"], -1)
    margins = f * y
    return ad.total(ad.softplus(-margins)) * (1.0 / x.shape[0])


def loss_and_grads(model: Composite, inputs, targets,
                   loss_kind: Literal["mse", "logistic"] = "mse",
                   loss_mask=None) -> tuple[float, dict[str, np.ndarray]]:
    """Batch-mean loss and its gradient with respect to every parameter.

    ``mse`` reconstructs ``targets`` through the decoder (``loss_mask``, if
    given, restricts the residual to the masked entries); ``logistic`` scores
    the head on the representation against ±1 labels.
    """
    params = model.params()
    pv = {k: ad.param(v) for k, v in params.items()}
    if loss_kind == "mse":
        loss = reconstruction_var(model, pv, inputs, targets, loss_mask)
    elif loss_kind == "logistic":
        loss = logistic_var(model, pv, inputs, targets)
    else:
        raise ValidationError(f"unknown loss kind {loss_kind!r}")
    names = list(params)
    grads = ad.grad(loss, [pv[k] for k in names])
    return float(loss.value), dict(zip(names, grads))
