"""Models and tasks stored as weight containers.

Besides the parameter tensors (named as in :meth:`Composite.params`) a model
container carries a ``meta.arch`` row: ``[kind, in_dim, K, d, alpha1,
alpha2]`` with kind 0 for the MLP encoder and 1 for the transformer.  A task
container stores every array as a 2-D tensor plus ``meta.task``:
``[K, d, c1, c2, seed_lo, seed_hi]`` (the seed split into 32-bit halves so it
survives the float64 encoding exactly).
"""

from __future__ import annotations

import numpy as np

from ..errors import ContainerFormatError
from ..models import (Composite, LinearDecoder, LinearHead, MlpEncoder, SaLayer,
                      TransformerEncoder)
from ..synth import SynthTask
from .container import load_weights, save_weights

__all__ = ["model_to_tensors", "model_from_tensors", "save_model", "load_model",
           "task_to_tensors", "task_from_tensors", "save_task", "load_task"]


def _need(t: dict, name: str) -> np.ndarray:
    if name not in t:
        raise ContainerFormatError(f"container lacks tensor {name!r}", 0)
    return t[name]


def model_to_tensors(model: Composite) -> dict[str, np.ndarray]:
    enc = model.encoder
    if isinstance(enc, MlpEncoder):
        meta = [0.0, enc.in_dim, 1.0, enc.in_dim, 0.0, 0.0]
    else:
        a1 = enc.layers[0].alpha1 if enc.layers else 0.0
        a2 = enc.layers[0].alpha2 if enc.layers else 0.0
        meta = [1.0, enc.patch_dim, enc.patch_count, enc.patch_dim, a1, a2]
    out = {"meta.arch": np.array([meta], dtype=np.float64)}
    for k, v in model.params().items():
        out[k] = v if v.ndim == 2 else v.reshape(1, -1)
    return out


def model_from_tensors(t: dict[str, np.ndarray]) -> Composite:
    meta = _need(t, "meta.arch")
    if meta.shape != (1, 6):
        raise ContainerFormatError("meta.arch must be 1x6", 0)
    kind, in_dim, K, d, a1, a2 = meta[0]
    if kind == 0:
        layers, i = [], 1
        while f"enc.W{i}" in t:
            layers.append(t[f"enc.W{i}"])
            i += 1
        enc = MlpEncoder(tuple(layers), in_dim=int(in_dim))
    elif kind == 1:
        layers, i = [], 1
        while f"enc.{i}.w_v" in t:
            layers.append(SaLayer(**{n: t[f"enc.{i}.{n}"] for n in SaLayer.NAMES},
                                  alpha1=float(a1), alpha2=float(a2)))
            i += 1
        enc = TransformerEncoder(tuple(layers), patch_count=int(K), patch_dim=int(d))
    else:
        raise ContainerFormatError(f"unknown encoder kind {kind}", 0)
    dec = LinearDecoder(t["dec.W"]) if "dec.W" in t else None
    head = None
    if "head.theta" in t:
        th = t["head.theta"]
        radius = float(_need(t, "meta.head_radius")[0, 0])
        head = LinearHead(th[0] if th.shape[0] == 1 else th, radius)
    return Composite(enc, dec, head)


def save_model(path, model: Composite) -> None:
    t = model_to_tensors(model)
    if model.head is not None:
        t["meta.head_radius"] = np.array([[model.head.radius]])
    save_weights(path, t)


def load_model(path) -> Composite:
    return model_from_tensors(load_weights(path))


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0], -1)


def task_to_tensors(task: SynthTask) -> dict[str, np.ndarray]:
    K = task.patch_count
    d = task.pretrain_raw.shape[-1]
    seed = int(task.seed)
    out = {
        "meta.task": np.array([[K, d, task.c1, task.c2, seed & 0xFFFFFFFF, seed >> 32]],
                              dtype=np.float64),
        "pretrain_raw": _flat(task.pretrain_raw),
        "downstream_x": _flat(task.downstream_x),
        "downstream_y": task.downstream_y.reshape(task.downstream_y.shape[0], -1),
        "w_star": np.atleast_2d(task.w_star),
    }
    if task.test_x is not None:
        out["test_x"] = _flat(task.test_x)
        out["test_y"] = task.test_y.reshape(task.test_y.shape[0], -1)
    return out


def task_from_tensors(t: dict[str, np.ndarray]) -> SynthTask:
    meta = _need(t, "meta.task")
    if meta.shape != (1, 6):
        raise ContainerFormatError("meta.task must be 1x6", 0)
    K, d = int(meta[0, 0]), int(meta[0, 1])
    seed = int(meta[0, 4]) | (int(meta[0, 5]) << 32)

    def shape_x(a):
        return a if K == 1 else a.reshape(a.shape[0], K, d)

    def shape_y(a):
        return a[:, 0] if a.shape[1] == 1 else a

    w = _need(t, "w_star")
    test_x = shape_x(t["test_x"]) if "test_x" in t else None
    test_y = shape_y(t["test_y"]) if "test_y" in t else None
    return SynthTask(shape_x(_need(t, "pretrain_raw")), shape_x(_need(t, "downstream_x")),
                     shape_y(_need(t, "downstream_y")), float(meta[0, 2]), float(meta[0, 3]),
                     seed, w[0] if w.shape[0] == 1 else w, test_x, test_y)


def save_task(path, task: SynthTask) -> None:
    save_weights(path, task_to_tensors(task))


def load_task(path) -> SynthTask:
    return task_from_tensors(load_weights(path))
