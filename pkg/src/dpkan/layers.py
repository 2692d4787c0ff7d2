"""Trainable layers, losses and per-sample backpropagation.

Every layer exposes the same small surface:

* ``params()`` -- list of parameter arrays, in flattening order
* ``forward(x)`` -- ``(y, cache)`` for a batch ``x`` of shape (B, n_in)
* ``backward(cache, dy)`` -- ``(dx, grads)`` where ``grads`` has shape
  (B, n_params): one gradient row per example, never reduced over the batch

A :class:`Model` chains layers and flattens their parameters into a single
vector in layer order, then in ``params()`` order, each array raveled in C
order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from dpkan.basis import (
    BSplineGrid,
    RswafGrid,
    bspline_basis,
    bspline_basis_derivative,
    rswaf_basis,
    rswaf_basis_derivative,
    silu,
    silu_derivative,
)
from dpkan.numerics import Rng, ShapeError, gaussian_sample

LAYER_NORM_EPS = 1e-5


def _default_gen(gen):
    return Rng(0).stream("init") if gen is None else gen


class _Layer:
    kind = ""

    def params(self) -> list[np.ndarray]:
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"{self.kind} layer expects (B, {self.n_in}) input, got {x.shape}")
        return x


class LinearLayer(_Layer):
    """Affine map with optional ReLU, the MLP / linear-regression building block."""

    kind = "linear"

    def __init__(self, n_in, n_out, activation="none", bias=True, gen=None):
        if activation not in ("none", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.activation = activation
        self.has_bias = bool(bias)
        gen = _default_gen(gen)
        self.weights = gaussian_sample(gen, self.n_out * self.n_in, 1.0 / np.sqrt(self.n_in)).reshape(
            self.n_out, self.n_in
        )
        self.bias = np.zeros(self.n_out) if self.has_bias else None

    def params(self):
        return [self.weights, self.bias] if self.has_bias else [self.weights]

    def forward(self, x):
        x = self._check_input(x)
        z = x @ self.weights.T
        if self.has_bias:
            z = z + self.bias
        y = np.maximum(z, 0.0) if self.activation == "relu" else z
        return y, (x, z)

    def backward(self, cache, dy):
        x, z = cache
        dz = dy * (z > 0) if self.activation == "relu" else dy
        b = x.shape[0]
        grads = np.empty((b, self.n_params))
        nw = self.weights.size
        grads[:, :nw] = (dz[:, :, None] * x[:, None, :]).reshape(b, nw)
        if self.has_bias:
            grads[:, nw:] = dz
        return dz @ self.weights, grads


class KanLayer(_Layer):
    """KAN layer: output j is the sum over inputs i of
    ``w_b[j,i] * silu(x_i) + w_s[j,i] * sum_c coeffs[j,i,c] B_c(x_i)``.
    """

    kind = "kan"

    def __init__(self, n_in, n_out, grid: BSplineGrid | None = None, gen=None):
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.grid = grid if grid is not None else BSplineGrid(degree=2, grid_size=2)
        gen = _default_gen(gen)
        nb = self.grid.n_basis
        self.coeffs = gaussian_sample(gen, self.n_out * self.n_in * nb, 0.1).reshape(self.n_out, self.n_in, nb)
        self.w_b = np.ones((self.n_out, self.n_in))
        self.w_s = np.ones((self.n_out, self.n_in))

    def params(self):
        return [self.coeffs, self.w_b, self.w_s]

    def forward(self, x):
        x = self._check_input(x)
        basis = bspline_basis(x, self.grid)  # (B, i, c)
        spl = np.einsum("bic,oic->boi", basis, self.coeffs)
        sx = silu(x)
        y = sx @ self.w_b.T + np.einsum("boi,oi->bo", spl, self.w_s)
        return y, (x, basis, spl, sx)

    def backward(self, cache, dy):
        x, basis, spl, sx = cache
        b = x.shape[0]
        grads = np.empty((b, self.n_params))
        nc, nw = self.coeffs.size, self.w_b.size
        grads[:, :nc] = np.einsum("bo,oi,bic->boic", dy, self.w_s, basis).reshape(b, nc)
        grads[:, nc : nc + nw] = (dy[:, :, None] * sx[:, None, :]).reshape(b, nw)
        grads[:, nc + nw :] = (dy[:, :, None] * spl).reshape(b, nw)
        dspl = np.einsum("oic,bic->boi", self.coeffs, bspline_basis_derivative(x, self.grid))
        dx = (dy @ self.w_b) * silu_derivative(x) + np.einsum("bo,oi,boi->bi", dy, self.w_s, dspl)
        return dx, grads


class FasterKanLayer(_Layer):
    """FasterKAN layer: optional LayerNorm, RSWAF expansion of every input,
    then a linear map over the ``n_in * num_grids`` basis features.

    With ``layer_norm=True, bias=False`` (the defaults) the parameter count
    is ``2 * n_in + n_in * num_grids * n_out``.
    """

    kind = "fasterkan"

    def __init__(self, n_in, n_out, grid: RswafGrid | None = None, layer_norm=True, bias=False, gen=None):
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.grid = grid if grid is not None else RswafGrid()
        self.layer_norm = bool(layer_norm)
        self.has_bias = bool(bias)
        gen = _default_gen(gen)
        n_feat = self.n_in * self.grid.n_basis
        self.weights = gaussian_sample(gen, self.n_out * n_feat, 1.0 / np.sqrt(n_feat)).reshape(self.n_out, n_feat)
        self.ln_gamma = np.ones(self.n_in) if self.layer_norm else None
        self.ln_beta = np.zeros(self.n_in) if self.layer_norm else None
        self.bias = np.zeros(self.n_out) if self.has_bias else None

    def params(self):
        out = []
        if self.layer_norm:
            out += [self.ln_gamma, self.ln_beta]
        out.append(self.weights)
        if self.has_bias:
            out.append(self.bias)
        return out

    def forward(self, x):
        x = self._check_input(x)
        if self.layer_norm:
            mu = x.mean(axis=1, keepdims=True)
            inv_std = 1.0 / np.sqrt(x.var(axis=1, keepdims=True) + LAYER_NORM_EPS)
            xhat = (x - mu) * inv_std
            z = xhat * self.ln_gamma + self.ln_beta
        else:
            xhat = inv_std = None
            z = x
        feats = rswaf_basis(z, self.grid).reshape(x.shape[0], -1)
        y = feats @ self.weights.T
        if self.has_bias:
            y = y + self.bias
        return y, (z, xhat, inv_std, feats)

    def backward(self, cache, dy):
        z, xhat, inv_std, feats = cache
        b = z.shape[0]
        grads = np.empty((b, self.n_params))
        off = 2 * self.n_in if self.layer_norm else 0
        nw = self.weights.size
        grads[:, off : off + nw] = (dy[:, :, None] * feats[:, None, :]).reshape(b, nw)
        if self.has_bias:
            grads[:, off + nw :] = dy
        dfeat = (dy @ self.weights).reshape(b, self.n_in, self.grid.n_basis)
        dz = np.sum(dfeat * rswaf_basis_derivative(z, self.grid), axis=2)
        if not self.layer_norm:
            return dz, grads
        grads[:, : self.n_in] = dz * xhat
        grads[:, self.n_in : 2 * self.n_in] = dz
        dxhat = dz * self.ln_gamma
        dx = inv_std * (
            dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * np.mean(dxhat * xhat, axis=1, keepdims=True)
        )
        return dx, grads


LAYER_KINDS = {cls.kind: cls for cls in (LinearLayer, KanLayer, FasterKanLayer)}


class Model:
    """Ordered stack of layers with a flat parameter view.

    ``feature_mean`` / ``feature_std`` optionally record the input
    standardization used during training so a saved model can be evaluated
    on raw features (see :meth:`predict`).
    """

    def __init__(self, layers, feature_mean=None, feature_std=None):
        self.layers = list(layers)
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer output {a.n_out} does not match next layer input {b.n_in}")
        self.feature_mean = None if feature_mean is None else np.asarray(feature_mean, dtype=np.float64)
        self.feature_std = None if feature_std is None else np.asarray(feature_std, dtype=np.float64)

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    @property
    def parameter_count(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for layer in self.layers for p in layer.params()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.parameter_count,):
            raise ShapeError(f"expected {self.parameter_count} parameters, got shape {flat.shape}")
        i = 0
        for layer in self.layers:
            for p in layer.params():
                p[...] = flat[i : i + p.size].reshape(p.shape)
                i += p.size

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def predict(self, raw_x):
        """Forward pass on unstandardized features."""
        x = np.asarray(raw_x, dtype=np.float64)
        if self.feature_mean is not None:
            x = (x - self.feature_mean) / self.feature_std
        return self.forward(x)[0]


def forward(model: Model, batch_x):
    return model.forward(batch_x)


def count_parameters(model) -> int:
    if isinstance(model, Model):
        return model.parameter_count
    return model.n_params


def build_model(kind, widths, *, gen=None, kan_grid=None, rswaf_grid=None, mlp_activation="relu",
                fk_layer_norm=True, fk_bias=False) -> Model:
    """Stack layers of one kind over consecutive ``widths``.

    ``kind="mlp"`` puts ``mlp_activation`` on every hidden layer and none on
    the output; ``kind="linear"`` is an MLP without hidden layers.
    """
    gen = _default_gen(gen)
    pairs = list(zip(widths, widths[1:]))
    if not pairs:
        raise ValueError("widths needs at least an input and an output size")
    layers = []
    for n, (a, b) in enumerate(pairs):
        last = n == len(pairs) - 1
        if kind in ("mlp", "linear"):
            layers.append(LinearLayer(a, b, activation="none" if last else mlp_activation, gen=gen))
        elif kind == "kan":
            layers.append(KanLayer(a, b, grid=kan_grid, gen=gen))
        elif kind == "fasterkan":
            layers.append(FasterKanLayer(a, b, grid=rswaf_grid, layer_norm=fk_layer_norm, bias=fk_bias, gen=gen))
        else:
            raise ValueError(f"unknown model kind {kind!r}")
    return Model(layers)


# -- losses ---------------------------------------------------------------


def _as_targets(pred, target):
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 1:
        target = target[:, None]
    if target.shape != pred.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    return target


def _check_labels(logits, labels):
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"labels must lie in [0, {logits.shape[1]})")
    return labels.astype(np.intp)


def per_example_loss(pred, target, loss: str):
    """Unreduced losses ``l_i`` and their gradients ``d l_i / d pred_i``."""
    pred = np.asarray(pred, dtype=np.float64)
    if loss == "mse":
        r = pred - _as_targets(pred, target)
        return np.mean(r**2, axis=1), 2.0 * r / pred.shape[1]
    if loss == "cross_entropy":
        labels = _check_labels(pred, target)
        rows = np.arange(pred.shape[0])
        losses = -log_softmax(pred, axis=1)[rows, labels]
        grad = softmax(pred, axis=1)
        grad[rows, labels] -= 1.0
        return losses, grad
    raise ValueError(f"unknown loss {loss!r}")


def mse_loss(pred, target):
    """Mean squared error over batch and outputs, with its gradient."""
    losses, grad = per_example_loss(pred, target, "mse")
    return float(losses.mean()), grad / len(losses)


def cross_entropy_loss(logits, labels):
    losses, grad = per_example_loss(logits, labels, "cross_entropy")
    return float(losses.mean()), grad / len(losses)


# -- per-sample gradients -------------------------------------------------


@dataclass
class FlatGradient:
    """Gradient of one example's loss with respect to all model parameters."""

    values: np.ndarray
    sample_index: int = 0


def per_sample_gradient_matrix(model: Model, batch_x, batch_y, loss: str):
    """Return ``(grads, losses)`` with one gradient row per example."""
    batch_x = np.asarray(batch_x, dtype=np.float64)
    if batch_x.ndim != 2 or batch_x.shape[1] != model.n_in:
        raise ShapeError(f"model expects (B, {model.n_in}) input, got {batch_x.shape}")
    if len(batch_y) != batch_x.shape[0]:
        raise ShapeError(f"{batch_x.shape[0]} inputs but {len(batch_y)} targets")
    pred, caches = model.forward(batch_x)
    losses, dy = per_example_loss(pred, batch_y, loss)
    grads = np.empty((batch_x.shape[0], model.parameter_count))
    end = model.parameter_count
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        dy, g = layer.backward(cache, dy)
        grads[:, end - layer.n_params : end] = g
        end -= layer.n_params
    return grads, losses


def per_sample_gradients(model: Model, batch_x, batch_y, loss: str) -> list[FlatGradient]:
    grads, _ = per_sample_gradient_matrix(model, batch_x, batch_y, loss)
    return [FlatGradient(row, i) for i, row in enumerate(grads)]


def batch_gradient(model: Model, batch_x, batch_y, loss: str, max_floats: int = 1 << 23):
    """Gradient of the batch-mean loss and the mean loss.

    Per-example gradients are summed one row at a time in sample order, in
    chunks sized to keep at most ``max_floats`` values alive; the result does
    not depend on the chunk size.
    """
    n = len(batch_x)
    chunk = max(1, max_floats // max(1, model.parameter_count))
    acc = np.zeros(model.parameter_count)
    total = 0.0
    for s in range(0, n, chunk):
        grads, losses = per_sample_gradient_matrix(model, batch_x[s : s + chunk], batch_y[s : s + chunk], loss)
        for row in grads:
            acc += row
        total += float(np.sum(losses))
    return acc / n, total / n

