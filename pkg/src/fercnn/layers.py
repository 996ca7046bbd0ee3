"""Differentiable layers with explicit forward caches and hand-derived
backward passes, plus the Model container that composes them.

Conventions fixed here so the tests and training engine agree:
  - convolution is cross-correlation (no kernel flip);
  - ReLU's gradient at exactly 0 is 0;
  - dropout is inverted (train-time scaling), inference is the identity;
  - pool/argmax ties break toward the first element in row-major order;
  - the terminal softmax pairs with a fused cross-entropy, so its backward
    is a pass-through: upstream is already d(loss)/d(logits).

Layouts: images are [batch, channels, H, W]; dense activations [batch, features].
"""

from __future__ import annotations

import numpy as np

from .tensor import DEFAULT_DTYPE, NonFiniteError, Rng, Tensor, ensure_finite


def he_normal_init(rng: Rng, shape, fan_in: int, dtype=DEFAULT_DTYPE) -> Tensor:
    """Draws from Normal(0, sqrt(2/fan_in)^2); the init of choice for ReLU stacks."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return rng.normal(shape, 0.0, float(np.sqrt(2.0 / fan_in)), dtype=dtype)


class LayerCache:
    """Per-layer values captured by forward and consumed exactly once by the
    matching backward (inputs, masks, batch statistics, argmax indices)."""

    __slots__ = ("values",)

    def __init__(self, **values):
        self.values = values

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None


class Layer:
    """Base layer: `params` maps name -> ndarray for trainable tensors."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x: Tensor, mode: str = "infer", rng: Rng | None = None):
        raise NotImplementedError

    def backward(self, cache: LayerCache, upstream: Tensor):
        """Returns (input_grad, {param name: grad})."""
        raise NotImplementedError

    def hyperparams(self) -> dict:
        return {}

    def state(self) -> dict[str, np.ndarray]:
        """All arrays that must survive serialization (params + statistics)."""
        return dict(self.params)

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            self.params[name][...] = arr


def _out_dim(size: int, k: int, pad: int, stride: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    # [n, c, kh, kw, oh, ow] view assembled from kh*kw strided slices
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols


class Conv2D(Layer):
    """2D cross-correlation with per-output-channel bias.

    Output spatial size is floor((H + 2p - kH)/stride) + 1; "same" padding
    uses p = (k-1)//2 per side, which preserves H, W at stride 1 for odd kernels.
    """

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: str = "same", rng: Rng | None = None,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        if stride < 1:
            raise ValueError("stride must be >= 1")
        if padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        self.padding = padding
        k = self.kernel_size
        if rng is not None:
            kernels = he_normal_init(rng, (out_channels, in_channels, k, k),
                                     fan_in=in_channels * k * k, dtype=dtype)
        else:
            kernels = np.zeros((out_channels, in_channels, k, k), dtype=dtype)
        self.params = {"kernels": kernels, "bias": np.zeros(out_channels, dtype=dtype)}

    def hyperparams(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
        }

    def _pad(self) -> int:
        return (self.kernel_size - 1) // 2 if self.padding == "same" else 0

    def forward(self, x, mode="infer", rng=None):
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {c}")
        k, s, p = self.kernel_size, self.stride, self._pad()
        oh, ow = _out_dim(h, k, p, s), _out_dim(w, k, p, s)
        if oh < 1 or ow < 1:
            raise ValueError(f"input {h}x{w} too small for {k}x{k} kernel ({self.padding})")
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = _im2col(xp, k, k, s, oh, ow).reshape(n, c * k * k, oh * ow)
        kmat = self.params["kernels"].reshape(self.out_channels, c * k * k)
        out = np.matmul(kmat, cols)  # [n, out_ch, oh*ow]
        out += self.params["bias"][:, None]
        out = out.reshape(n, self.out_channels, oh, ow)
        ensure_finite(out, "conv2d forward")
        cache = (LayerCache(cols=cols, batch=n, out_hw=(oh, ow), in_hw=(h, w))
                 if mode == "train" else None)
        return out, cache

    def backward(self, cache, upstream):
        oh, ow = cache.out_hw
        h, w = cache.in_hw
        n, c = cache.batch, self.in_channels
        k, s, p = self.kernel_size, self.stride, self._pad()
        if upstream.shape != (n, self.out_channels, oh, ow):
            raise ValueError(f"upstream shape {upstream.shape} does not match "
                             f"forward output {(n, self.out_channels, oh, ow)}")
        dmat = upstream.reshape(n, self.out_channels, oh * ow)
        cols = cache.cols

        dkernels = np.matmul(dmat, cols.transpose(0, 2, 1)).sum(axis=0)
        dkernels = dkernels.reshape(self.params["kernels"].shape)
        dbias = upstream.sum(axis=(0, 2, 3))

        kmat = self.params["kernels"].reshape(self.out_channels, c * k * k)
        dcols = np.matmul(kmat.T, dmat).reshape(n, c, k, k, oh, ow)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=upstream.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += dcols[:, :, i, j]
        dx = dxp[:, :, p : p + h, p : p + w] if p else dxp
        return dx, {"kernels": dkernels, "bias": dbias}


class MaxPool2D(Layer):
    """2x2 max pooling at stride 2. Trailing rows/cols that do not fill a
    window are dropped; the argmax position of each window is cached for the
    backward routing (ties to the first element in row-major order)."""

    kind = "maxpool2d"

    def __init__(self, window: int = 2, stride: int = 2):
        super().__init__()
        if window != 2 or stride != 2:
            raise ValueError("only 2x2 window with stride 2 is supported")
        self.window = 2
        self.stride = 2

    def hyperparams(self):
        return {"window": self.window, "stride": self.stride}

    def forward(self, x, mode="infer", rng=None):
        n, c, h, w = x.shape
        if h < 2 or w < 2:
            raise ValueError(f"input {h}x{w} smaller than 2x2 pooling window")
        oh, ow = h // 2, w // 2
        windows = (
            x[:, :, : 2 * oh, : 2 * ow]
            .reshape(n, c, oh, 2, ow, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, oh, ow, 4)
        )
        idx = windows.argmax(axis=4)
        out = np.take_along_axis(windows, idx[..., None], axis=4)[..., 0]
        cache = LayerCache(idx=idx, in_shape=(n, c, h, w)) if mode == "train" else None
        return out, cache

    def backward(self, cache, upstream):
        n, c, h, w = cache.in_shape
        oh, ow = h // 2, w // 2
        if upstream.shape != (n, c, oh, ow):
            raise ValueError(f"upstream shape {upstream.shape} does not match {(n, c, oh, ow)}")
        dwin = np.zeros((n, c, oh, ow, 4), dtype=upstream.dtype)
        np.put_along_axis(dwin, cache.idx[..., None], upstream[..., None], axis=4)
        dx = np.zeros((n, c, h, w), dtype=upstream.dtype)
        dx[:, :, : 2 * oh, : 2 * ow] = (
            dwin.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)
        )
        return dx, {}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, mode="infer", rng=None):
        mask = x > 0
        out = np.where(mask, x, 0).astype(x.dtype, copy=False)
        cache = LayerCache(mask=mask) if mode == "train" else None
        return out, cache

    def backward(self, cache, upstream):
        if upstream.shape != cache.mask.shape:
            raise ValueError(f"upstream shape {upstream.shape} does not match {cache.mask.shape}")
        return upstream * cache.mask, {}


class BatchNorm(Layer):
    """Batch normalization over the batch (and spatial positions for 4D
    inputs), per channel/feature. Training uses population statistics of the
    current mini-batch and updates the running estimates as
    running <- momentum*running + (1-momentum)*batch; inference normalizes
    with the running estimates. gamma/beta apply after normalization."""

    kind = "batchnorm"

    def __init__(self, channels: int, momentum: float = 0.9, epsilon: float = 1e-5,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must be in (0,1)")
        if epsilon <= 0.0:
            raise ValueError("epsilon must be > 0")
        self.channels = channels
        self.momentum = float(momentum)
        self.epsilon = float(epsilon)
        self.params = {
            "gamma": np.ones(channels, dtype=dtype),
            "beta": np.zeros(channels, dtype=dtype),
        }
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def hyperparams(self):
        return {"channels": self.channels, "momentum": self.momentum, "epsilon": self.epsilon}

    def state(self):
        return dict(self.params, running_mean=self.running_mean, running_var=self.running_var)

    def load_state(self, state):
        super().load_state({k: state[k] for k in ("gamma", "beta")})
        self.running_mean[...] = state["running_mean"]
        self.running_var[...] = state["running_var"]

    def _axes_and_shape(self, x):
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        if x.ndim == 2:
            return (0,), (1, -1)
        raise ValueError(f"batchnorm expects 2D or 4D input, got rank {x.ndim}")

    def forward(self, x, mode="infer", rng=None):
        axes, bshape = self._axes_and_shape(x)
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        gamma = self.params["gamma"].reshape(bshape)
        beta = self.params["beta"].reshape(bshape)
        if mode == "train":
            m = int(np.prod([x.shape[a] for a in axes]))
            if m < 2:
                raise ValueError("batchnorm train mode needs >= 2 elements per channel")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)  # population variance
            inv_std = 1.0 / np.sqrt(var + self.epsilon)
            xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
            out = gamma * xhat + beta
            self.running_mean[...] = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var[...] = self.momentum * self.running_var + (1 - self.momentum) * var
            cache = LayerCache(xhat=xhat, inv_std=inv_std, axes=axes, bshape=bshape, m=m)
            return out, cache
        if (self.running_var < 0).any():
            raise ValueError("negative running variance")
        inv_std = 1.0 / np.sqrt(self.running_var + self.epsilon)
        xhat = (x - self.running_mean.reshape(bshape)) * inv_std.reshape(bshape)
        return gamma * xhat + beta, None

    def backward(self, cache, upstream):
        xhat, inv_std, axes, bshape, m = (
            cache.xhat, cache.inv_std, cache.axes, cache.bshape, cache.m,
        )
        if upstream.shape != xhat.shape:
            raise ValueError(f"upstream shape {upstream.shape} does not match {xhat.shape}")
        dgamma = (upstream * xhat).sum(axis=axes)
        dbeta = upstream.sum(axis=axes)
        dxhat = upstream * self.params["gamma"].reshape(bshape)
        # Full batch-statistics gradient (mean and variance terms included)
        dx = (inv_std.reshape(bshape) / m) * (
            m * dxhat
            - dxhat.sum(axis=axes).reshape(bshape)
            - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
        )
        return dx, {"gamma": dgamma, "beta": dbeta}


class Dropout(Layer):
    """Inverted dropout: each element is zeroed with probability `rate` at
    train time and survivors are scaled by 1/(1-rate); inference is identity."""

    kind = "dropout"

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = float(rate)

    def hyperparams(self):
        return {"rate": self.rate}

    def forward(self, x, mode="infer", rng=None):
        if mode != "train" or self.rate == 0.0:
            cache = LayerCache(mask=None) if mode == "train" else None
            return x, cache
        if rng is None:
            raise ValueError("dropout in train mode requires an rng")
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) >= self.rate).astype(x.dtype) / keep
        cache = LayerCache(mask=mask)
        return x * mask, cache

    def backward(self, cache, upstream):
        if cache.mask is None:
            return upstream, {}
        if upstream.shape != cache.mask.shape:
            raise ValueError(f"upstream shape {upstream.shape} does not match {cache.mask.shape}")
        return upstream * cache.mask, {}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, mode="infer", rng=None):
        cache = LayerCache(in_shape=x.shape) if mode == "train" else None
        return x.reshape(x.shape[0], -1), cache

    def backward(self, cache, upstream):
        return upstream.reshape(cache.in_shape), {}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng: Rng | None = None,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        if rng is not None:
            weights = he_normal_init(rng, (in_features, out_features), fan_in=in_features, dtype=dtype)
        else:
            weights = np.zeros((in_features, out_features), dtype=dtype)
        self.params = {"weights": weights, "bias": np.zeros(out_features, dtype=dtype)}

    def hyperparams(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def forward(self, x, mode="infer", rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"expected input [batch, {self.in_features}], got {x.shape}")
        out = x @ self.params["weights"] + self.params["bias"]
        ensure_finite(out, "dense forward")
        cache = LayerCache(x=x) if mode == "train" else None
        return out, cache

    def backward(self, cache, upstream):
        if upstream.shape != (cache.x.shape[0], self.out_features):
            raise ValueError(f"upstream shape {upstream.shape} does not match "
                             f"{(cache.x.shape[0], self.out_features)}")
        dx = upstream @ self.params["weights"].T
        dw = cache.x.T @ upstream
        db = upstream.sum(axis=0)
        return dx, {"weights": dw, "bias": db}


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction; rows sum to 1 within 1e-6."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Softmax(Layer):
    """Terminal softmax. Backward is a pass-through because the training loss
    is fused over logits: upstream already is d(loss)/d(logits)."""

    kind = "softmax"

    def forward(self, x, mode="infer", rng=None):
        out = softmax(x)
        cache = LayerCache(logits=x) if mode == "train" else None
        return out, cache

    def backward(self, cache, upstream):
        return upstream, {}


_LAYER_KINDS = {
    cls.kind: cls
    for cls in (Conv2D, MaxPool2D, ReLU, BatchNorm, Dropout, Flatten, Dense, Softmax)
}


def layer_from_spec(kind: str, hyperparams: dict) -> Layer:
    if kind not in _LAYER_KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    return _LAYER_KINDS[kind](**hyperparams)


class Model:
    """Ordered layer stack. Forward applies layers in order; train mode
    retains one cache per layer for the reverse chain-rule sweep."""

    def __init__(self, layers: list[Layer], dtype=DEFAULT_DTYPE):
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)

    def forward(self, x: Tensor, mode: str = "infer", rng: Rng | None = None):
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        x = np.ascontiguousarray(x, dtype=self.dtype)
        caches = [] if mode == "train" else None
        for i, layer in enumerate(self.layers):
            drop_rng = rng.stream("dropout", i) if (rng is not None and mode == "train") else rng
            try:
                x, cache = layer.forward(x, mode=mode, rng=drop_rng)
            except ValueError as e:
                raise ValueError(f"layer {i} ({layer.kind}): {e}") from e
            if mode == "train":
                caches.append(cache)
        return x, caches

    def forward_logits(self, x: Tensor) -> Tensor:
        """Infer-mode forward that stops before the terminal softmax, for
        losses computed in log-sum-exp form directly over logits."""
        layers = self.layers[:-1] if isinstance(self.layers[-1], Softmax) else self.layers
        x = np.ascontiguousarray(x, dtype=self.dtype)
        for i, layer in enumerate(layers):
            try:
                x, _ = layer.forward(x, mode="infer")
            except ValueError as e:
                raise ValueError(f"layer {i} ({layer.kind}): {e}") from e
        return x

    def backward(self, caches, dlogits: Tensor):
        """Chain rule in reverse; returns one grads dict per layer (empty for
        stateless layers), aligned with `self.layers`."""
        if caches is None or len(caches) != len(self.layers):
            raise ValueError("backward requires the caches from the matching train-mode forward")
        grads: list[dict] = [None] * len(self.layers)
        upstream = dlogits
        for i in range(len(self.layers) - 1, -1, -1):
            upstream, g = self.layers[i].backward(caches[i], upstream)
            grads[i] = g
        return grads, upstream

    def trainable(self):
        """Yields (key, layer, param name) for every trainable tensor."""
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                yield f"{i}.{name}", layer, name

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.state().items():
                out[f"{i}.{name}"] = arr.copy()
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            own = {name: state[f"{i}.{name}"] for name in layer.state()}
            layer.load_state(own)

    def astype(self, dtype) -> "Model":
        """Copy of the model with parameters cast to `dtype` (for the 64-bit
        verification mode)."""
        clone = Model([layer_from_spec(l.kind, l.hyperparams()) for l in self.layers], dtype=dtype)
        for mine, theirs in zip(clone.layers, self.layers):
            for name in theirs.params:
                mine.params[name] = theirs.params[name].astype(dtype)
            if isinstance(theirs, BatchNorm):
                mine.running_mean = theirs.running_mean.astype(dtype)
                mine.running_var = theirs.running_var.astype(dtype)
        return clone

    def copy(self) -> "Model":
        return self.astype(self.dtype)
