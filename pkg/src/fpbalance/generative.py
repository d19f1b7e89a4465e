"""Convolutional VAE and conditional VAE over recurrence plots.

Layer stacks (channels last, for 30 x 30 plots)::

    VAE encoder   (30,30,1) conv8/4/2 -> (15,15,8) conv16/4/2 -> (8,8,16)
                  conv16/4/1 -> (8,8,16) flatten 1024 dense8 -> mu(2), log_var(2)
    VAE decoder   z(2) dense1024 -> (8,8,16) deconv16/4/2 -> (15,15,16)
                  deconv8/4/2 -> (30,30,8) deconv1/3/1 sigmoid -> (30,30,1)
    CVAE encoder  label(6) dense900 -> (30,30,1) ++ plot -> (30,30,2)
                  conv16/4/2 -> (15,15,16) conv32/4/2 -> (8,8,32) flatten 2048
                  dense16 -> mu(2), log_var(2)
    CVAE decoder  [z, label](8) dense2048 -> (8,8,32) deconv32/4/2 -> (15,15,32)
                  deconv16/4/2 -> (30,30,16) deconv1/4/1 sigmoid -> (30,30,1)

Padding (convolutions) and cropping (transposed convolutions) are chosen per
layer so each realized output equals the declared one; the extra pixel of an
odd total goes to the bottom/right.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .base import BaseOversampler
from .dataset import RecurrencePlot
from .errors import NonFiniteLoss, ShapeMismatch
from .serialization import load_container, save_container

BCE_EPS = 1e-7


@dataclass
class LayerSpec:
    name: str
    kind: str  # input | conv | deconv | dense | flatten | reshape | concat
    output_shape: tuple
    filters: int | None = None
    kernel: int | None = None
    stride: int = 1
    activation: str = "linear"

    def __post_init__(self):
        self.output_shape = tuple(self.output_shape)


@dataclass
class TrainConfig:
    """Optimiser settings; ``batch_size=None`` means 23 for a VAE, 64 for a CVAE."""

    learning_rate: float = 1e-4
    batch_size: int | None = None
    epochs: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    seed: int = 0
    dtype: str = "float32"


def _half(n: int) -> int:
    return int(math.ceil(n / 2))


def vae_layers(p: int = 30, latent_dim: int = 2) -> dict[str, list[LayerSpec]]:
    s1, s2 = _half(p), _half(_half(p))
    return {
        "encoder": [
            LayerSpec("enc_input", "input", (p, p, 1)),
            LayerSpec("enc_conv1", "conv", (s1, s1, 8), 8, 4, 2, "relu"),
            LayerSpec("enc_conv2", "conv", (s2, s2, 16), 16, 4, 2, "relu"),
            # a stride of 2 cannot keep the declared (8, 8) output; stride 1 does
            LayerSpec("enc_conv3", "conv", (s2, s2, 16), 16, 4, 1, "relu"),
            LayerSpec("enc_flatten", "flatten", (16 * s2 * s2,)),
            LayerSpec("enc_dense", "dense", (8,), 8, activation="relu"),
        ],
        "heads": [
            LayerSpec("z_mean", "dense", (latent_dim,), latent_dim),
            LayerSpec("z_log_var", "dense", (latent_dim,), latent_dim),
        ],
        "decoder": [
            LayerSpec("dec_input", "input", (latent_dim,)),
            LayerSpec("dec_dense", "dense", (16 * s2 * s2,), 16 * s2 * s2, activation="relu"),
            LayerSpec("dec_reshape", "reshape", (s2, s2, 16)),
            LayerSpec("dec_deconv1", "deconv", (s1, s1, 16), 16, 4, 2, "relu"),
            LayerSpec("dec_deconv2", "deconv", (p, p, 8), 8, 4, 2, "relu"),
            LayerSpec("dec_output", "deconv", (p, p, 1), 1, 3, 1, "sigmoid"),
        ],
    }


def cvae_layers(p: int = 30, latent_dim: int = 2, label_dim: int = 6) -> dict[str, list[LayerSpec]]:
    s1, s2 = _half(p), _half(_half(p))
    return {
        "label_branch": [
            LayerSpec("enc_label_input", "input", (label_dim,)),
            LayerSpec("enc_label_dense", "dense", (p * p,), p * p),
            LayerSpec("enc_label_reshape", "reshape", (p, p, 1)),
        ],
        "encoder": [
            LayerSpec("enc_concat", "concat", (p, p, 2)),
            LayerSpec("enc_conv1", "conv", (s1, s1, 16), 16, 4, 2, "relu"),
            LayerSpec("enc_conv2", "conv", (s2, s2, 32), 32, 4, 2, "relu"),
            LayerSpec("enc_flatten", "flatten", (32 * s2 * s2,)),
            LayerSpec("enc_dense", "dense", (16,), 16, activation="relu"),
        ],
        "heads": [
            LayerSpec("z_mean", "dense", (latent_dim,), latent_dim),
            LayerSpec("z_log_var", "dense", (latent_dim,), latent_dim),
        ],
        "decoder": [
            LayerSpec("dec_concat", "concat", (latent_dim + label_dim,)),
            LayerSpec("dec_dense", "dense", (32 * s2 * s2,), 32 * s2 * s2, activation="relu"),
            LayerSpec("dec_reshape", "reshape", (s2, s2, 32)),
            LayerSpec("dec_deconv1", "deconv", (s1, s1, 32), 32, 4, 2, "relu"),
            LayerSpec("dec_deconv2", "deconv", (p, p, 16), 16, 4, 2, "relu"),
            LayerSpec("dec_output", "deconv", (p, p, 1), 1, 4, 1, "sigmoid"),
        ],
    }


def conv_padding(in_size: int, out_size: int, k: int, s: int) -> tuple[int, int]:
    total = max((out_size - 1) * s + k - in_size, 0)
    if (in_size + total - k) // s + 1 != out_size:
        raise ShapeMismatch(f"conv k={k} s={s} cannot map {in_size} to {out_size}")
    return total // 2, total - total // 2


def deconv_crop(in_size: int, out_size: int, k: int, s: int) -> tuple[int, int]:
    crop = (in_size - 1) * s + k - out_size
    if crop < 0:
        raise ShapeMismatch(f"deconv k={k} s={s} cannot reach {out_size} from {in_size}")
    return crop // 2, crop - crop // 2


def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ConvVAE:
    """Parameters and forward passes of a (conditional) convolutional VAE.

    ``label_dim = 0`` gives the unconditional model. Parameters live in
    ``self.params`` keyed ``"<layer>/kernel"`` and ``"<layer>/bias"``.
    """

    def __init__(self, plot_size: int = 30, latent_dim: int = 2, label_dim: int = 0, dtype="float64"):
        self.dtype = np.dtype(dtype)
        self.plot_size = plot_size
        self.latent_dim = latent_dim
        self.label_dim = label_dim
        self.layers = (cvae_layers(plot_size, latent_dim, label_dim) if self.conditional
                       else vae_layers(plot_size, latent_dim))
        self.history: list[dict] = []
        self.config: TrainConfig | None = None
        self._geometry = {}
        self._shapes = {}
        self._plan()
        self.params = {k: np.zeros(v, dtype=self.dtype) for k, v in self._shapes.items()}
        self._check_shapes()

    @property
    def conditional(self) -> bool:
        return self.label_dim > 0

    # -- construction ------------------------------------------------------ #

    def _plan(self):
        p = self.plot_size
        inputs = {
            "label_branch": (self.label_dim,),
            "encoder": (p, p, 2) if self.conditional else (p, p, 1),
            "heads": None,
            "decoder": (self.latent_dim + self.label_dim,),
        }
        for group, specs in self.layers.items():
            shape = inputs[group]
            if group == "heads":
                shape = self.layers["encoder"][-1].output_shape
            for spec in specs:
                if spec.kind == "dense":
                    self._shapes[f"{spec.name}/kernel"] = (shape[0], spec.filters)
                    self._shapes[f"{spec.name}/bias"] = (spec.filters,)
                elif spec.kind == "conv":
                    k, s = spec.kernel, spec.stride
                    self._shapes[f"{spec.name}/kernel"] = (k, k, shape[-1], spec.filters)
                    self._shapes[f"{spec.name}/bias"] = (spec.filters,)
                    self._geometry[spec.name] = (conv_padding(shape[0], spec.output_shape[0], k, s)
                                                 + conv_padding(shape[1], spec.output_shape[1], k, s))
                elif spec.kind == "deconv":
                    k, s = spec.kernel, spec.stride
                    self._shapes[f"{spec.name}/kernel"] = (k, k, spec.filters, shape[-1])
                    self._shapes[f"{spec.name}/bias"] = (spec.filters,)
                    self._geometry[spec.name] = (deconv_crop(shape[0], spec.output_shape[0], k, s)
                                                 + deconv_crop(shape[1], spec.output_shape[1], k, s))
                if group != "heads":
                    shape = spec.output_shape

    def _check_shapes(self):
        """Dry-run a one-sample batch and compare every realized layer shape."""
        realized = {}
        x = np.zeros((1, self.plot_size, self.plot_size))
        y = np.zeros((1, self.label_dim)) if self.conditional else None
        mu, lv = self._encode(x, y, realized)
        self._decode(mu, y, realized)
        for specs in self.layers.values():
            for spec in specs:
                got = realized.get(spec.name)
                if got is not None and got != spec.output_shape:
                    raise ShapeMismatch(f"{spec.name}: realized {got}, declared {spec.output_shape}")

    def init_params(self, rng: np.random.Generator) -> None:
        for key, shape in self._shapes.items():
            if key.endswith("/bias"):
                self.params[key] = np.zeros(shape)
            elif len(shape) == 2:
                self.params[key] = _glorot(rng, shape, shape[0], shape[1])
            else:
                rf = shape[0] * shape[1]
                self.params[key] = _glorot(rng, shape, shape[2] * rf, shape[3] * rf)
        self.params = {k: v.astype(self.dtype) for k, v in self.params.items()}

    # -- forward ----------------------------------------------------------- #

    def _run(self, specs, h, P, realized=None):
        for spec in specs:
            n = h.shape[0]
            if spec.kind in ("input", "concat"):
                pass
            elif spec.kind == "flatten":
                h = ad.reshape(h, (n, -1))
            elif spec.kind == "reshape":
                h = ad.reshape(h, (n,) + spec.output_shape)
            elif spec.kind == "dense":
                h = ad.dense(h, P[f"{spec.name}/kernel"], P[f"{spec.name}/bias"])
            elif spec.kind == "conv":
                h = ad.conv2d(h, P[f"{spec.name}/kernel"], P[f"{spec.name}/bias"], spec.stride, self._geometry[spec.name])
            elif spec.kind == "deconv":
                h = ad.conv_transpose2d(h, P[f"{spec.name}/kernel"], P[f"{spec.name}/bias"], spec.stride,
                                        self._geometry[spec.name])
            else:
                raise ValueError(f"unknown layer kind {spec.kind!r}")
            h = ad.ACTIVATIONS[spec.activation](h)
            if realized is not None:
                realized[spec.name] = tuple(h.shape[1:])
        return h

    def _tensors(self, P):
        return P if P is not None else {k: ad.Tensor(v) for k, v in self.params.items()}

    def _check_label(self, labels, n):
        if self.conditional:
            if labels is None:
                raise ShapeMismatch("a conditional model needs one-hot labels")
            labels = np.asarray(labels.value if isinstance(labels, ad.Tensor) else labels, dtype=self.dtype)
            if labels.shape != (n, self.label_dim):
                raise ShapeMismatch(f"labels must have shape {(n, self.label_dim)}, got {labels.shape}")
            return labels
        if labels is not None:
            raise ShapeMismatch("an unconditional model takes no labels")
        return None

    def _encode(self, x, labels=None, realized=None, P=None):
        P = self._tensors(P)
        if not isinstance(x, ad.Tensor):
            x = np.asarray(x, dtype=self.dtype)
        xv = x.value if isinstance(x, ad.Tensor) else x
        p = self.plot_size
        if xv.shape[1:] not in ((p, p), (p, p, 1)):
            raise ShapeMismatch(f"plots must be {p}x{p}, got {xv.shape[1:]}")
        n = xv.shape[0]
        labels = self._check_label(labels, n)
        h = ad.reshape(ad.as_tensor(x), (n, p, p, 1))
        if self.conditional:
            e = self._run(self.layers["label_branch"], ad.Tensor(labels), P, realized)
            h = ad.concat([h, e], axis=-1)
            if realized is not None:
                realized["enc_concat"] = tuple(h.shape[1:])
        h = self._run(self.layers["encoder"], h, P, realized)
        mu_spec, lv_spec = self.layers["heads"]
        mu = self._run([mu_spec], h, P, realized)
        log_var = self._run([lv_spec], h, P, realized)
        return mu, log_var

    def _decode(self, z, labels=None, realized=None, P=None):
        P = self._tensors(P)
        z = z if isinstance(z, ad.Tensor) else ad.Tensor(np.asarray(z, dtype=self.dtype))
        if z.shape[1:] != (self.latent_dim,):
            raise ShapeMismatch(f"latent codes must have shape (N, {self.latent_dim})")
        labels = self._check_label(labels, z.shape[0])
        if self.conditional:
            z = ad.concat([z, ad.Tensor(labels)], axis=1)
            if realized is not None:
                realized["dec_concat"] = tuple(z.shape[1:])
        out = self._run(self.layers["decoder"], z, P, realized)
        return ad.reshape(out, (z.shape[0], self.plot_size, self.plot_size))

    def encode(self, plots, labels=None) -> tuple[np.ndarray, np.ndarray]:
        mu, lv = self._encode(np.asarray(plots, dtype=self.dtype), labels)
        return mu.value, lv.value

    def decode(self, z, labels=None) -> np.ndarray:
        return self._decode(np.asarray(z, dtype=self.dtype), labels).value

    def sample(self, count: int, label: int | None = None, seed=0, batch: int = 512) -> np.ndarray:
        """Decode ``count`` draws of ``z ~ N(0, I)``; CVAEs need ``label``."""
        if self.conditional and label is None:
            raise ShapeMismatch("a conditional model needs a target label to sample")
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((count, self.latent_dim))
        out = np.empty((count, self.plot_size, self.plot_size))
        for start in range(0, count, batch):
            zb = z[start : start + batch]
            yb = one_hot(np.full(len(zb), label), self.label_dim) if self.conditional else None
            out[start : start + batch] = self.decode(zb, yb)
        return out

    # -- persistence ------------------------------------------------------- #

    def save(self, path) -> None:
        manifest = {
            "kind": "cvae" if self.conditional else "vae",
            "plot_size": self.plot_size,
            "latent_dim": self.latent_dim,
            "label_dim": self.label_dim,
            "dtype": self.dtype.name,
            "layers": {g: [asdict(s) for s in specs] for g, specs in self.layers.items()},
            "config": asdict(self.config) if self.config else None,
            "history": self.history,
        }
        save_container(path, manifest, self.params)

    @classmethod
    def load(cls, path) -> "ConvVAE":
        manifest, arrays = load_container(path)
        model = cls(manifest["plot_size"], manifest["latent_dim"], manifest["label_dim"],
                    dtype=manifest.get("dtype", "float64"))
        for key in model.params:
            if arrays[key].shape != model.params[key].shape:
                raise ShapeMismatch(f"{key}: stored {arrays[key].shape}, expected {model.params[key].shape}")
            # float32 -> float64 -> float32 is exact
            model.params[key] = arrays[key].astype(model.dtype)
        model.history = manifest.get("history") or []
        model.config = TrainConfig(**manifest["config"]) if manifest.get("config") else None
        return model


def one_hot(labels, label_dim: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), label_dim))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def reparameterize(mu, log_var, eps):
    """``z = mu + exp(log_var / 2) * eps``; works on arrays or tensors."""
    if isinstance(mu, ad.Tensor) or isinstance(log_var, ad.Tensor):
        return ad.add(mu, ad.mul(ad.exp(ad.mul(log_var, 0.5)), eps))
    return np.asarray(mu) + np.exp(0.5 * np.asarray(log_var)) * np.asarray(eps)


def loss_terms(x, x_hat, mu, log_var):
    """Batch-mean summed BCE, batch-mean KL and their sum, as tensors."""
    x = ad.as_tensor(x)
    n = x.shape[0]
    xc = ad.clip(x_hat, BCE_EPS, 1.0 - BCE_EPS)
    ll = x * ad.log(xc) + (1.0 - x) * ad.log(1.0 - xc)
    bce = ad.mul(ad.sum_(ll), -1.0 / n)
    kl_terms = 1.0 + ad.as_tensor(log_var) - ad.square(mu) - ad.exp(log_var)
    kl = ad.mul(ad.sum_(kl_terms), -0.5 / n)
    return bce + kl, bce, kl


def loss(x, x_hat, mu, log_var) -> tuple[float, float, float]:
    """``(total, bce, kl)`` for plots ``x`` and reconstructions ``x_hat``.

    Inputs are batches (leading axis); a single plot/latent is promoted.
    """
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    mu, log_var = np.atleast_2d(mu).astype(np.float64), np.atleast_2d(log_var).astype(np.float64)
    if x.shape != x_hat.shape:
        raise ShapeMismatch(f"x {x.shape} and x_hat {x_hat.shape} differ")
    if x.ndim == 2 and len(mu) == 1:
        x, x_hat = x[None], x_hat[None]
    total, bce, kl = loss_terms(x, x_hat, mu, log_var)
    return float(total.value), float(bce.value), float(kl.value)


def batch_loss(model: ConvVAE, x, labels, eps, P=None):
    """Forward pass plus loss for one mini-batch with fixed noise ``eps``."""
    x = np.asarray(x, dtype=model.dtype)
    mu, lv = model._encode(x, labels, P=P)
    z = reparameterize(mu, lv, np.asarray(eps, dtype=model.dtype))
    x_hat = model._decode(z, labels, P=P)
    return loss_terms(x, x_hat, mu, lv)


def gradients(model: ConvVAE, x, labels, eps) -> tuple[dict[str, np.ndarray], tuple[float, float, float]]:
    P = {k: ad.Tensor(v, requires_grad=True) for k, v in model.params.items()}
    total, bce, kl = batch_loss(model, x, labels, eps, P)
    total.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in P.items()}
    return grads, (float(total.value), float(bce.value), float(kl.value))


def train(samples, labels=None, config: TrainConfig | None = None, label_dim: int = 0,
          latent_dim: int = 2, callback=None) -> ConvVAE:
    """Fit a VAE (``labels is None``) or a CVAE on recurrence plots.

    ``samples`` is ``(N, p, p)`` or flattened ``(N, p*p)``; CVAE ``labels`` are
    integer class ids, one-hot encoded to ``label_dim`` (default: max label + 1).
    """
    X = np.asarray(samples, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("no training samples")
    if X.ndim == 2:
        p = int(round(math.sqrt(X.shape[1])))
        X = X.reshape(len(X), p, p)
    p = X.shape[1]
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        label_dim = label_dim or int(labels.max()) + 1
        Y = one_hot(labels, label_dim)
    else:
        label_dim, Y = 0, None
    cfg = config or TrainConfig()
    batch_size = cfg.batch_size or (64 if Y is not None else 23)

    rng = np.random.default_rng(cfg.seed)
    model = ConvVAE(p, latent_dim, label_dim, dtype=cfg.dtype)
    model.init_params(rng)
    model.config = cfg
    opt = ad.Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        sums = np.zeros(3)
        for start in range(0, len(X), batch_size):
            idx = order[start : start + batch_size]
            eps = rng.standard_normal((len(idx), latent_dim)).astype(cfg.dtype)
            grads, terms = gradients(model, X[idx], None if Y is None else Y[idx], eps)
            if not all(np.isfinite(terms)):
                raise NonFiniteLoss(f"loss became {terms[0]} at epoch {epoch + 1}")
            opt.step(grads)
            sums += np.array(terms) * len(idx)
        total, bce, kl = sums / len(X)
        model.history.append({"epoch": epoch + 1, "loss": total, "bce": bce, "kl": kl})
        if callback is not None:
            callback(model.history[-1])
    return model


def encode(model: ConvVAE, plot, label=None):
    """Posterior ``(mu, log_var)`` for one plot; ``label`` is an int or one-hot."""
    x = np.asarray(plot.r if isinstance(plot, RecurrencePlot) else plot, dtype=np.float64)
    y = None
    if label is not None:
        y = np.atleast_2d(label).astype(np.float64)
        if y.shape[1] == 1 and model.label_dim != 1:
            y = one_hot(y[:, 0], model.label_dim)
    mu, lv = model.encode(x[None], y)
    return mu[0], lv[0]


def decode(model: ConvVAE, z, label=None) -> np.ndarray:
    y = None if label is None else one_hot([int(label)], model.label_dim)
    return model.decode(np.asarray(z, dtype=np.float64)[None], y)[0]


def generate(model: ConvVAE, count: int, label: int | None = None, seed=0) -> list[RecurrencePlot]:
    if count <= 0:
        return []
    plots = model.sample(count, label, seed)
    tag = -1 if label is None else int(label)
    return [RecurrencePlot(r, tag) for r in plots]


def _int_seed(seed_seq: np.random.SeedSequence) -> int:
    return int(seed_seq.generate_state(1)[0])


class VAEOversampler(BaseOversampler):
    """Balance classes with one VAE per under-represented class.

    Parameters
    ----------
    epochs : int, default=500
    learning_rate : float, default=1e-4
    batch_size : int, default=23
    latent_dim : int, default=2
    sampling_strategy : "auto" or dict, default="auto"
    random_state : int, default=0

    Attributes
    ----------
    models_ : dict
        Trained :class:`ConvVAE` per oversampled label.
    """

    def __init__(self, epochs=500, learning_rate=1e-4, batch_size=23, latent_dim=2,
                 sampling_strategy="auto", random_state=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.latent_dim = latent_dim
        self.sampling_strategy = sampling_strategy
        self.random_state = random_state

    def _prepare(self, X, y):
        self.models_ = {}

    def _generate(self, X, y, label, n_new, seed_seq):
        train_ss, sample_ss = seed_seq.spawn(2)
        cfg = TrainConfig(self.learning_rate, self.batch_size, self.epochs, seed=_int_seed(train_ss))
        model = train(X[y == label], config=cfg, latent_dim=self.latent_dim)
        self.models_[label] = model
        return model.sample(n_new, seed=sample_ss).reshape(n_new, -1)


class CVAEOversampler(BaseOversampler):
    """Balance classes with a single conditional VAE trained on every class.

    Parameters are those of :class:`VAEOversampler` with ``batch_size``
    defaulting to 64, plus ``n_classes`` (one-hot width; ``None`` infers
    ``max(y) + 1``).
    """

    def __init__(self, epochs=500, learning_rate=1e-4, batch_size=64, latent_dim=2, n_classes=None,
                 sampling_strategy="auto", random_state=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.latent_dim = latent_dim
        self.n_classes = n_classes
        self.sampling_strategy = sampling_strategy
        self.random_state = random_state

    def _prepare(self, X, y):
        ss = np.random.SeedSequence([int(self.random_state), 2**31 - 1])
        cfg = TrainConfig(self.learning_rate, self.batch_size, self.epochs, seed=_int_seed(ss))
        self.model_ = train(X, y, cfg, label_dim=self.n_classes or int(y.max()) + 1, latent_dim=self.latent_dim)

    def _generate(self, X, y, label, n_new, seed_seq):
        return self.model_.sample(n_new, label=label, seed=seed_seq).reshape(n_new, -1)
