"""Encoder, weight-tied decoder, classifier heads, prior sampling, checkpoints.

Weights are stored out-by-in. The encoder applies x @ W^T and the decoder
applies z @ W on the same arrays, so in the tied configuration one parameter
set serves both directions and gradients from both uses accumulate into it.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .autodiff import (
    BatchNormState,
    Tensor,
    add_row_bias,
    batchnorm_rows,
    constant,
    matmul,
    matmul_with_transposed,
    relu,
)

FORMAT_VERSION = 1

_ACTIVATIONS = ("relu", "none")


class ModelError(ValueError):
    """Invalid model construction, input, or checkpoint file."""


def _as_stream(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def _coerce_batch(x, width, op):
    if not isinstance(x, Tensor):
        x = constant(np.asarray(x, dtype=float))
    if x.data.ndim != 2 or x.data.shape[1] != width:
        raise ModelError(f"{op}: shape mismatch (got {x.data.shape}, want (M, {width}))")
    return x


class DenseLayer:
    """Fully connected layer, He-initialized weights and zero biases."""

    def __init__(self, in_width, out_width, activation, rng):
        if activation not in _ACTIVATIONS:
            raise ModelError(f"unknown activation {activation!r}")
        scale = np.sqrt(2.0 / in_width)
        self.W = Tensor(rng.normal(0.0, scale, (out_width, in_width)), requires_grad=True)
        self.b = Tensor(np.zeros((1, out_width)), requires_grad=True)
        self.activation = activation

    def forward(self, x):
        h = add_row_bias(matmul_with_transposed(x, self.W), self.b)
        if self.activation == "relu":
            h = relu(h)
        return h

    def named_parameters(self, prefix):
        return [(prefix + ".W", self.W), (prefix + ".b", self.b)]


class Encoder:
    """Three relu layers with batchnorm on the output; emits the latent batch."""

    def __init__(self, input_width, widths, rng):
        w1, w2, w3 = widths
        self.fc1 = DenseLayer(input_width, w1, "relu", rng)
        self.fc2 = DenseLayer(w1, w2, "relu", rng)
        # Final relu is applied outside fc3 so the pre-activation tap stays visible.
        self.fc3 = DenseLayer(w2, w3, "none", rng)
        self.gamma = Tensor(np.ones((1, w3)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, w3)), requires_grad=True)
        self.bn = BatchNormState(w3)
        self.input_width = input_width
        self.latent_dim = w3

    def forward(self, x, mode, track=True, return_preact=False):
        h = self.fc2.forward(self.fc1.forward(x))
        pre = self.fc3.forward(h)
        z = batchnorm_rows(relu(pre), self.gamma, self.beta, self.bn, mode, track=track)
        if return_preact:
            return z, pre
        return z

    def named_parameters(self):
        named = self.fc1.named_parameters("encoder.fc1")
        named += self.fc2.named_parameters("encoder.fc2")
        named += self.fc3.named_parameters("encoder.fc3")
        named += [("encoder.bn.gamma", self.gamma), ("encoder.bn.beta", self.beta)]
        return named

    def parameters(self):
        return [p for _, p in self.named_parameters()]


class TiedDecoder:
    """Mirror of the encoder built from the encoder's weight arrays in reverse.

    Stage weights are the encoder Tensors themselves when tied, or independent
    copies (equal at construction) when untied. Biases and the batchnorm are
    always the decoder's own.
    """

    def __init__(self, encoder, final_activation, tied):
        if final_activation not in _ACTIVATIONS:
            raise ModelError(f"unknown decoder activation {final_activation!r}")
        self._encoder_W = [encoder.fc3.W, encoder.fc2.W, encoder.fc1.W]
        if tied:
            self.stage_W = list(self._encoder_W)
        else:
            self.stage_W = [Tensor(w.data.copy(), requires_grad=True) for w in self._encoder_W]
        w2 = encoder.fc3.W.data.shape[1]
        w1 = encoder.fc2.W.data.shape[1]
        self.b1 = Tensor(np.zeros((1, w2)), requires_grad=True)
        self.b2 = Tensor(np.zeros((1, w1)), requires_grad=True)
        self.b3 = Tensor(np.zeros((1, encoder.input_width)), requires_grad=True)
        self.gamma = Tensor(np.ones((1, w2)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, w2)), requires_grad=True)
        self.bn = BatchNormState(w2)
        self.final_activation = final_activation
        self.tied = tied
        self.latent_dim = encoder.latent_dim
        self.output_width = encoder.input_width

    def forward(self, z, mode, track=True):
        h = relu(add_row_bias(matmul(z, self.stage_W[0]), self.b1))
        h = batchnorm_rows(h, self.gamma, self.beta, self.bn, mode, track=track)
        h = relu(add_row_bias(matmul(h, self.stage_W[1]), self.b2))
        x = add_row_bias(matmul(h, self.stage_W[2]), self.b3)
        if self.final_activation == "relu":
            x = relu(x)
        return x

    def tying_gaps(self):
        """Max |decoder stage weight - encoder weight| per stage (0.0 when tied)."""
        return [float(np.max(np.abs(w.data - e.data))) for w, e in zip(self.stage_W, self._encoder_W)]

    def named_parameters(self):
        named = []
        if not self.tied:
            named.append(("decoder.W1", self.stage_W[0]))
        named += [
            ("decoder.b1", self.b1),
            ("decoder.bn.gamma", self.gamma),
            ("decoder.bn.beta", self.beta),
        ]
        if not self.tied:
            named.append(("decoder.W2", self.stage_W[1]))
        named.append(("decoder.b2", self.b2))
        if not self.tied:
            named.append(("decoder.W3", self.stage_W[2]))
        named.append(("decoder.b3", self.b3))
        return named

    def parameters(self):
        return [p for _, p in self.named_parameters()]


class Classifier:
    """Latent batch -> hidden relu layer -> class logits."""

    def __init__(self, latent_dim, hidden, n_classes, rng):
        self.fc1 = DenseLayer(latent_dim, hidden, "relu", rng)
        self.fc2 = DenseLayer(hidden, n_classes, "none", rng)
        self.latent_dim = latent_dim
        self.n_classes = n_classes

    def forward(self, z, return_hidden=False):
        hidden = self.fc1.forward(z)
        logits = self.fc2.forward(hidden)
        if return_hidden:
            return logits, hidden
        return logits

    def named_parameters(self, prefix):
        return self.fc1.named_parameters(prefix + ".fc1") + self.fc2.named_parameters(prefix + ".fc2")


class PriorSampler:
    """Standard-normal latent batches, fresh on every call, from one seed stream."""

    def __init__(self, dim, stream):
        self.dim = dim
        self._rng = np.random.default_rng(stream)

    def sample(self, m):
        if m < 1:
            raise ModelError("sample_prior: batch count must be >= 1")
        return constant(self._rng.standard_normal((int(m), self.dim)))


def config_hash(config):
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


class ModelBundle:
    """One encoder/decoder/classifier set, its prior sampler, and its config."""

    def __init__(self, encoder, decoder, classifier, classifier2, prior, config, seed_label):
        self.encoder = encoder
        self.decoder = decoder
        self.classifier = classifier
        self.classifier2 = classifier2
        self.prior = prior
        self.config = config
        self.seed_label = seed_label

    def encode(self, x, mode="eval", track=True, return_preact=False):
        x = _coerce_batch(x, self.encoder.input_width, "encode")
        return self.encoder.forward(x, mode, track=track, return_preact=return_preact)

    def decode(self, z, mode="eval", track=True):
        z = _coerce_batch(z, self.decoder.latent_dim, "decode")
        return self.decoder.forward(z, mode, track=track)

    def classify(self, z, return_hidden=False):
        z = _coerce_batch(z, self.classifier.latent_dim, "classify")
        return self.classifier.forward(z, return_hidden=return_hidden)

    def classify2(self, z, return_hidden=False):
        if self.classifier2 is None:
            raise ModelError("classify2: this bundle has a single classifier head")
        z = _coerce_batch(z, self.classifier2.latent_dim, "classify")
        return self.classifier2.forward(z, return_hidden=return_hidden)

    def sample_prior(self, m):
        return self.prior.sample(m)

    def tying_gaps(self):
        return self.decoder.tying_gaps()

    def named_parameters(self):
        named = self.encoder.named_parameters() + self.decoder.named_parameters()
        named += self.classifier.named_parameters("classifier")
        if self.classifier2 is not None:
            named += self.classifier2.named_parameters("classifier2")
        return named

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_arrays(self):
        """Everything a checkpoint persists: parameters plus batchnorm statistics."""
        pairs = [(name, p.data) for name, p in self.named_parameters()]
        pairs += [
            ("encoder.bn.running_mean", self.encoder.bn.running_mean),
            ("encoder.bn.running_var", self.encoder.bn.running_var),
            ("decoder.bn.running_mean", self.decoder.bn.running_mean),
            ("decoder.bn.running_var", self.decoder.bn.running_var),
        ]
        return pairs

    def clone(self):
        """Independent evaluation snapshot (the prior stream restarts)."""
        return _deserialize(_serialize(self))


def build_model(
    n_classes,
    seed,
    *,
    input_width=2,
    hidden_widths=(56, 128, 256),
    classifier_hidden=64,
    decoder_final="none",
    tied=True,
    two_classifiers=False,
    seed_label=None,
):
    if n_classes < 2:
        raise ModelError("build_model: need at least 2 classes")
    if len(hidden_widths) != 3 or any(int(w) < 1 for w in hidden_widths):
        raise ModelError("build_model: hidden_widths must be three positive ints")
    if classifier_hidden < 1:
        raise ModelError("build_model: classifier_hidden must be positive")
    stream = _as_stream(seed)
    init_stream, prior_stream = stream.spawn(2)
    rng = np.random.default_rng(init_stream)
    encoder = Encoder(input_width, tuple(int(w) for w in hidden_widths), rng)
    decoder = TiedDecoder(encoder, decoder_final, tied)
    classifier = Classifier(encoder.latent_dim, int(classifier_hidden), int(n_classes), rng)
    classifier2 = None
    if two_classifiers:
        classifier2 = Classifier(encoder.latent_dim, int(classifier_hidden), int(n_classes), rng)
    config = {
        "n_classes": int(n_classes),
        "input_width": int(input_width),
        "hidden_widths": [int(w) for w in hidden_widths],
        "classifier_hidden": int(classifier_hidden),
        "decoder_final": decoder_final,
        "tied": bool(tied),
        "two_classifiers": bool(two_classifiers),
    }
    prior = PriorSampler(encoder.latent_dim, prior_stream)
    return ModelBundle(encoder, decoder, classifier, classifier2, prior, config, seed_label)


def _serialize(bundle):
    arrays = bundle.named_arrays()
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": bundle.config,
        "seed": bundle.seed_label,
        "config_hash": config_hash(bundle.config),
        "layer_shapes": [[name, list(arr.shape)] for name, arr in arrays],
    }
    head = json.dumps(manifest, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in arrays)
    return head + b"\n" + payload


def _deserialize(blob):
    split = blob.find(b"\n")
    if split < 0:
        raise ModelError("corrupt checkpoint: missing manifest line")
    try:
        manifest = json.loads(blob[:split])
        cfg = manifest["config"]
        declared = manifest["layer_shapes"]
        version = manifest["format_version"]
    except (json.JSONDecodeError, KeyError, TypeError, UnicodeDecodeError):
        raise ModelError("corrupt checkpoint: unreadable manifest") from None
    if version != FORMAT_VERSION:
        raise ModelError(f"checkpoint format version mismatch (file has {version!r}, reader is {FORMAT_VERSION})")
    seed_label = manifest.get("seed")
    try:
        bundle = build_model(
            cfg["n_classes"],
            seed_label if seed_label is not None else 0,
            input_width=cfg["input_width"],
            hidden_widths=tuple(cfg["hidden_widths"]),
            classifier_hidden=cfg["classifier_hidden"],
            decoder_final=cfg["decoder_final"],
            tied=cfg["tied"],
            two_classifiers=cfg["two_classifiers"],
            seed_label=seed_label,
        )
    except (KeyError, TypeError):
        raise ModelError("corrupt checkpoint: incomplete config") from None
    arrays = bundle.named_arrays()
    expected = [[name, list(arr.shape)] for name, arr in arrays]
    if declared != expected:
        raise ModelError("checkpoint shape mismatch between manifest and architecture")
    payload = blob[split + 1 :]
    need = sum(arr.size for _, arr in arrays) * 8
    if len(payload) < need:
        raise ModelError("corrupt checkpoint: truncated payload")
    if len(payload) > need:
        raise ModelError("corrupt checkpoint: trailing bytes")
    offset = 0
    for _, arr in arrays:
        step = arr.size * 8
        arr[...] = np.frombuffer(payload[offset : offset + step], dtype="<f8").reshape(arr.shape)
        offset += step
    return bundle


def save_checkpoint(bundle, path):
    with open(path, "wb") as fh:
        fh.write(_serialize(bundle))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return _deserialize(fh.read())
