"""Convolutional-recurrent CTC acoustic model: conv stack -> biRNN stack -> dense -> log-softmax."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..ctc import log_softmax
from . import layers as L


class ConfigurationError(ValueError):
    pass


class StateError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConvLayerSpec:
    filters: int
    kernel: tuple[int, int] = (41, 11)  # (freq, time)
    stride: tuple[int, int] = (2, 2)
    batchnorm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "stride", tuple(int(s) for s in self.stride))
        if self.filters < 1 or min(self.kernel) < 1 or min(self.stride) < 1:
            raise ConfigurationError(f"invalid conv layer {self}")


@dataclass(frozen=True)
class RnnLayerSpec:
    cell: str = "gru"
    width: int = 768
    bidirectional: bool = True
    dropout: float = 0.2

    def __post_init__(self):
        if self.cell not in ("gru", "lstm"):
            raise ConfigurationError(f"cell must be 'gru' or 'lstm', got {self.cell!r}")
        if self.width < 1 or not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"invalid recurrent layer {self}")
        if not self.bidirectional:
            raise ConfigurationError("only bidirectional recurrent layers are supported")


def _default_conv():
    return [ConvLayerSpec(32, (41, 11), (2, 2)), ConvLayerSpec(32, (21, 11), (2, 1))]


def _default_rnn():
    return [RnnLayerSpec("gru", 768) for _ in range(4)]


@dataclass(frozen=True)
class ArchitectureConfig:
    input_bins: int = 161
    conv: list = field(default_factory=_default_conv)
    rnn: list = field(default_factory=_default_rnn)
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "conv", [c if isinstance(c, ConvLayerSpec) else ConvLayerSpec(**c) for c in self.conv])
        object.__setattr__(self, "rnn", [r if isinstance(r, RnnLayerSpec) else RnnLayerSpec(**r) for r in self.rnn])
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.input_bins < 1:
            raise ConfigurationError("input_bins must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        for c in d["conv"]:
            c["kernel"], c["stride"] = list(c["kernel"]), list(c["stride"])
        return d

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def conv_output_shape(shape: tuple[int, int], spec: ConvLayerSpec) -> tuple[int, int]:
    """(F, T) after one 'same'-padded strided conv: ceil(F / sf), ceil(T / st)."""
    F, T = shape
    return -(-F // spec.stride[0]), -(-T // spec.stride[1])


class AcousticNet:
    """Parameters live in ``params`` (ordered, declaration order = checkpoint order)."""

    def __init__(self, arch: ArchitectureConfig, num_classes: int, seed: int = 0):
        self.arch = arch
        self.num_classes = int(num_classes)
        self.seed = int(seed)
        self.dtype = np.dtype(arch.dtype)
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.rng = np.random.default_rng(seed)
        self._cache = None
        self._build()

    # -- construction ---------------------------------------------------------

    def _init(self, shape, k, fan_in=None, fan_out=None):
        rng = np.random.default_rng([self.seed, k])
        return L.xavier_uniform(shape, rng, fan_in, fan_out, dtype=self.dtype)

    def _build(self):
        k = 0
        F, C = self.arch.input_bins, 1
        z = lambda *s: np.zeros(s, dtype=self.dtype)  # noqa: E731
        for i, spec in enumerate(self.arch.conv):
            kf, kt = spec.kernel
            self.params[f"conv{i}.weight"] = self._init((spec.filters, C, kf, kt), k)
            k += 1
            if spec.batchnorm:
                self.params[f"conv{i}.gamma"] = np.ones(spec.filters, dtype=self.dtype)
                self.params[f"conv{i}.beta"] = z(spec.filters)
                self.buffers[f"conv{i}.running_mean"] = z(spec.filters)
                self.buffers[f"conv{i}.running_var"] = np.ones(spec.filters, dtype=self.dtype)
            else:
                self.params[f"conv{i}.bias"] = z(spec.filters)
            F = -(-F // spec.stride[0])
            C = spec.filters
        D = C * F
        self.rnn_input = D
        for i, spec in enumerate(self.arch.rnn):
            H = spec.width
            G = 3 * H if spec.cell == "gru" else 4 * H
            self.params[f"rnn{i}.W"] = np.stack([self._init((D, G), k), self._init((D, G), k + 1)])
            self.params[f"rnn{i}.U"] = np.stack([self._init((H, G), k + 2), self._init((H, G), k + 3)])
            k += 4
            self.params[f"rnn{i}.b"] = z(2, G)
            if spec.cell == "gru":
                self.params[f"rnn{i}.b_hn"] = z(2, H)
            D = 2 * H
        self.params["dense.W"] = self._init((D, self.num_classes), k)
        self.params["dense.b"] = z(self.num_classes)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def output_lengths(self, lengths):
        out = np.asarray(lengths, dtype=np.int64)
        for spec in self.arch.conv:
            out = -(-out // spec.stride[1])
        return out

    # -- forward / backward ---------------------------------------------------

    def forward(self, feats, lengths=None, mode: str = "infer"):
        """Frame log-probabilities for a padded batch.

        feats: (B, T, F) array, a single (T, F) array, or a FeatureMatrix.
        Returns (logprobs (B, T', K), output lengths). Frames past each true
        length are masked to zero inside the network, so the padding value
        does not reach the valid outputs.
        """
        if hasattr(feats, "frames"):
            feats = feats.frames
        x = np.asarray(feats, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.arch.input_bins:
            raise ConfigurationError(f"expected (B, T, {self.arch.input_bins}) features, got shape {x.shape}")
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        B, T, _ = x.shape
        if lengths is None:
            lengths = np.full(B, T, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        train = mode == "train"
        cache = {"conv": [], "rnn": [], "mode": mode}

        h = x[..., None] * self._time_mask(lengths, T)  # (B, T, F, 1)
        cur_len = lengths
        for i, spec in enumerate(self.arch.conv):
            a, conv_saved = L.conv2d_forward(h, self.params[f"conv{i}.weight"], spec.stride)
            cur_len = -(-cur_len // spec.stride[1])
            mask = self._time_mask(cur_len, a.shape[1])
            bn_saved = None
            if spec.batchnorm:
                a, bn_saved = L.batchnorm_forward(
                    a, self.params[f"conv{i}.gamma"], self.params[f"conv{i}.beta"], mode,
                    self.buffers[f"conv{i}.running_mean"], self.buffers[f"conv{i}.running_var"],
                    mask if train else None)
            else:
                a = a + self.params[f"conv{i}.bias"]
            h = L.clipped_relu(a) * mask
            cache["conv"].append((conv_saved, bn_saved, a, mask))

        Bc, Tc, Fc, Cc = h.shape
        seq = h.reshape(Bc, Tc, Fc * Cc)
        cache["conv_shape"] = h.shape
        for i, spec in enumerate(self.arch.rnn):
            p = self._rnn_params(i)
            seq, saved = L.birnn_forward(seq, cur_len, p, spec.cell)
            drop = None
            if train and spec.dropout > 0:
                keep = 1.0 - spec.dropout
                drop = (self.rng.random(seq.shape) < keep).astype(self.dtype) / self.dtype.type(keep)
                seq = seq * drop
            cache["rnn"].append((saved, drop))

        logits = seq @ self.params["dense.W"] + self.params["dense.b"]
        logprobs = log_softmax(logits)
        cache["dense_in"] = seq
        cache["logprobs"] = logprobs
        cache["lengths"] = cur_len
        self._cache = cache if train else None
        return logprobs, cur_len

    def backward(self, grad_logprobs) -> dict[str, np.ndarray]:
        """Gradients of every parameter given dL/d(log-probabilities) of the last train forward."""
        cache = self._cache
        if cache is None:
            raise StateError("backward() requires a preceding forward(mode='train')")
        g = np.asarray(grad_logprobs, dtype=self.dtype)
        lp = cache["logprobs"]
        mask_t = (np.arange(lp.shape[1])[None, :] < cache["lengths"][:, None])[..., None]
        g = g * mask_t
        dz = g - np.exp(lp) * g.sum(axis=-1, keepdims=True)
        grads: dict[str, np.ndarray] = {}
        seq = cache["dense_in"]
        D = seq.shape[-1]
        grads["dense.W"] = seq.reshape(-1, D).T @ dz.reshape(-1, self.num_classes)
        grads["dense.b"] = dz.sum(axis=(0, 1))
        dseq = dz @ self.params["dense.W"].T

        for i in range(len(self.arch.rnn) - 1, -1, -1):
            saved, drop = cache["rnn"][i]
            if drop is not None:
                dseq = dseq * drop
            dseq, g_rnn = L.birnn_backward(dseq, self._rnn_params(i), saved)
            for k, v in g_rnn.items():
                grads[f"rnn{i}.{k}"] = v

        dh = dseq.reshape(cache["conv_shape"])
        for i in range(len(self.arch.conv) - 1, -1, -1):
            spec = self.arch.conv[i]
            conv_saved, bn_saved, a, mask = cache["conv"][i]
            da = dh * mask * L.clipped_relu_grad(a)
            if spec.batchnorm:
                da, grads[f"conv{i}.gamma"], grads[f"conv{i}.beta"] = L.batchnorm_backward(
                    da, self.params[f"conv{i}.gamma"], bn_saved)
            else:
                grads[f"conv{i}.bias"] = da.sum(axis=(0, 1, 2))
            dh, grads[f"conv{i}.weight"] = L.conv2d_backward(
                da, self.params[f"conv{i}.weight"], conv_saved, need_dx=i > 0)
        return {k: grads[k] for k in self.params}

    # -- helpers --------------------------------------------------------------

    def _rnn_params(self, i):
        pre = f"rnn{i}."
        return {k[len(pre):]: v for k, v in self.params.items() if k.startswith(pre)}

    def _time_mask(self, lengths, T):
        return (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(self.dtype)[:, :, None, None]

    def reseed(self, *key):
        """Reset the dropout RNG from a deterministic key (e.g. seed, epoch, step)."""
        self.rng = np.random.default_rng([self.seed, *key])

    def copy(self) -> "AcousticNet":
        other = AcousticNet.__new__(AcousticNet)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        other._cache = None
        return other
