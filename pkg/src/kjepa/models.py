"""ConvEmbedder encoder, linear/MLP predictors, mirrored decoder, losses, checkpoints."""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, NumericError
from .numerics import (
    ModelParams,
    Tensor,
    conv1d,
    conv_out_len,
    conv_transpose1d,
    flatten,
    linear,
    mse,
    relu,
    reshape,
)

# (in_ch, out_ch, ksize, stride, padding)
CONV_ROWS = ((1, 16, 7, 2, 3), (16, 32, 5, 2, 2), (32, 64, 3, 2, 1), (64, 128, 3, 2, 1))

HEADS = ("two_layer", "single_layer")
PREDICTORS = ("linear", "mlp")
PREDICTOR_INITS = ("identity", "random")
MODES = ("jepa", "ae")


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 32
    head: str = "two_layer"
    predictor: str = "linear"
    predictor_init: str = "identity"
    mode: str = "jepa"
    input_len: int = 768

    def validate(self):
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be positive, got {self.latent_dim}")
        for value, allowed, key in (
            (self.head, HEADS, "head"),
            (self.predictor, PREDICTORS, "predictor"),
            (self.predictor_init, PREDICTOR_INITS, "predictor_init"),
            (self.mode, MODES, "mode"),
        ):
            if value not in allowed:
                raise ConfigError(f"{key}={value!r}; expected one of {allowed}")
        length = self.input_len
        for _, _, k, s, p in CONV_ROWS:
            if length + 2 * p < k:
                raise ConfigError(f"input_len {self.input_len} too short for the conv stack")
            length = conv_out_len(length, k, s, p)

    def canonical(self) -> str:
        return ";".join(f"{k}={v}" for k, v in sorted(asdict(self).items()))

    def digest(self) -> str:
        return hashlib.blake2b(self.canonical().encode(), digest_size=8).hexdigest()

    @classmethod
    def from_canonical(cls, text: str) -> "ModelConfig":
        fields = dict(item.split("=", 1) for item in text.split(";") if item)
        try:
            return cls(
                latent_dim=int(fields["latent_dim"]),
                head=fields["head"],
                predictor=fields["predictor"],
                predictor_init=fields["predictor_init"],
                mode=fields["mode"],
                input_len=int(fields["input_len"]),
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad model config record {text!r}") from exc


def conv_lengths(input_len: int) -> list[int]:
    lengths = [input_len]
    for _, _, k, s, p in CONV_ROWS:
        lengths.append(conv_out_len(lengths[-1], k, s, p))
    return lengths


def flatten_width(input_len: int = 768) -> int:
    return CONV_ROWS[-1][1] * conv_lengths(input_len)[-1]


RELU_GAIN = math.sqrt(2.0)
RANDOM_M_GAIN = 1.0


def _uniform(rng, shape, fan_in, dtype, gain=RELU_GAIN):
    """U(-b, b) with b = gain * sqrt(3 / fan_in): variance gain^2 / fan_in."""
    bound = gain * math.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_params(config: ModelConfig, rng: np.random.Generator | int = 0, dtype=np.float32) -> ModelParams:
    """Fan-in scaled uniform weights (ReLU gain where a ReLU follows), zero biases.

    The linear predictor starts at the identity or uses the same uniform scheme.

    In JEPA mode the map also holds ``ema.encoder.*``, an exact copy of the
    online encoder.
    """
    config.validate()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    k = config.latent_dim
    p = ModelParams()
    for i, (cin, cout, ks, _, _) in enumerate(CONV_ROWS):
        p[f"encoder.conv{i}.weight"] = _uniform(rng, (cout, cin, ks), cin * ks, dtype)
        p[f"encoder.conv{i}.bias"] = _zeros((cout,), dtype)
    flat = flatten_width(config.input_len)
    if config.head == "two_layer":
        p["encoder.head0.weight"] = _uniform(rng, (2 * k, flat), flat, dtype)
        p["encoder.head0.bias"] = _zeros((2 * k,), dtype)
        p["encoder.head1.weight"] = _uniform(rng, (k, 2 * k), 2 * k, dtype, gain=1.0)
        p["encoder.head1.bias"] = _zeros((k,), dtype)
    else:
        p["encoder.head0.weight"] = _uniform(rng, (k, flat), flat, dtype, gain=1.0)
        p["encoder.head0.bias"] = _zeros((k,), dtype)

    if config.mode == "jepa":
        if config.predictor == "linear":
            if config.predictor_init == "identity":
                p["predictor.M"] = Tensor(np.eye(k, dtype=dtype), requires_grad=True)
            else:
                p["predictor.M"] = _uniform(rng, (k, k), k, dtype, gain=RANDOM_M_GAIN)
        else:
            dims = ((k, 2 * k), (2 * k, 2 * k), (2 * k, k))
            for i, (fin, fout) in enumerate(dims):
                gain = RELU_GAIN if i < len(dims) - 1 else 1.0
                p[f"predictor.fc{i}.weight"] = _uniform(rng, (fout, fin), fin, dtype, gain=gain)
                p[f"predictor.fc{i}.bias"] = _zeros((fout,), dtype)
        for name, t in list(p.items()):
            if name.startswith("encoder."):
                p["ema." + name] = Tensor(t.data.copy(), requires_grad=False)
    else:
        p["decoder.fc0.weight"] = _uniform(rng, (2 * k, k), k, dtype)
        p["decoder.fc0.bias"] = _zeros((2 * k,), dtype)
        p["decoder.fc1.weight"] = _uniform(rng, (flat, 2 * k), 2 * k, dtype)
        p["decoder.fc1.bias"] = _zeros((flat,), dtype)
        rows = list(reversed(CONV_ROWS))
        for i, (cin, cout, ks, _, _) in enumerate(rows):
            # transposed conv maps cout -> cin of the mirrored encoder row
            gain = RELU_GAIN if i < len(rows) - 1 else 1.0
            p[f"decoder.deconv{i}.weight"] = _uniform(rng, (cout, cin, ks), cout * ks, dtype, gain=gain)
            p[f"decoder.deconv{i}.bias"] = _zeros((cin,), dtype)
    return p


def infer_head(params: ModelParams, prefix: str = "encoder.") -> str:
    return "two_layer" if prefix + "head1.weight" in params else "single_layer"


def _as_input(x) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x))
    if x.data.ndim == 2:
        x = Tensor(x.data[:, None, :])
    return x


def encode(params: ModelParams, x, prefix: str = "encoder.", input_len: int | None = None) -> Tensor:
    """[B, L] or [B, 1, L] windows -> [B, k] latents."""
    x = _as_input(x)
    if x.data.ndim != 3 or x.shape[1] != 1:
        raise DimensionError(f"encode expects [B, 1, L] input, got {x.shape}")
    if input_len is not None and x.shape[2] != input_len:
        raise DimensionError(f"encode expects windows of length {input_len}, got {x.shape[2]}")
    w0 = params[prefix + "head0.weight"]
    if flatten_width(x.shape[2]) != w0.shape[1]:
        raise DimensionError(f"window length {x.shape[2]} does not match head input width {w0.shape[1]}")
    h = x
    for i, (_, _, _, stride, pad) in enumerate(CONV_ROWS):
        h = relu(conv1d(h, params[f"{prefix}conv{i}.weight"], params[f"{prefix}conv{i}.bias"], stride, pad))
    h = flatten(h)
    h = linear(h, w0, params[prefix + "head0.bias"])
    if prefix + "head1.weight" in params:
        h = linear(relu(h), params[prefix + "head1.weight"], params[prefix + "head1.bias"])
    return h


def predictor_kind(params: ModelParams) -> str:
    if "predictor.M" in params:
        return "linear"
    if "predictor.fc0.weight" in params:
        return "mlp"
    raise ConfigError("parameter map has no predictor")


def predict(params: ModelParams, z: Tensor, kind: str | None = None) -> Tensor:
    kind = kind or predictor_kind(params)
    if kind == "linear":
        m = params["predictor.M"]
        if z.shape[1] != m.shape[1]:
            raise DimensionError(f"predict: latent width {z.shape[1]} vs M {m.shape}")
        return linear(z, m)
    h = relu(linear(z, params["predictor.fc0.weight"], params["predictor.fc0.bias"]))
    h = relu(linear(h, params["predictor.fc1.weight"], params["predictor.fc1.bias"]))
    return linear(h, params["predictor.fc2.weight"], params["predictor.fc2.bias"])


def ema_encode(params: ModelParams, x) -> Tensor:
    """Target-branch latents. Never recorded: EMA tensors do not require grad."""
    z = encode(params, x, prefix="ema.encoder.")
    return Tensor(z.data)


def jepa_loss(params: ModelParams, context, target) -> Tensor:
    """Mean over batch and latent dims of |g(f(context)) - f_ema(target)|^2."""
    if "ema.encoder.head0.weight" not in params:
        raise ConfigError("jepa_loss needs ema.encoder.* parameters")
    pred = predict(params, encode(params, context))
    goal = ema_encode(params, target)
    loss = mse(pred, goal)
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite JEPA loss")
    return loss


def decode(params: ModelParams, z: Tensor) -> Tensor:
    """[B, k] -> [B, 1, L] through the mirrored decoder."""
    h = relu(linear(z, params["decoder.fc0.weight"], params["decoder.fc0.bias"]))
    h = relu(linear(h, params["decoder.fc1.weight"], params["decoder.fc1.bias"]))
    flat = params["decoder.fc1.weight"].shape[0]
    channels = CONV_ROWS[-1][1]
    h = reshape(h, (z.shape[0], channels, flat // channels))
    rows = list(reversed(CONV_ROWS))
    for i, (_, _, ks, stride, pad) in enumerate(rows):
        h = conv_transpose1d(
            h, params[f"decoder.deconv{i}.weight"], params[f"decoder.deconv{i}.bias"], stride, pad, output_padding=stride - 1
        )
        if i < len(rows) - 1:
            h = relu(h)
    return h


def ae_loss(params: ModelParams, context) -> Tensor:
    x = _as_input(context)
    recon = decode(params, encode(params, x))
    if recon.shape != x.shape:
        raise DimensionError(f"decoder output {recon.shape} does not match input {x.shape}")
    return mse(recon, x)


def trainable_names(params: ModelParams) -> list[str]:
    return [n for n in params if not n.startswith("ema.")]


def online_encoder(params: ModelParams) -> ModelParams:
    return params.with_prefix("encoder.")


def ema_encoder(params: ModelParams) -> ModelParams:
    return ModelParams((n[len("ema."):], t) for n, t in params.items() if n.startswith("ema."))


# --- KJC1 checkpoints -------------------------------------------------------

CKPT_MAGIC = b"KJC1"
CKPT_VERSION = 1


def write_checkpoint(path, params: ModelParams, config: ModelConfig):
    """Little-endian KJC1: magic, version, config record, then named float32 tensors.

    The config record is the canonical ``key=value;...`` text (u32 length +
    UTF-8) followed by its 8-byte BLAKE2b digest.
    """
    text = config.canonical().encode()
    out = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), struct.pack("<I", len(text)), text]
    out.append(bytes.fromhex(config.digest()))
    out.append(struct.pack("<I", len(params)))
    for name, t in params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", t.data.ndim))
        out.append(struct.pack(f"<{t.data.ndim}I", *t.shape))
        out.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(out))


def read_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{path}: checkpoint truncated at byte {pos}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(4) != CKPT_MAGIC:
        raise FormatError(f"{path}: not a KJC1 checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (tlen,) = struct.unpack("<I", take(4))
    text = take(tlen).decode()
    digest = take(8).hex()
    config = ModelConfig.from_canonical(text)
    if config.digest() != digest:
        raise FormatError(f"{path}: config digest mismatch")
    (count,) = struct.unpack("<I", take(4))
    params = ModelParams()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
        params[name] = Tensor(data, requires_grad=not name.startswith("ema."))
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return params, config


def composite_grad_check(
    config: ModelConfig | None = None, seed: int = 0, batch: int = 2, max_coords: int = 6, h: float = 1e-5
) -> float:
    """Finite-difference check of the whole JEPA loss in double precision.

    The EMA copy is perturbed away from the online encoder so both branches
    carry distinct values; only the online parameters are checked. Zero
    biases put many pre-activations near the ReLU kink, so coordinates whose
    perturbation flips an activation are skipped.
    """
    from .numerics import grad_check

    config = config or ModelConfig()
    if config.mode != "jepa":
        raise ConfigError("composite_grad_check needs a JEPA config")
    rng = np.random.default_rng(seed)
    params = init_params(config, rng, dtype=np.float64)
    for name in params:
        if name.startswith("ema."):
            params[name].data += 0.01 * rng.standard_normal(params[name].shape)
    ctx = rng.standard_normal((batch, config.input_len))
    tgt = rng.standard_normal((batch, config.input_len))
    online = ModelParams((n, params[n]) for n in trainable_names(params))
    frozen = ModelParams((n, t) for n, t in params.items() if n.startswith("ema."))
    return grad_check(
        lambda q: jepa_loss(ModelParams({**q, **frozen}), ctx, tgt), online, h=h, max_coords=max_coords, rng=rng, skip_kinks=True
    )
