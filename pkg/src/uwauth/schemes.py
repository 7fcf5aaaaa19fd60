"""Sensor encoders, sink fusion network and the four training schemes.

Local training (``AE``, ``LD``, ``CLDAE``) fits each sensor's encoder on its
own data and then fits the sink's fusion network on the frozen encoders'
concatenated outputs. Global training (``GLOBAL``) fits the whole chain as one
network: the N local sub-networks are laid out block-diagonally so they share
no weights, and feed the sink layers directly.

Features arrive as arrays of shape ``(rows, N, K)``. Codes are concatenated in
sensor order ``[y_1, ..., y_N]``; the fusion network is not invariant to
permuting sensors.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, InputShapeError, ParseError
from .nn import (
    Activation,
    LayerSpec,
    MlpNetwork,
    TrainConfig,
    _backprop,
    _forward_all,
    block_diagonal,
    chain,
    fit_parameters,
    forward,
    split_block_diagonal,
    train,
    truncate,
)

AE, LD, CLDAE, GLOBAL = "AE", "LD", "CLDAE", "GLOBAL"
LOCAL_SCHEMES = (AE, LD, CLDAE)
SCHEMES = LOCAL_SCHEMES + (GLOBAL,)

BUNDLE_FORMAT = "uwauth-bundle"
BUNDLE_VERSION = 1

RELU, SIGMOID, LINEAR = Activation.RELU, Activation.SIGMOID, Activation.LINEAR


def derive_seed(seed, *keys) -> int:
    """Independent 63-bit seed for a named sub-task of a seeded job."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            words.extend(key.encode())
        else:
            words.append(int(key))
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0] >> np.uint64(1))


# --------------------------------------------------------------------------
# architectures

def ae_encoder_layers(M):
    return [LayerSpec(4, RELU), LayerSpec(3, RELU), LayerSpec(3, RELU), LayerSpec(M, RELU)]


def decoder_layers(K):
    return [LayerSpec(3, RELU), LayerSpec(3, RELU), LayerSpec(K, LINEAR)]


def ld_layers():
    return [LayerSpec(4, RELU), LayerSpec(3, RELU), LayerSpec(2, RELU), LayerSpec(1, SIGMOID)]


def cldae_f2_layers(M):
    return [LayerSpec(4, RELU), LayerSpec(3, RELU), LayerSpec(M - 1, RELU)]


def fusion_layers(M, N):
    return [LayerSpec(M * N, RELU), LayerSpec(N, RELU), LayerSpec(1, SIGMOID)]


@dataclass
class LocalEncoder:
    """Trained sensor-side network(s) producing the M-wide code."""

    kind: str
    M: int
    nets: dict

    def encode(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == AE:
            return forward(self.nets["encoder"], X)
        if self.kind == LD:
            return forward(self.nets["f1"], X)
        return np.concatenate([forward(self.nets["f1"], X), forward(self.nets["f2"], X)], axis=-1)

    def to_dict(self):
        return {"kind": self.kind, "M": self.M, "nets": {k: v.to_dict() for k, v in self.nets.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], int(d["M"]), {k: MlpNetwork.from_dict(v) for k, v in d["nets"].items()})


def _xy(data, K=None):
    X, y = data
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputShapeError(f"expected single-sensor rows of shape (rows, K), got {X.shape}")
    if K is not None and X.shape[1] != K:
        raise InputShapeError(f"expected {K} features per row, got {X.shape[1]}")
    return X, (None if y is None else np.asarray(y, dtype=float))


def _init(layers, input_dim, seed, *keys):
    return MlpNetwork.initialize(input_dim, layers, np.random.default_rng(derive_seed(seed, *keys)))


# --------------------------------------------------------------------------
# local training

def _targets(X, target_weights):
    return X if target_weights is None else X * np.asarray(target_weights, dtype=float)


def train_ae_local(train_set, val_set, M, cfg: TrainConfig, target_weights=None):
    """Autoencoder: encoder and decoder trained jointly on reconstruction MSE.

    Labels are ignored. ``target_weights`` (one per feature) rescales the
    reconstruction targets, i.e. weights each feature's squared error by
    its square. Returns ``(LocalEncoder, decoder)``.
    """
    X, _ = _xy(train_set)
    Xv, _ = _xy(val_set, X.shape[1])
    K = X.shape[1]
    enc = _init(ae_encoder_layers(M), K, cfg.seed, "ae-encoder")
    dec = _init(decoder_layers(K), M, cfg.seed, "ae-decoder")
    joint, _ = train(chain(enc, dec), (X, _targets(X, target_weights)), (Xv, _targets(Xv, target_weights)), cfg)
    n_enc = len(enc.layers)
    return (LocalEncoder(AE, M, {"encoder": truncate(joint, 0, n_enc)}),
            truncate(joint, n_enc, len(joint.layers)))


def train_ld_local(train_set, val_set, cfg: TrainConfig) -> LocalEncoder:
    """Local decision network fitted to the labels (scalar sigmoid output)."""
    X, y = _xy(train_set)
    Xv, yv = _xy(val_set, X.shape[1])
    net = _init(ld_layers(), X.shape[1], cfg.seed, "ld")
    net, _ = train(net, (X, y), (Xv, yv), cfg)
    return LocalEncoder(LD, 1, {"f1": net})


def _cldae_stage2_net(f2, decoder):
    """Stage-2 training network: input ``[f1(x), x]``, output the reconstruction.

    The precomputed decision output rides along the f2 layers in a dedicated
    unit with a frozen unit weight and zero bias; it is always in (0, 1), so
    ReLU passes it unchanged. Returns the network and its trainable mask.
    """
    K = f2.input_dim
    specs, masks, frozen = [], [], []
    fan_in = K
    for spec in f2.layers:
        width = spec.width + 1
        mask = np.zeros((width, fan_in + 1), dtype=bool)
        mask[0, 0] = True
        mask[1:, 1:] = True
        specs.append(LayerSpec(width, spec.activation))
        masks.append(mask)
        fan_in = spec.width
    net = MlpNetwork(K + 1, specs + list(decoder.layers), masks=masks + [None] * len(decoder.layers))
    trainable = np.ones(net.size)
    tw, tb = net.views(trainable)
    for p, (W, b) in enumerate(zip(f2.weights, f2.biases)):
        net.weights[p][0, 0] = 1.0
        net.weights[p][1:, 1:] = W
        net.biases[p][1:] = b
        tw[p][0, 0] = 0.0
        tb[p][0] = 0.0
    n_f2 = len(f2.layers)
    for q, (W, b) in enumerate(zip(decoder.weights, decoder.biases)):
        net.weights[n_f2 + q][...] = W
        net.biases[n_f2 + q][...] = b
    return net, trainable


def _split_stage2(net, n_f2):
    K = net.input_dim - 1
    specs = [LayerSpec(s.width - 1, s.activation) for s in net.layers[:n_f2]]
    f2 = MlpNetwork(K, specs)
    for p in range(n_f2):
        f2.weights[p][...] = net.weights[p][1:, 1:]
        f2.biases[p][...] = net.biases[p][1:]
    return f2, truncate(net, n_f2, len(net.layers))


def train_cldae_local(train_set, val_set, M, cfg: TrainConfig, freeze_decision=True, ld=None, target_weights=None):
    """Combined local-decision / autoencoder encoder.

    Stage 1 fits ``f1`` exactly as :func:`train_ld_local` (or reuses ``ld``).
    Stage 2 fits ``f2`` (M - 1 outputs) and the decoder on reconstruction MSE
    from the code ``[f1(x), f2(x)]``; with ``freeze_decision`` (the default)
    ``f1`` is left untouched, otherwise it is fine-tuned jointly.
    ``target_weights`` rescales the reconstruction targets as in
    :func:`train_ae_local`. Returns ``(LocalEncoder, decoder)``.
    """
    if M < 2:
        raise ConfigurationError("CLDAE needs M >= 2; with M = 1 it is the LD scheme (use train_ld_local)")
    X, y = _xy(train_set)
    Xv, yv = _xy(val_set, X.shape[1])
    K = X.shape[1]
    if ld is None:
        ld = train_ld_local((X, y), (Xv, yv), cfg)
    f1 = ld.nets["f1"]
    f2 = _init(cldae_f2_layers(M), K, cfg.seed, "cldae-f2")
    dec = _init(decoder_layers(K), M, cfg.seed, "cldae-decoder")
    T, Tv = _targets(X, target_weights), _targets(Xv, target_weights)
    if freeze_decision:
        s, sv = forward(f1, X), forward(f1, Xv)
        net, trainable = _cldae_stage2_net(f2, dec)
        net, _ = train(net, (np.hstack([s, X]), T), (np.hstack([sv, Xv]), Tv), cfg, trainable=trainable)
        f2, dec = _split_stage2(net, len(f2.layers))
    else:
        f1, f2, dec = _train_cldae_joint(f1, f2, dec, X, Xv, T, Tv, cfg)
    return LocalEncoder(CLDAE, M, {"f1": f1, "f2": f2}), dec


def _train_cldae_joint(f1, f2, dec, X, Xv, T, Tv, cfg):
    nets = [f1.copy(), f2.copy(), dec.copy()]
    params = np.concatenate([n.params for n in nets])
    grad = np.zeros(params.size)
    pos = 0
    gviews = []
    for n in nets:
        n._bind(params[pos:pos + n.size])
        gviews.append(n.views(grad[pos:pos + n.size]))
        pos += n.size
    f1, f2, dec = nets

    def run(Xb):
        a1, a2 = _forward_all(f1, Xb), _forward_all(f2, Xb)
        ad = _forward_all(dec, np.hstack([a1[-1], a2[-1]]))
        return a1, a2, ad

    def loss_grad(idx):
        a1, a2, ad = run(X[idx])
        diff = ad[-1] - T[idx]
        loss = float(np.mean(diff * diff))
        diff *= 2.0 / diff.size
        dcode = _backprop(dec, ad, diff, *gviews[2], input_grad=True)
        _backprop(f1, a1, dcode[:, :1].copy(), *gviews[0])
        _backprop(f2, a2, dcode[:, 1:].copy(), *gviews[1])
        return loss

    def epoch_losses():
        d = run(X)[2][-1] - T
        dv = run(Xv)[2][-1] - Tv
        return float(np.mean(d * d)), float(np.mean(dv * dv))

    fit_parameters(params, grad, loss_grad, epoch_losses, len(X), cfg)
    return f1.copy(), f2.copy(), dec.copy()


def _check_sensor_array(X, N=None, K=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 3:
        raise InputShapeError(f"expected features of shape (rows, N, K), got {X.shape}")
    if N is not None and X.shape[1] != N:
        raise InputShapeError(f"expected {N} sensors, got {X.shape[1]}")
    if K is not None and X.shape[2] != K:
        raise InputShapeError(f"expected {K} features, got {X.shape[2]}")
    return X


def concat_codes(encoders, X) -> np.ndarray:
    """Sensor-major concatenation ``[y_1, ..., y_N]`` of the encoder outputs."""
    X = _check_sensor_array(X, len(encoders))
    return np.concatenate([enc.encode(X[:, n, :]) for n, enc in enumerate(encoders)], axis=1)


def train_fusion(encoders, train_set, val_set, cfg: TrainConfig) -> MlpNetwork:
    """Fit the sink network on the frozen encoders' concatenated codes."""
    Ms = {enc.M for enc in encoders}
    if len(Ms) != 1:
        raise ConfigurationError(f"all encoders must share the same M, got {sorted(Ms)}")
    M, N = Ms.pop(), len(encoders)
    X, y = train_set
    Xv, yv = val_set
    net = _init(fusion_layers(M, N), M * N, cfg.seed, "fusion")
    net, _ = train(net, (concat_codes(encoders, X), y), (concat_codes(encoders, Xv), yv), cfg)
    return net


# --------------------------------------------------------------------------
# global training

_NOTATION = re.compile(r"^\s*([0-9\s\-]*)\|\|([0-9\s\-]*)$")


@dataclass(frozen=True)
class GlobalConfig:
    """Layer widths of each local sub-network and of the sink network."""

    local_widths: tuple
    sink_widths: tuple
    N: int
    notation: str = ""

    @property
    def M(self):
        return self.local_widths[-1]

    @property
    def sink_input(self):
        return self.M * self.N

    @property
    def total_neurons(self):
        return self.N * sum(self.local_widths) + sum(self.sink_widths)


def _widths(part, notation):
    tokens = [t.strip() for t in part.strip().strip("-").split("-")]
    if tokens == [""]:
        return ()
    if any(not t.isdigit() for t in tokens):
        raise ParseError(f"malformed layer list {part!r} in {notation!r}")
    widths = tuple(int(t) for t in tokens)
    if any(w < 1 for w in widths):
        raise ParseError(f"layer widths must be positive in {notation!r}")
    return widths


def parse_global_config(notation: str, N: int, neuron_budget=None) -> GlobalConfig:
    """Parse ``a1-...-aQL||b1-...-bQG`` (dashes next to ``||`` are optional).

    The sink must end in a single output neuron. With ``neuron_budget`` the
    total ``N * sum(a) + sum(b)`` must match it exactly.
    """
    m = _NOTATION.match(notation or "")
    if not m:
        raise ParseError(f"expected 'a1-...-aQL||b1-...-bQG', got {notation!r}")
    local, sink = _widths(m.group(1), notation), _widths(m.group(2), notation)
    if not local or not sink:
        raise ParseError(f"both the local and the sink part need at least one layer: {notation!r}")
    if N < 1:
        raise ConfigurationError("N must be positive")
    gc = GlobalConfig(local, sink, int(N), notation.strip())
    if sink[-1] != 1:
        raise ConfigurationError(f"sink must end in one output neuron, got {sink[-1]} in {notation!r}")
    if neuron_budget is not None and gc.total_neurons != neuron_budget:
        raise ConfigurationError(
            f"{notation!r} with N={N} has {gc.total_neurons} neurons, expected {neuron_budget}")
    return gc


def global_layers(gc: GlobalConfig):
    local = [LayerSpec(w, RELU) for w in gc.local_widths]
    sink = [LayerSpec(w, RELU) for w in gc.sink_widths[:-1]] + [LayerSpec(gc.sink_widths[-1], SIGMOID)]
    return local, sink


def build_global_network(gc: GlobalConfig, K, seed) -> MlpNetwork:
    local, sink = global_layers(gc)
    subnets = [_init(local, K, seed, "global-local", n) for n in range(gc.N)]
    return chain(block_diagonal(subnets), _init(sink, gc.sink_input, seed, "global-sink"))


def train_global(gc: GlobalConfig, train_set, val_set, cfg: TrainConfig, standardize=True) -> "AuthenticatorBundle":
    """Train all local sub-networks and the sink end to end on label MSE."""
    X, y = train_set
    Xv, yv = val_set
    X = _check_sensor_array(X, gc.N)
    Xv = _check_sensor_array(Xv, gc.N, X.shape[2])
    K = X.shape[2]
    scaler = FeatureScaler.fit(X) if standardize else FeatureScaler.identity(gc.N, K)
    X, Xv = scaler.transform(X), scaler.transform(Xv)
    net = build_global_network(gc, K, cfg.seed)
    net, _ = train(net, (X.reshape(len(X), -1), y), (Xv.reshape(len(Xv), -1), yv), cfg)
    return AuthenticatorBundle(GLOBAL, gc.M, gc.N, K, global_net=net, global_config=gc.notation,
                               metadata={"seed": cfg.seed}, scaler=scaler)


# --------------------------------------------------------------------------
# bundles

@dataclass(frozen=True, eq=False)
class FeatureScaler:
    """Per-(sensor, feature) affine standardization fitted on training rows.

    Each sensor only needs its own ``K`` means and scales, so applying it
    is compatible with purely local processing.
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = _check_sensor_array(X)
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    @classmethod
    def identity(cls, N, K):
        return cls(np.zeros((N, K)), np.ones((N, K)))

    def transform(self, X):
        return (X - self.mean) / self.scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))


@dataclass
class AuthenticatorBundle:
    """Everything the network needs to score a packet: encoders, fusion, threshold."""

    scheme: str
    M: int
    N: int
    K: int
    encoders: list = field(default_factory=list)
    fusion: MlpNetwork | None = None
    global_net: MlpNetwork | None = None
    global_config: str = ""
    threshold: float | None = None
    metadata: dict = field(default_factory=dict)
    scaler: FeatureScaler | None = None

    def __post_init__(self):
        if self.scaler is None:
            self.scaler = FeatureScaler.identity(self.N, self.K)
        if self.scaler.mean.shape != (self.N, self.K):
            raise ConfigurationError("scaler must hold one mean and scale per (sensor, feature)")
        if self.scheme == GLOBAL:
            if self.global_net is None:
                raise ConfigurationError("a global bundle needs its composite network")
        else:
            if len(self.encoders) != self.N or self.fusion is None:
                raise ConfigurationError("a local bundle needs N encoders and a fusion network")
            if any(enc.M != self.M for enc in self.encoders):
                raise ConfigurationError("all encoders must output M values")
            if self.fusion.input_dim != self.M * self.N:
                raise ConfigurationError("fusion input must be M * N wide")

    @property
    def n_local_layers(self):
        return len(parse_global_config(self.global_config, self.N).local_widths)

    def local_codes(self, X) -> np.ndarray:
        """The ``(rows, M * N)`` vectors the sensors report to the sink."""
        X = self.scaler.transform(_check_sensor_array(X, self.N, self.K))
        if self.scheme == GLOBAL:
            head = truncate(self.global_net, 0, self.n_local_layers)
            return forward(head, X.reshape(len(X), -1))
        return concat_codes(self.encoders, X)

    def local_networks(self):
        """Per-sensor encoder networks of a global bundle."""
        if self.scheme != GLOBAL:
            return [enc for enc in self.encoders]
        return split_block_diagonal(self.global_net, self.N, self.n_local_layers)

    def scores(self, X) -> np.ndarray:
        """Fused score ``z`` in (0, 1) for every row of ``X`` (rows, N, K)."""
        X = self.scaler.transform(_check_sensor_array(X, self.N, self.K))
        if self.scheme == GLOBAL:
            return forward(self.global_net, X.reshape(len(X), -1))[:, 0]
        return forward(self.fusion, concat_codes(self.encoders, X))[:, 0]

    def decide(self, X) -> np.ndarray:
        if self.threshold is None:
            raise ConfigurationError("threshold not set")
        return (self.scores(X) >= self.threshold).astype(int)

    def to_dict(self):
        d = {"format": BUNDLE_FORMAT, "version": BUNDLE_VERSION, "scheme": self.scheme,
             "M": self.M, "N": self.N, "K": self.K, "threshold": self.threshold,
             "metadata": self.metadata, "scaler": self.scaler.to_dict()}
        if self.scheme == GLOBAL:
            d["global"] = {"notation": self.global_config, "net": self.global_net.to_dict()}
        else:
            d["encoders"] = [enc.to_dict() for enc in self.encoders]
            d["fusion"] = self.fusion.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != BUNDLE_FORMAT:
            raise ConfigurationError(f"not a {BUNDLE_FORMAT} document")
        if d.get("version") != BUNDLE_VERSION:
            raise ConfigurationError(f"unsupported {BUNDLE_FORMAT} version {d.get('version')!r}")
        common = dict(scheme=d["scheme"], M=d["M"], N=d["N"], K=d["K"],
                      threshold=d.get("threshold"), metadata=d.get("metadata", {}),
                      scaler=FeatureScaler.from_dict(d["scaler"]) if "scaler" in d else None)
        if d["scheme"] == GLOBAL:
            return cls(global_net=MlpNetwork.from_dict(d["global"]["net"]),
                       global_config=d["global"]["notation"], **common)
        return cls(encoders=[LocalEncoder.from_dict(e) for e in d["encoders"]],
                   fusion=MlpNetwork.from_dict(d["fusion"]), **common)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def encode_and_fuse(bundle: AuthenticatorBundle, features) -> float:
    """Score one ``N x K`` feature matrix."""
    F = np.asarray(features, dtype=float)
    if F.shape != (bundle.N, bundle.K):
        raise InputShapeError(f"expected a {bundle.N}x{bundle.K} feature matrix, got {F.shape}")
    return float(bundle.scores(F[None])[0])


RECONSTRUCTION_UNITS = ("raw", "standardized")


def reconstruction_weights(scaler: FeatureScaler, units="raw") -> np.ndarray:
    """Per-(sensor, feature) factors mapping standardized features to reconstruction targets.

    ``"raw"`` puts each sensor's targets back in the features' own units,
    normalized to unit mean square per sensor, so an autoencoder weights
    features by their natural spread exactly as it would on unscaled input.
    ``"standardized"`` weights every feature equally.
    """
    if units == "standardized":
        return np.ones_like(scaler.scale)
    if units != "raw":
        raise ConfigurationError(f"unknown reconstruction units {units!r}; use one of {RECONSTRUCTION_UNITS}")
    return scaler.scale / np.sqrt(np.mean(scaler.scale ** 2, axis=1, keepdims=True))


def train_local_scheme(scheme, M, train_ds, val_ds, cfg: TrainConfig, freeze_decision=True, ld_cache=None,
                       standardize=True, reconstruction_units="raw"):
    """Train N local encoders plus the fusion network for one local scheme.

    ``train_ds``/``val_ds`` are ``(X, y)`` with ``X`` of shape (rows, N, K).
    Each sensor trains with its own seed derived from ``cfg.seed``.
    ``ld_cache`` (a dict) lets LD and CLDAE runs on the same data share the
    stage-1 networks; results are identical with or without it. With
    ``standardize`` every feature is z-scored with training-split statistics
    before it reaches any network; ``reconstruction_units`` picks the units
    the AE and CLDAE reconstruction losses are measured in (see
    :func:`reconstruction_weights`).
    """
    X, y = train_ds
    Xv, yv = val_ds
    X = _check_sensor_array(X)
    Xv = _check_sensor_array(Xv, X.shape[1], X.shape[2])
    N, K = X.shape[1], X.shape[2]
    scaler = FeatureScaler.fit(X) if standardize else FeatureScaler.identity(N, K)
    X, Xv = scaler.transform(X), scaler.transform(Xv)
    weights = reconstruction_weights(scaler, reconstruction_units)
    if scheme == CLDAE and M == 1:
        scheme = LD
    if scheme == LD and M != 1:
        raise ConfigurationError("the LD scheme reports a single value per sensor (M = 1)")
    encoders = []
    for n in range(N):
        cfg_n = cfg.replace(seed=derive_seed(cfg.seed, "sensor", n))
        tr, va = (X[:, n, :], y), (Xv[:, n, :], yv)
        if scheme == AE:
            enc, _ = train_ae_local(tr, va, M, cfg_n, target_weights=weights[n])
        else:
            ld = None if ld_cache is None else ld_cache.get(n)
            if ld is None:
                ld = train_ld_local(tr, va, cfg_n)
                if ld_cache is not None:
                    ld_cache[n] = ld
            enc = ld if scheme == LD else train_cldae_local(tr, va, M, cfg_n, freeze_decision, ld=ld,
                                                            target_weights=weights[n])[0]
        encoders.append(enc)
    fusion = train_fusion(encoders, (X, y), (Xv, yv), cfg.replace(seed=derive_seed(cfg.seed, "fusion")))
    return AuthenticatorBundle(scheme, M, N, K, encoders=encoders, fusion=fusion, metadata={"seed": cfg.seed},
                               scaler=scaler)
