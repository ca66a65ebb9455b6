"""Model parameters, batch-norm folding, bundle files and feature sets.

Bundle files are JSON with ``schema_version: 1``. Arrays are stored as
objects ``{"shape": [...], "dtype": "<f8", "data": <base64>}`` holding the
little-endian float64 bytes in C order, so numbers roundtrip bit for bit.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from heact.errors import DomainError, ParseError, ShapeError
from heact.poly_approx import PolyApprox, published_softplus

SCHEMA_VERSION = 1
DEFAULT_BN_EPS = 1e-5


# ---------------------------------------------------------------- layers


def _finite_2d(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} has non-finite entries")
    return a


def _finite_1d(a, name: str, length: int | None = None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be a vector, got shape {a.shape}")
    if length is not None and a.size != length:
        raise ShapeError(f"{name} has length {a.size}, expected {length}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True, eq=False)
class LinearLayer:
    """``z = W x + b`` with ``W`` of shape (out, in)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        w = _finite_2d(self.W, "W")
        object.__setattr__(self, "W", w)
        object.__setattr__(self, "b", _finite_1d(self.b, "b", w.shape[0]))

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.W.T + self.b

    def __eq__(self, other) -> bool:
        return (
            type(other) is type(self)
            and _bitwise_equal(self.W, other.W)
            and _bitwise_equal(self.b, other.b)
        )


class FoldedLinearLayer(LinearLayer):
    """A linear layer whose weights already absorb a batch normalization."""


@dataclass(frozen=True, eq=False)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    epsilon: float = DEFAULT_BN_EPS

    def __post_init__(self):
        g = _finite_1d(self.gamma, "gamma")
        h = g.size
        object.__setattr__(self, "gamma", g)
        for name in ("beta", "mu", "sigma2"):
            object.__setattr__(self, name, _finite_1d(getattr(self, name), name, h))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        if np.any(self.sigma2 + self.epsilon <= 0):
            bad = int(np.argmax(self.sigma2 + self.epsilon <= 0))
            raise DomainError(f"sigma2 + epsilon must be positive (unit {bad})")

    @property
    def dim(self) -> int:
        return self.gamma.size

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.gamma * (z - self.mu) / np.sqrt(self.sigma2 + self.epsilon) + self.beta

    @classmethod
    def identity(cls, h: int, sigma2=None, epsilon: float = DEFAULT_BN_EPS) -> "BatchNormParams":
        s2 = np.ones(h) if sigma2 is None else np.asarray(sigma2, dtype=np.float64)
        return cls(np.sqrt(s2 + epsilon), np.zeros(h), np.zeros(h), s2, epsilon)


def fold_bn(layer: LinearLayer, bn: BatchNormParams) -> FoldedLinearLayer:
    """Absorb ``bn`` into ``layer``: ``BN(W x + b) = W' x + b'``."""
    if bn.dim != layer.out_dim:
        raise ShapeError(f"batch norm has {bn.dim} units but the layer outputs {layer.out_dim}")
    denom = np.sqrt(bn.sigma2 + bn.epsilon)
    if np.any(denom <= 0):
        raise DomainError("sigma2 + epsilon must be positive")
    s = bn.gamma / denom
    return FoldedLinearLayer(s[:, None] * layer.W, s * (layer.b - bn.mu) + bn.beta)


# ---------------------------------------------------------------- bundles


@dataclass(frozen=True, eq=False)
class ModelBundle:
    fc1: FoldedLinearLayer
    activation: PolyApprox
    fc2: LinearLayer
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.fc1.out_dim != self.fc2.in_dim:
            raise ShapeError(
                f"fc1 outputs {self.fc1.out_dim} values but fc2 expects {self.fc2.in_dim}"
            )
        meta = {"dataset": "unspecified", **dict(self.metadata)}
        meta["feature_dim"] = self.fc1.in_dim
        meta["classes"] = self.fc2.out_dim
        object.__setattr__(self, "metadata", meta)

    @property
    def feature_dim(self) -> int:
        return self.fc1.in_dim

    @property
    def hidden_dim(self) -> int:
        return self.fc1.out_dim

    @property
    def classes(self) -> int:
        return self.fc2.out_dim

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "bundle",
            "metadata": self.metadata,
            "fc1": _layer_dict(self.fc1),
            "activation": self.activation.to_dict(),
            "fc2": _layer_dict(self.fc2),
        }

    def digest(self) -> str:
        """SHA-256 of the canonical serialized form."""
        return hashlib.sha256(_dumps(self.to_dict()).encode()).hexdigest()

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ModelBundle)
            and self.fc1 == other.fc1
            and self.fc2 == other.fc2
            and self.activation.to_dict() == other.activation.to_dict()
            and self.metadata == other.metadata
        )


@dataclass(frozen=True, eq=False)
class RawModel:
    """Trained parameters before folding: FC1, its batch norm, and FC2."""

    fc1: LinearLayer
    bn: BatchNormParams
    fc2: LinearLayer
    activation: PolyApprox
    metadata: dict = field(default_factory=dict)

    def fold(self) -> ModelBundle:
        return ModelBundle(fold_bn(self.fc1, self.bn), self.activation, self.fc2, self.metadata)

    def to_dict(self) -> dict:
        bn = self.bn
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "raw",
            "metadata": dict(self.metadata),
            "fc1": _layer_dict(self.fc1),
            "bn": {
                "gamma": _encode_array(bn.gamma),
                "beta": _encode_array(bn.beta),
                "mu": _encode_array(bn.mu),
                "sigma2": _encode_array(bn.sigma2),
                "epsilon": bn.epsilon,
            },
            "activation": self.activation.to_dict(),
            "fc2": _layer_dict(self.fc2),
        }


def _bitwise_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.astype("<f8").tobytes() == b.astype("<f8").tobytes()


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(obj, where: str, ndim: int) -> np.ndarray:
    if not isinstance(obj, dict):
        raise ParseError("expected an encoded array object", where)
    try:
        shape = [int(s) for s in obj["shape"]]
        dtype = obj.get("dtype", "<f8")
        raw = base64.b64decode(obj["data"], validate=True)
    except KeyError as e:
        raise ParseError(f"missing field {e.args[0]!r}", where) from None
    except (TypeError, ValueError) as e:
        raise ParseError(f"bad array encoding: {e}", where) from None
    if dtype != "<f8":
        raise ParseError(f"unsupported dtype {dtype!r}", f"{where}.dtype")
    if len(shape) != ndim or any(s < 0 for s in shape):
        raise ParseError(f"expected a {ndim}-D shape, got {shape}", f"{where}.shape")
    if len(raw) != 8 * int(np.prod(shape)):
        raise ParseError(f"payload holds {len(raw)} bytes, shape {shape} needs {8 * int(np.prod(shape))}", f"{where}.data")
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if not np.all(np.isfinite(a)):
        raise ParseError("non-finite values", where)
    return a


def _layer_dict(layer: LinearLayer) -> dict:
    return {"W": _encode_array(layer.W), "b": _encode_array(layer.b)}


def _layer_from(obj, where: str, cls=LinearLayer) -> LinearLayer:
    if not isinstance(obj, dict):
        raise ParseError("expected an object", where)
    for key in ("W", "b"):
        if key not in obj:
            raise ParseError(f"missing field {key!r}", where)
    w = _decode_array(obj["W"], f"{where}.W", 2)
    b = _decode_array(obj["b"], f"{where}.b", 1)
    if b.size != w.shape[0]:
        raise ShapeError(f"{where}: W has {w.shape[0]} rows but b has {b.size} entries")
    return cls(w, b)


def _dumps(d: dict) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def _read_json(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read model file: {e.strerror}", str(path)) from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", f"{path}:{e.lineno}") from None
    if not isinstance(d, dict):
        raise ParseError("top level must be an object", str(path))
    version = d.get("schema_version")
    if version is None:
        raise ParseError("missing field 'schema_version'", "schema_version")
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema version {version!r}", "schema_version")
    return d


def _require(d: dict, key: str, where: str = ""):
    if key not in d:
        raise ParseError(f"missing field {key!r}", where or key)
    return d[key]


def _metadata(d: dict) -> dict:
    meta = d.get("metadata", {})
    if not isinstance(meta, dict):
        raise ParseError("expected an object", "metadata")
    return meta


def _activation(d: dict) -> PolyApprox:
    if "activation" not in d:
        return published_softplus()
    return PolyApprox.from_dict(_require(d, "activation"), "activation")


def bundle_from_dict(d: dict) -> ModelBundle:
    kind = d.get("kind", "bundle")
    if kind != "bundle":
        raise ParseError(f"expected a folded bundle, found kind {kind!r}", "kind")
    fc1 = _layer_from(_require(d, "fc1"), "fc1", FoldedLinearLayer)
    fc2 = _layer_from(_require(d, "fc2"), "fc2")
    return ModelBundle(fc1, _activation(d), fc2, _metadata(d))


def raw_from_dict(d: dict) -> RawModel:
    kind = d.get("kind", "raw")
    if kind != "raw":
        raise ParseError(f"expected an unfolded model, found kind {kind!r}", "kind")
    fc1 = _layer_from(_require(d, "fc1"), "fc1")
    fc2 = _layer_from(_require(d, "fc2"), "fc2")
    bn_obj = _require(d, "bn")
    if not isinstance(bn_obj, dict):
        raise ParseError("expected an object", "bn")
    vecs = {k: _decode_array(_require(bn_obj, k, f"bn.{k}"), f"bn.{k}", 1) for k in ("gamma", "beta", "mu", "sigma2")}
    eps = bn_obj.get("epsilon", DEFAULT_BN_EPS)
    try:
        eps = float(eps)
    except (TypeError, ValueError):
        raise ParseError("epsilon must be a number", "bn.epsilon") from None
    if fc1.out_dim != fc2.in_dim:
        raise ShapeError(f"fc1 outputs {fc1.out_dim} values but fc2 expects {fc2.in_dim}")
    bn = BatchNormParams(epsilon=eps, **vecs)
    if bn.dim != fc1.out_dim:
        raise ShapeError(f"bn has {bn.dim} units but fc1 outputs {fc1.out_dim}")
    return RawModel(fc1, bn, fc2, _activation(d), _metadata(d))


def save_model(bundle: ModelBundle | RawModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(bundle.to_dict(), indent=1) + "\n")


def load_model(path: str | Path) -> ModelBundle:
    return bundle_from_dict(_read_json(path))


def load_raw_model(path: str | Path) -> RawModel:
    return raw_from_dict(_read_json(path))


def load_any(path: str | Path) -> ModelBundle | RawModel:
    d = _read_json(path)
    return raw_from_dict(d) if d.get("kind") == "raw" else bundle_from_dict(d)


# ---------------------------------------------------------------- features


@dataclass(frozen=True, eq=False)
class FeatureSet:
    features: np.ndarray  # (T, d)
    labels: np.ndarray  # (T,)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise ShapeError(f"features must be (T, d), got {x.shape}")
        if y.shape != (x.shape[0],):
            raise ShapeError(f"{y.shape[0] if y.ndim else 0} labels for {x.shape[0]} samples")
        if not np.all(np.isfinite(x)):
            raise DomainError("features contain non-finite values")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def head(self, n: int | None) -> "FeatureSet":
        return self if n is None else FeatureSet(self.features[:n], self.labels[:n])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(["label"] + [f"f{i}" for i in range(self.dim)]) + "\n")
        for y, row in zip(self.labels, self.features):
            buf.write(f"{int(y)}," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def load_features(path: str | Path, classes: int | None = None) -> FeatureSet:
    """Read ``label,f0,...,f{d-1}`` CSV with a mandatory header row.

    Errors name the 1-based line. ``classes`` bounds the labels when given.
    """
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read feature file: {e.strerror}", str(path)) from None
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file; expected a header row", "line 1")
    header = [h.strip() for h in lines[0].split(",")]
    d = len(header) - 1
    if d < 1 or header[0] != "label" or header[1:] != [f"f{i}" for i in range(d)]:
        raise ParseError("header must read label,f0,f1,...", "line 1")
    body = [ln for ln in lines[1:]]
    while body and not body[-1].strip():
        body.pop()
    t = len(body)
    # fast path: numpy parses the whole block; fall back to a row scan on any mismatch
    flat = None
    if t and all(ln.count(",") == d for ln in body):
        try:
            flat = np.array(",".join(body).split(","), dtype=np.float64)
        except ValueError:
            flat = None
    if flat is None:
        rows = []
        for i, ln in enumerate(body, start=2):
            cells = ln.split(",")
            if len(cells) != d + 1:
                raise ParseError(f"expected {d + 1} fields, found {len(cells)}", f"line {i}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                bad = next(c for c in cells if not _is_float(c))
                raise ParseError(f"non-numeric cell {bad.strip()!r}", f"line {i}") from None
        flat = np.array(rows, dtype=np.float64).reshape(-1)
    data = flat.reshape(t, d + 1) if t else np.empty((0, d + 1))
    labels = data[:, 0]
    for i in range(t):
        lab = labels[i]
        if lab != np.floor(lab) or lab < 0 or (classes is not None and lab >= classes):
            hi = f" [0, {classes})" if classes is not None else " (non-negative integer)"
            raise ParseError(f"label {lab:g} outside{hi}", f"line {i + 2}")
    feats = data[:, 1:]
    if not np.all(np.isfinite(feats)):
        row = int(np.argmax(~np.all(np.isfinite(feats), axis=1)))
        raise ParseError("non-finite feature value", f"line {row + 2}")
    return FeatureSet(feats, labels.astype(np.int64))


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------- fixtures


def synthesize_fixture(
    seed: int, d: int = 512, h: int = 512, classes: int = 10, t: int = 1000,
    flip: float = 0.05, activation: PolyApprox | None = None,
) -> tuple[RawModel, FeatureSet]:
    """Deterministic random model and labelled features for desk-scale runs.

    FC1 weights have variance 1/d and the batch norm uses the calibration
    statistics of the generated features, so folded pre-activations are close
    to standard normal (about 99.7% inside [-3, 3]). Labels are the model's own
    plaintext predictions with a fraction ``flip`` reassigned at random.
    """
    from heact.inference import oracle_batch

    activation = published_softplus() if activation is None else activation
    for attempt in range(100):
        rng = np.random.default_rng([seed, attempt])
        x = rng.normal(0.0, 1.0, size=(t, d))
        w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d))
        b1 = rng.normal(0.0, 0.1, size=h)
        pre = x @ w1.T + b1
        gamma = rng.uniform(0.8, 1.0, size=h)
        beta = rng.normal(0.0, 0.05, size=h)
        bn = BatchNormParams(gamma, beta, pre.mean(axis=0), pre.var(axis=0), DEFAULT_BN_EPS)
        fc1 = LinearLayer(w1, b1)
        a = activation(activation.clamp(bn(fc1(x))))
        w2 = rng.normal(0.0, 2.0 / np.sqrt(h), size=(classes, h))
        b2 = -(a @ w2.T).mean(axis=0)
        raw = RawModel(
            fc1, bn, LinearLayer(w2, b2), activation,
            {"dataset": "synthetic", "seed": int(seed), "attempt": attempt},
        )
        _, _, _, pred = oracle_batch(x, raw.fold())
        if t < 100 or np.unique(pred).size == classes:
            break
    labels = pred.copy()
    flips = rng.random(t) < flip
    labels[flips] = (pred[flips] + rng.integers(1, classes, size=int(flips.sum()))) % classes if classes > 1 else 0
    return raw, FeatureSet(x, labels)


def fixture_bundle(seed: int, **kwargs) -> tuple[ModelBundle, FeatureSet]:
    raw, feats = synthesize_fixture(seed, **kwargs)
    return raw.fold(), feats
