"""Hybrid encrypted inference: encrypted FC1, client-side activation, encrypted FC2.

Roles are split by the keys they hold. :class:`ClientContext` owns the
secret key and is the only object that decrypts. The server side
(:class:`EncryptedModel` and the ``encrypted_*`` functions) receives only
:class:`~heact.ckks.scheme.EvaluationKeys`, which carry no secret material.
"""

from __future__ import annotations

import csv
import io
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from heact.ckks import scheme
from heact.ckks.params import CkksParams, preset
from heact.ckks.scheme import Ciphertext, EvaluationKeys, KeySet, PlainMatrix
from heact.errors import PrecisionError, ShapeError
from heact.model import FeatureSet, LinearLayer, ModelBundle
from heact.poly_approx import PolyApprox

PRECISION_LIMIT = 0.1  # largest tolerated decryption error estimate per slot


# ---------------------------------------------------------------- client


class ClientContext:
    """Key owner: encrypts inputs, runs the activation, reads the logits."""

    def __init__(self, keys: KeySet, activation: PolyApprox, seed: int = 0):
        self.keys = keys
        self.params: CkksParams = keys.params
        self.activation = activation
        self.seed = int(seed)
        self._encryptor = scheme.Encryptor(keys.public, self.seed)

    @classmethod
    def generate(cls, params: CkksParams, activation: PolyApprox, seed: int = 0) -> "ClientContext":
        return cls(scheme.keygen(params, seed), activation, seed)

    @property
    def evaluation_keys(self) -> EvaluationKeys:
        """Everything the server needs; safe to hand over."""
        return self.keys.evaluation

    def encryptor(self, sample: int | None = None) -> scheme.Encryptor:
        """The shared stream, or an independent one for ``sample``."""
        if sample is None:
            return self._encryptor
        sub = np.random.SeedSequence([self.seed, 1, int(sample)]).generate_state(1, np.uint64)[0]
        return scheme.Encryptor(self.keys.public, int(sub))

    def encrypt_vector(self, x, encryptor: scheme.Encryptor | None = None) -> Ciphertext:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.size > self.params.slots:
            raise ShapeError(f"input of shape {x.shape} does not fit in {self.params.slots} slots")
        return (encryptor or self._encryptor).encrypt_values(x)

    def decrypt_scalars(self, cts: list[Ciphertext]) -> np.ndarray:
        """Slot 0 of each ciphertext, after a precision check.

        The messages are real, so the imaginary parts of the decoded slots are
        pure noise; their maximum serves as the per-slot error estimate.
        """
        if not cts:
            return np.empty(0)
        z = scheme.decrypt_values(self.keys.secret, cts, complex_slots=True)
        err = float(np.max(np.abs(z.imag)))
        if not np.isfinite(err) or err > PRECISION_LIMIT:
            raise PrecisionError(f"decryption error estimate {err:.3g} exceeds {PRECISION_LIMIT}")
        return z[:, 0].real.copy()


# ---------------------------------------------------------------- server


def _check_layer(ct: Ciphertext, layer: LinearLayer) -> None:
    if layer.in_dim > ct.params.slots:
        raise ShapeError(f"layer input dim {layer.in_dim} exceeds {ct.params.slots} slots")


def _dense(ct: Ciphertext, layer: LinearLayer, keys: EvaluationKeys, plain: PlainMatrix | None) -> list[Ciphertext]:
    _check_layer(ct, layer)
    weights = layer.W if plain is None else plain
    return scheme.add_plain_scalars(scheme.dot_plain_many(ct, weights, keys), layer.b)


def encrypted_fc(
    ct_x: Ciphertext, layer: LinearLayer, keys: EvaluationKeys, plain: PlainMatrix | None = None,
) -> list[Ciphertext]:
    """One ciphertext per output neuron, ``<x, W_j> + b_j`` in slot 0; costs one level."""
    return _dense(ct_x, layer, keys, plain)


def encrypted_logits(
    ct_a: Ciphertext, fc2: LinearLayer, keys: EvaluationKeys, plain: PlainMatrix | None = None,
) -> list[Ciphertext]:
    """One ciphertext per class, the logit in slot 0."""
    return _dense(ct_a, fc2, keys, plain)


class EncryptedModel:
    """Server view of a bundle: weights plus evaluation keys, with the weight
    rows encoded once and reused across samples."""

    def __init__(self, bundle: ModelBundle, keys: EvaluationKeys):
        if bundle.feature_dim > keys.params.slots or bundle.hidden_dim > keys.params.slots:
            raise ShapeError(
                f"model dims {bundle.feature_dim}/{bundle.hidden_dim} exceed {keys.params.slots} slots"
            )
        self.bundle = bundle
        self.keys = keys
        self.params = keys.params
        self._plain: dict[str, PlainMatrix] = {}
        self._lock = threading.Lock()

    def _matrix(self, name: str, layer: LinearLayer, ct: Ciphertext) -> PlainMatrix:
        with self._lock:
            pm = self._plain.get(name)
            if pm is None or pm.level != ct.level or pm.scale != ct.scale:
                pm = scheme.encode_matrix(self.params, layer.W, ct.scale, ct.level)
                self._plain[name] = pm
        return pm

    def fc1(self, ct_x: Ciphertext) -> list[Ciphertext]:
        layer = self.bundle.fc1
        return encrypted_fc(ct_x, layer, self.keys, self._matrix("fc1", layer, ct_x))

    def fc2(self, ct_a: Ciphertext) -> list[Ciphertext]:
        layer = self.bundle.fc2
        return encrypted_logits(ct_a, layer, self.keys, self._matrix("fc2", layer, ct_a))


# ---------------------------------------------------------------- client steps


def hybrid_activation(
    ct_z: list[Ciphertext], client: ClientContext, encryptor: scheme.Encryptor | None = None,
) -> Ciphertext:
    """Decrypt each pre-activation, clamp, apply the polynomial, re-encrypt packed.

    The result is a fresh top-level ciphertext, so the second layer starts
    with the full modulus chain again.
    """
    z = client.decrypt_scalars(ct_z)
    act = client.activation
    a = act(act.clamp(z))
    return client.encrypt_vector(np.atleast_1d(a), encryptor)


def predict(ct_logits: list[Ciphertext], client: ClientContext) -> int:
    """Argmax of the decrypted logits; ties go to the lowest index."""
    return argmax(client.decrypt_scalars(ct_logits))


def argmax(logits) -> int:
    return int(np.argmax(np.asarray(logits)))


# ---------------------------------------------------------------- oracle


@dataclass(frozen=True, eq=False)
class OracleResult:
    z: np.ndarray
    a: np.ndarray
    logits: np.ndarray
    cls: int


def plaintext_oracle(x, bundle: ModelBundle) -> OracleResult:
    """The same pipeline in double precision, exposing every intermediate."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (bundle.feature_dim,):
        raise ShapeError(f"input has shape {x.shape}, model expects ({bundle.feature_dim},)")
    z, a, logits, pred = oracle_batch(x[None, :], bundle)
    return OracleResult(z[0], a[0], logits[0], int(pred[0]))


def oracle_batch(x: np.ndarray, bundle: ModelBundle):
    """Vectorized :func:`plaintext_oracle` over rows of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != bundle.feature_dim:
        raise ShapeError(f"features have shape {x.shape}, model expects (T, {bundle.feature_dim})")
    z = bundle.fc1(x)
    act = bundle.activation
    a = act(act.clamp(z))
    logits = bundle.fc2(a)
    return z, a, logits, np.argmax(logits, axis=1)


def top2_margin(logits: np.ndarray) -> np.ndarray:
    s = np.sort(np.atleast_2d(logits), axis=1)
    return s[:, -1] - s[:, -2] if s.shape[1] > 1 else np.full(s.shape[0], np.inf)


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class LatencyBreakdown:
    encode_encrypt_s: float
    fc_s: float
    activation_s: float
    decrypt_s: float
    total_s: float

    STAGES = ("encode_encrypt_s", "fc_s", "activation_s", "decrypt_s")

    def stage_sum(self) -> float:
        return self.encode_encrypt_s + self.fc_s + self.activation_s + self.decrypt_s


@dataclass(frozen=True)
class SampleRecord:
    index: int
    label: int
    prediction: int | None
    latency: LatencyBreakdown
    oracle_prediction: int
    oracle_margin: float
    logits: tuple[float, ...] = ()
    flagged: str | None = None


@dataclass
class InferenceReport:
    accuracy: float
    per_sample: list[SampleRecord]
    config: dict
    oracle_accuracy: float
    agreement: float
    flagged: int = 0
    latency: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "oracle_accuracy": self.oracle_accuracy,
            "agreement": self.agreement,
            "samples": len(self.per_sample),
            "flagged": self.flagged,
            "latency": self.latency,
            "config": self.config,
            "per_sample": [
                {
                    "index": r.index,
                    "label": r.label,
                    "prediction": r.prediction,
                    "oracle_prediction": r.oracle_prediction,
                    "oracle_margin": r.oracle_margin,
                    "logits": list(r.logits),
                    "flagged": r.flagged,
                    "latency": asdict(r.latency),
                }
                for r in self.per_sample
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "label", "prediction", *LatencyBreakdown.STAGES, "total_s"])
        for r in self.per_sample:
            lat = r.latency
            pred = "" if r.prediction is None else r.prediction
            w.writerow([r.index, r.label, pred, *(f"{getattr(lat, s):.6f}" for s in LatencyBreakdown.STAGES), f"{lat.total_s:.6f}"])
        return buf.getvalue()


def latency_summary(records: list[SampleRecord]) -> dict:
    """Mean, median and 95th percentile of each stage."""
    out = {}
    for name in (*LatencyBreakdown.STAGES, "total_s"):
        v = np.array([getattr(r.latency, name) for r in records], dtype=np.float64)
        if v.size == 0:
            out[name] = {"mean": 0.0, "median": 0.0, "p95": 0.0}
        else:
            out[name] = {"mean": float(v.mean()), "median": float(np.median(v)), "p95": float(np.percentile(v, 95))}
    return out


def _accuracy(records: list[SampleRecord]) -> float:
    kept = [r for r in records if r.flagged is None]
    if not kept:
        return 0.0
    return sum(r.prediction == r.label for r in kept) / len(kept)


# ---------------------------------------------------------------- batch runs


def run_sample(
    x: np.ndarray, client: ClientContext, server: EncryptedModel, encryptor: scheme.Encryptor | None = None,
) -> tuple[int, np.ndarray, LatencyBreakdown]:
    """Full hybrid pipeline for one input, timed stage by stage."""
    clock = time.perf_counter
    t0 = clock()
    ct_x = client.encrypt_vector(x, encryptor)
    t1 = clock()
    ct_z = server.fc1(ct_x)
    t2 = clock()
    ct_a = hybrid_activation(ct_z, client, encryptor)
    t3 = clock()
    ct_l = server.fc2(ct_a)
    t4 = clock()
    logits = client.decrypt_scalars(ct_l)
    pred = argmax(logits)
    t5 = clock()
    lat = LatencyBreakdown(t1 - t0, (t2 - t1) + (t4 - t3), t3 - t2, t5 - t4, t5 - t0)
    return pred, logits, lat


def _config(bundle: ModelBundle, params: CkksParams | None, seed: int, extra: dict) -> dict:
    return {
        "preset": params.name if params is not None else None,
        "params": params.describe() if params is not None else None,
        "activation": bundle.activation.activation,
        "activation_coeffs": [float(c) for c in bundle.activation.coeffs],
        "model_sha256": bundle.digest(),
        "seed": seed,
        **extra,
    }


def run_batch(
    features: FeatureSet,
    bundle: ModelBundle,
    params: CkksParams | str,
    seed: int = 0,
    strict: bool = True,
    threads: int | None = None,
    client: ClientContext | None = None,
) -> InferenceReport:
    """Encrypted inference over a feature set.

    Each sample uses its own encryption sub-seed, so results do not depend
    on thread scheduling. With ``strict`` any precision failure aborts the
    run; otherwise the sample is flagged and left out of the accuracy.
    """
    if len(features) == 0:
        raise ShapeError("empty feature set")
    if features.dim != bundle.feature_dim:
        raise ShapeError(f"features have dimension {features.dim}, model expects {bundle.feature_dim}")
    if isinstance(params, str):
        params = preset(params)
    if client is None:
        client = ClientContext.generate(params, bundle.activation, seed)
    server = EncryptedModel(bundle, client.evaluation_keys)
    _, _, o_logits, o_pred = oracle_batch(features.features, bundle)
    margins = top2_margin(o_logits)

    def one(i: int) -> SampleRecord:
        t0 = time.perf_counter()
        try:
            pred, logits, lat = run_sample(features.features[i], client, server, client.encryptor(i))
            flag = None
        except PrecisionError as e:
            if strict:
                raise
            elapsed = time.perf_counter() - t0
            pred, logits, flag = None, np.empty(0), str(e)
            lat = LatencyBreakdown(0.0, 0.0, 0.0, 0.0, elapsed)
        return SampleRecord(
            i, int(features.labels[i]), pred, lat, int(o_pred[i]), float(margins[i]),
            tuple(float(v) for v in logits), flag,
        )

    workers = threads or os.cpu_count() or 1
    idx = range(len(features))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, idx))
    else:
        records = [one(i) for i in idx]
    kept = [r for r in records if r.flagged is None]
    agree = sum(r.prediction == r.oracle_prediction for r in kept) / len(kept) if kept else 0.0
    return InferenceReport(
        accuracy=_accuracy(records),
        per_sample=records,
        config=_config(bundle, params, seed, {"strict": strict, "threads": workers, "samples": len(features)}),
        oracle_accuracy=float(np.mean(o_pred == features.labels)),
        agreement=agree,
        flagged=len(records) - len(kept),
        latency=latency_summary(kept),
    )


def run_plaintext(features: FeatureSet, bundle: ModelBundle, seed: int = 0) -> InferenceReport:
    """Oracle-only report; nothing is encrypted. Stage timings are plaintext times."""
    if len(features) == 0:
        raise ShapeError("empty feature set")
    if features.dim != bundle.feature_dim:
        raise ShapeError(f"features have dimension {features.dim}, model expects {bundle.feature_dim}")
    records = []
    clock = time.perf_counter
    for i, x in enumerate(features.features):
        t0 = clock()
        z = bundle.fc1(x)
        t1 = clock()
        act = bundle.activation
        a = act(act.clamp(z))
        t2 = clock()
        logits = bundle.fc2(a)
        t3 = clock()
        pred = argmax(logits)
        t4 = clock()
        lat = LatencyBreakdown(0.0, (t1 - t0) + (t3 - t2), t2 - t1, t4 - t3, t4 - t0)
        margin = float(top2_margin(logits)[0])
        records.append(SampleRecord(i, int(features.labels[i]), pred, lat, pred, margin, tuple(float(v) for v in logits)))
    acc = _accuracy(records)
    return InferenceReport(
        accuracy=acc,
        per_sample=records,
        config=_config(bundle, None, seed, {"mode": "plaintext-oracle", "samples": len(features)}),
        oracle_accuracy=acc,
        agreement=1.0,
        latency=latency_summary(records),
    )


# ---------------------------------------------------------------- bench


BENCH_ROWS = (
    ("encode&encrypt", "encode_encrypt_s"),
    ("FC", "fc_s"),
    ("activation", "activation_s"),
    ("decryption", "decrypt_s"),
    ("total", "total_s"),
)


def bench_table(report: InferenceReport) -> list[dict]:
    """Stage rows with mean seconds and share of the mean total."""
    lat = report.latency
    total = lat["total_s"]["mean"]
    rows = []
    for label, key in BENCH_ROWS:
        mean = lat[key]["mean"]
        rows.append({
            "stage": label,
            "mean_s": mean,
            "median_s": lat[key]["median"],
            "p95_s": lat[key]["p95"],
            "share_pct": 100.0 * mean / total if total > 0 else 0.0,
        })
    return rows
