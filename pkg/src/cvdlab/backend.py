"""Model backends, low-rank adapter mechanics, and checkpointing.

A backend bundles three capabilities behind one contract: generate (prompt
in, text out), embed (code in, vector out), and classify (code in,
vulnerable-class probability out). Real LLM backends implement the same
contract out of tree; the in-tree "toy" backend is a fully deterministic
stand-in small enough to verify every mechanism at desk scale.

Adapter math: an adapted weight W' acts as W' x = W x + (alpha / rank) *
B (A x). A starts as small seeded Gaussian noise and B starts at zero, so a
freshly attached adapter is exactly a no-op. Only A, B and the classifier
head ever train; base weights are frozen and fingerprinted.

Checkpoint file format, little-endian throughout:

    8 bytes   magic b"CVDCKPT1"
    u32       format version (1)
    u32       parameter count
    per parameter, in ascending name order:
        u16   name byte length, then UTF-8 name
        u8    ndim, then ndim u32 dimension sizes
        f32   values, row-major
"""

from __future__ import annotations

import hashlib
import re
import struct
import uuid
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

CAPABILITIES = ("generative", "classifier", "embedder")
CHECKPOINT_MAGIC = b"CVDCKPT1"
CHECKPOINT_VERSION = 1
DEFAULT_MARKER = "__vuln_marker__"

# probabilities are clipped into the open interval so log-loss stays finite
_PROB_EPS = 1e-12


class CapabilityError(RuntimeError):
    """A backend was asked for a capability its descriptor does not declare."""


@dataclass(frozen=True)
class BackendDescriptor:
    """What a backend is and what it can do."""

    name: str
    capabilities: frozenset[str]
    hidden_dim: int
    quantization_bits: int | None = None  # recorded for provenance only
    pooling: str = "mean"  # how token-level embeddings collapse to one vector

    def __post_init__(self) -> None:
        unknown = set(self.capabilities) - set(CAPABILITIES)
        if unknown:
            raise ValueError(f"unknown capabilities {sorted(unknown)}, expected subset of {CAPABILITIES}")
        if self.hidden_dim < 1:
            raise ValueError(f"hidden_dim must be positive, got {self.hidden_dim}")


@dataclass(frozen=True)
class AdapterConfig:
    """Low-rank adapter hyperparameters."""

    rank: int = 16
    alpha: float = 8.0
    target_modules: tuple[str, ...] = ("q_proj", "k_proj", "v_proj", "o_proj")
    learnable: Mapping[str, bool] | None = None  # None = every target learns

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.target_modules or len(set(self.target_modules)) != len(self.target_modules):
            raise ValueError("target_modules must be non-empty and unique")

    def is_learnable(self, module: str) -> bool:
        if self.learnable is None:
            return True
        return bool(self.learnable.get(module, True))


@dataclass
class LowRankAdapter:
    """The trainable low-rank factors attached to one weight matrix."""

    rank: int
    alpha: float
    A: np.ndarray  # (rank, d_in), seeded small Gaussian
    B: np.ndarray  # (d_out, rank), zeros at creation so the update starts neutral

    def __post_init__(self) -> None:
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise ValueError("adapter factors must be 2-D")
        if self.A.shape[0] != self.rank or self.B.shape[1] != self.rank:
            raise ValueError(
                f"factor shapes {self.A.shape} / {self.B.shape} do not match rank {self.rank}"
            )

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    @classmethod
    def create(cls, d_out: int, d_in: int, rank: int, alpha: float, rng: np.random.Generator) -> "LowRankAdapter":
        a = rng.normal(0.0, 0.02, size=(rank, d_in))
        b = np.zeros((d_out, rank))
        return cls(rank=rank, alpha=alpha, A=a, B=b)


def apply_adapter(weight: np.ndarray, adapter: LowRankAdapter, x: np.ndarray) -> np.ndarray:
    """Apply the adapted weight to x without materializing W + scale*B@A."""
    weight = np.asarray(weight, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if weight.ndim != 2:
        raise ValueError(f"weight must be 2-D, got shape {weight.shape}")
    d_out, d_in = weight.shape
    if adapter.A.shape[1] != d_in or adapter.B.shape[0] != d_out:
        raise ValueError(
            f"adapter factors {adapter.A.shape} / {adapter.B.shape} do not fit weight {weight.shape}"
        )
    if x.shape[0] != d_in:
        raise ValueError(f"input dimension {x.shape[0]} != weight d_in {d_in}")
    return weight @ x + adapter.scale * (adapter.B @ (adapter.A @ x))


@dataclass
class ClassifierHead:
    """Logistic read-out over the backend's hidden representation."""

    weights: np.ndarray  # (d,)
    bias: np.ndarray  # (1,), kept as an array so checkpoints stay uniform

    def prob(self, hidden: np.ndarray) -> float:
        z = float(self.weights @ hidden + self.bias[0])
        return _sigmoid_scalar(z)


def _sigmoid_scalar(z: float) -> float:
    p = 0.5 * (1.0 + np.tanh(0.5 * z))  # numerically stable logistic
    return float(np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)


@dataclass(frozen=True)
class StateSnapshot:
    """Opaque copy of one backend's trainable state at one moment."""

    backend_token: str
    serial: int
    params: Mapping[str, np.ndarray]


class ModelBackend(ABC):
    """Contract every backend implements; capabilities gate each entry point."""

    descriptor: BackendDescriptor

    def _require(self, capability: str) -> None:
        if capability not in self.descriptor.capabilities:
            raise CapabilityError(
                f"backend {self.descriptor.name!r} lacks the {capability!r} capability"
            )

    @abstractmethod
    def generate(self, prompt, max_new_tokens: int = 4) -> str:
        """Continue a prompt; returns the generated text."""

    @abstractmethod
    def embed(self, code: str) -> np.ndarray:
        """Return the sequence-level embedding of a code snippet."""

    @abstractmethod
    def classify(self, code: str) -> float:
        """Return the vulnerable-class probability, strictly inside (0, 1)."""

    @abstractmethod
    def trainable_parameters(self) -> dict[str, np.ndarray]:
        """Live views of every trainable array, keyed by stable names."""

    @abstractmethod
    def train_batch(self, codes: Sequence[str], labels: Sequence[int], learning_rate: float,
                    include_head: bool = True) -> float:
        """One SGD step on a mini-batch; returns the pre-update mean loss."""

    @abstractmethod
    def batch_loss(self, codes: Sequence[str], labels: Sequence[int]) -> float:
        """Mean log-loss of the current parameters on a batch, no update."""

    def snapshot(self) -> StateSnapshot:
        """Copy the trainable state; restore() brings it back bit-exactly."""
        token = getattr(self, "_instance_token", None)
        if token is None:
            raise RuntimeError("backend did not initialize its instance token")
        self._snapshot_serial = getattr(self, "_snapshot_serial", 0) + 1
        return StateSnapshot(
            backend_token=token,
            serial=self._snapshot_serial,
            params={name: arr.copy() for name, arr in self.trainable_parameters().items()},
        )

    def restore(self, snapshot: StateSnapshot) -> None:
        if snapshot.backend_token != getattr(self, "_instance_token", None):
            raise ValueError("snapshot belongs to a different backend instance")
        live = self.trainable_parameters()
        if set(snapshot.params) != set(live):
            raise ValueError("snapshot parameter names do not match this backend")
        for name, arr in snapshot.params.items():
            if live[name].shape != arr.shape:
                raise ValueError(f"snapshot shape mismatch for {name!r}")
            live[name][...] = arr

    @abstractmethod
    def base_fingerprint(self) -> str:
        """Content hash of the frozen base weights."""


_TOKEN_RE = re.compile(r"\w+")


def hash_bucket(token: str, dim: int) -> int:
    """Stable token-to-dimension assignment used by the toy embeddings."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


class ToyBackend(ModelBackend):
    """Deterministic desk-scale backend over hashed bag-of-tokens embeddings.

    The "model" is one frozen identity-initialized linear layer wrapped by a
    low-rank adapter, followed by a logistic classifier head. Embeddings are
    the adapted hidden states, so tuning visibly moves them. The head ships
    primed on one planted marker token: code containing the marker scores
    above 0.5 ("Vulnerable") and code without it below ("Safe"), which gives
    the generative mode a known rule table before any training.

    generate() locates the test snippet as the text between the prompt's
    last "Code: " block and its final "Label: " cue; snippets that themselves
    contain those markers at line starts can confuse the extraction, which is
    acceptable for a verification backend.
    """

    def __init__(
        self,
        dim: int = 256,
        seed: int = 0,
        marker: str = DEFAULT_MARKER,
        rank: int = 16,
        alpha: float = 8.0,
        capabilities: Sequence[str] = CAPABILITIES,
        marker_weight: float = 2.0,
        marker_bias: float = -1.0,
    ):
        self.descriptor = BackendDescriptor(
            name="toy",
            capabilities=frozenset(capabilities),
            hidden_dim=dim,
            quantization_bits=None,
            pooling="mean",
        )
        self.marker = marker
        rng = np.random.default_rng(seed)
        self.base_weight = np.eye(dim)  # frozen; never updated by any tuning path
        self.adapter = LowRankAdapter.create(dim, dim, rank=rank, alpha=alpha, rng=rng)
        self.head = ClassifierHead(weights=np.zeros(dim), bias=np.zeros(1))
        self.head.weights[self._bucket(marker)] = marker_weight
        self.head.bias[0] = marker_bias
        self._instance_token = uuid.uuid4().hex
        self._snapshot_serial = 0

    @property
    def dim(self) -> int:
        return self.descriptor.hidden_dim

    def _bucket(self, token: str) -> int:
        return hash_bucket(token, self.dim)

    def _bow(self, code: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in _TOKEN_RE.findall(code):
            vec[self._bucket(token)] += 1.0
        return vec

    def _hidden(self, bow: np.ndarray) -> np.ndarray:
        return apply_adapter(self.base_weight, self.adapter, bow)

    def _hidden_batch(self, bows: np.ndarray) -> np.ndarray:
        base = bows @ self.base_weight.T
        update = (bows @ self.adapter.A.T) @ self.adapter.B.T
        return base + self.adapter.scale * update

    def embed(self, code: str) -> np.ndarray:
        self._require("embedder")
        if not code or not code.strip():
            raise ValueError("cannot embed empty code")
        return self._hidden(self._bow(code))

    def classify(self, code: str) -> float:
        self._require("classifier")
        if not code or not code.strip():
            raise ValueError("cannot classify empty code")
        return self.head.prob(self._hidden(self._bow(code)))

    def generate(self, prompt, max_new_tokens: int = 4) -> str:
        self._require("generative")
        text = getattr(prompt, "text", prompt)
        if not isinstance(text, str) or not text:
            raise ValueError("prompt must be non-empty text")
        code = self._extract_test_code(text)
        p = self.head.prob(self._hidden(self._bow(code)))
        return "Vulnerable" if p > 0.5 else "Safe"

    @staticmethod
    def _extract_test_code(prompt_text: str) -> str:
        body = prompt_text
        cue = body.rfind("\nLabel: ")
        if cue != -1:
            body = body[:cue]
        start = body.rfind("\nCode: ")
        if start != -1:
            return body[start + len("\nCode: ") :]
        if body.startswith("Code: "):
            return body[len("Code: ") :]
        return body

    def trainable_parameters(self) -> dict[str, np.ndarray]:
        return {
            "adapter.A": self.adapter.A,
            "adapter.B": self.adapter.B,
            "head.weights": self.head.weights,
            "head.bias": self.head.bias,
        }

    def _forward_batch(self, codes: Sequence[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        bows = np.stack([self._bow(c) for c in codes])
        hidden = self._hidden_batch(bows)
        probs = _sigmoid(hidden @ self.head.weights + self.head.bias[0])
        return bows, hidden, probs

    def batch_loss(self, codes: Sequence[str], labels: Sequence[int]) -> float:
        y = np.asarray(labels, dtype=np.float64)
        _, _, probs = self._forward_batch(codes)
        return float(-(y * np.log(probs) + (1.0 - y) * np.log(1.0 - probs)).mean())

    def batch_gradients(self, codes: Sequence[str], labels: Sequence[int]) -> dict[str, np.ndarray]:
        """Analytic mean log-loss gradients for every trainable array."""
        y = np.asarray(labels, dtype=np.float64)
        bows, hidden, probs = self._forward_batch(codes)
        dz = (probs - y) / len(y)  # (n,)
        grad_w = hidden.T @ dz
        grad_b = np.array([dz.sum()])
        dh = np.outer(dz, self.head.weights)  # (n, d)
        down = bows @ self.adapter.A.T  # (n, rank)
        grad_B = self.adapter.scale * (dh.T @ down)
        grad_A = self.adapter.scale * ((dh @ self.adapter.B).T @ bows)
        return {"adapter.A": grad_A, "adapter.B": grad_B, "head.weights": grad_w, "head.bias": grad_b}

    def train_batch(self, codes: Sequence[str], labels: Sequence[int], learning_rate: float,
                    include_head: bool = True) -> float:
        if len(codes) == 0 or len(codes) != len(labels):
            raise ValueError("batch codes and labels must be non-empty and equal length")
        loss = self.batch_loss(codes, labels)
        grads = self.batch_gradients(codes, labels)
        self.adapter.A -= learning_rate * grads["adapter.A"]
        self.adapter.B -= learning_rate * grads["adapter.B"]
        if include_head:
            self.head.weights -= learning_rate * grads["head.weights"]
            self.head.bias -= learning_rate * grads["head.bias"]
        return loss

    def base_fingerprint(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.base_weight).tobytes()).hexdigest()


def save_checkpoint(backend: ModelBackend, path: str | Path) -> None:
    """Write the backend's trainable parameters in the documented layout."""
    params = backend.trainable_parameters()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype=np.float32)
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(backend: ModelBackend, path: str | Path) -> None:
    """Load parameters saved by save_checkpoint into a matching backend."""
    path = Path(path)
    live = backend.trainable_parameters()
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path.name} is not a checkpoint file (bad magic {magic!r})")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if count != len(live):
            raise ValueError(f"checkpoint has {count} parameters, backend expects {len(live)}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_values = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * n_values), dtype="<f4").reshape(shape)
            if name not in live:
                raise ValueError(f"checkpoint parameter {name!r} unknown to this backend")
            if live[name].shape != data.shape:
                raise ValueError(f"checkpoint shape {data.shape} != live shape {live[name].shape} for {name!r}")
            live[name][...] = data.astype(np.float64)


BACKENDS: dict[str, Callable[..., ModelBackend]] = {}


def register_backend(name: str):
    """Class decorator registering a backend factory under a config name."""

    def _register(factory: Callable[..., ModelBackend]):
        BACKENDS[name] = factory
        return factory

    return _register


def create_backend(name: str, **options) -> ModelBackend:
    """Instantiate a registered backend by name with backend-specific options."""
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}, registered: {sorted(BACKENDS)}")
    return BACKENDS[name](**options)


register_backend("toy")(ToyBackend)
