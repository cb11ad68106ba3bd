"""KNRM parameter containers."""
from dataclasses import dataclass, field

import numpy as np

from cnir.core import checkpoint
from cnir.core.exceptions import CheckpointError, InvariantError
from cnir.services.lexical import EmbeddingTable, Vocabulary


@dataclass(frozen=True)
class KernelBank:
    """Gaussian kernels (mu_t, sigma_t); exactly one exact-match kernel at mu = 1."""

    mus: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        if self.mus.ndim != 1 or self.mus.shape != self.sigmas.shape or len(self.mus) < 1:
            raise InvariantError("kernel bank needs matching non-empty mu and sigma vectors")
        if np.any(self.sigmas <= 0):
            raise InvariantError("kernel widths must be positive")
        if int(np.sum(self.mus == 1.0)) != 1:
            raise InvariantError("kernel bank needs exactly one exact-match kernel (mu = 1)")

    def __len__(self) -> int:
        return len(self.mus)


def default_kernel_bank(n_kernels: int = 11, sigma: float = 0.1, exact_sigma: float = 1e-3) -> KernelBank:
    """Exact kernel plus n-1 soft kernels centred at 0.9, 0.7, ..., -0.9 (for 11)."""
    if n_kernels < 1:
        raise InvariantError("need at least one kernel")
    mus = [1.0]
    sigmas = [exact_sigma]
    if n_kernels > 1:
        bin_size = 2.0 / (n_kernels - 1)
        for i in range(n_kernels - 1):
            mus.append(1.0 - bin_size / 2.0 - i * bin_size)
            sigmas.append(sigma)
    return KernelBank(np.array(mus), np.array(sigmas))


@dataclass
class KnrmParameters:
    """Kernel bank, ranking layer (w, b) and the ranker's own embedding table."""

    bank: KernelBank
    embeddings: EmbeddingTable
    train_embeddings: bool = True
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def initialize(
        cls,
        bank: KernelBank,
        embeddings: EmbeddingTable,
        rng: np.random.Generator,
        train_embeddings: bool = True,
    ) -> "KnrmParameters":
        """w uniform in [-0.01, 0.01], b = 0, embeddings copied."""
        table = embeddings.copy()
        tensors = {
            "w": rng.uniform(-0.01, 0.01, size=len(bank)),
            "b": np.zeros(1),
            "embeddings": table.matrix,
        }
        return cls(bank=bank, embeddings=table, train_embeddings=train_embeddings, tensors=tensors)

    @property
    def w(self) -> np.ndarray:
        return self.tensors["w"]

    @property
    def b(self) -> float:
        return float(self.tensors["b"][0])

    def trainable_names(self) -> list[str]:
        return ["w", "b", "embeddings"] if self.train_embeddings else ["w", "b"]

    def copy(self) -> "KnrmParameters":
        table = self.embeddings.copy()
        tensors = {name: arr.copy() for name, arr in self.tensors.items()}
        tensors["embeddings"] = table.matrix
        return KnrmParameters(self.bank, table, self.train_embeddings, tensors)

    def digest(self) -> str:
        return checkpoint.digest(self.tensors)

    def save(self, path) -> None:
        tensors = dict(self.tensors)
        tensors["mus"] = self.bank.mus
        tensors["sigmas"] = self.bank.sigmas
        checkpoint.save_tensors(
            path,
            "knrm",
            tensors,
            {"vocab": self.embeddings.vocab.tokens, "train_embeddings": self.train_embeddings},
        )

    @classmethod
    def load(cls, path) -> "KnrmParameters":
        tensors, meta = checkpoint.load_tensors(path, kind="knrm")
        try:
            bank = KernelBank(tensors.pop("mus"), tensors.pop("sigmas"))
            tokens = meta["vocab"]
            vocab = Vocabulary(tokens[2:])
            if vocab.tokens != tokens:
                raise CheckpointError(f"{path}: stored vocabulary is not canonical")
            table = EmbeddingTable("word", vocab, tensors["embeddings"])
        except (KeyError, InvariantError) as e:
            raise CheckpointError(f"{path}: incomplete knrm checkpoint ({e})") from e
        tensors["embeddings"] = table.matrix
        return cls(bank, table, bool(meta.get("train_embeddings", True)), tensors)
