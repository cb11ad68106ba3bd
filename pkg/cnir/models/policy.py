"""Policy network parameters for the query reformulator."""
from dataclasses import dataclass, field

import numpy as np

from cnir.core import checkpoint
from cnir.core.exceptions import CheckpointError, InvariantError


@dataclass
class PolicyParameters:
    """CNN query encoder, candidate-term MLP and scoring head.

    Tensors:
      conv{l}_w{h}: (F, h * D_l), conv{l}_b{h}: (F,) for layer l and window h
      term_A: (H_t, D), term_a: (H_t,)
      head_W: (H_s, Q + H_t), head_U: (H_s,), head_b: (1,)
    with D_0 the embedding size, D_l = Q = F * len(windows) for l > 0.
    """

    embedding_dim: int
    conv_layers: int
    feature_maps: int
    windows: tuple[int, ...]
    term_hidden: int
    score_hidden: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def query_dim(self) -> int:
        return self.feature_maps * len(self.windows)

    def layer_input_dim(self, layer: int) -> int:
        return self.embedding_dim if layer == 0 else self.query_dim

    def shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for layer in range(self.conv_layers):
            d_in = self.layer_input_dim(layer)
            for h in self.windows:
                shapes[f"conv{layer}_w{h}"] = (self.feature_maps, h * d_in)
                shapes[f"conv{layer}_b{h}"] = (self.feature_maps,)
        shapes["term_A"] = (self.term_hidden, self.embedding_dim)
        shapes["term_a"] = (self.term_hidden,)
        shapes["head_W"] = (self.score_hidden, self.query_dim + self.term_hidden)
        shapes["head_U"] = (self.score_hidden,)
        shapes["head_b"] = (1,)
        return shapes

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        embedding_dim: int,
        conv_layers: int = 1,
        feature_maps: int = 50,
        windows: tuple[int, ...] = (1, 2, 3),
        term_hidden: int = 50,
        score_hidden: int = 50,
    ) -> "PolicyParameters":
        """Weights uniform in [-0.1, 0.1], biases zero; drawn in sorted name order."""
        if conv_layers < 1:
            raise InvariantError("policy needs at least one convolution layer")
        params = cls(embedding_dim, conv_layers, feature_maps, tuple(windows), term_hidden, score_hidden)
        for name, shape in sorted(params.shapes().items()):
            if _is_bias(name):
                params.tensors[name] = np.zeros(shape)
            else:
                params.tensors[name] = rng.uniform(-0.1, 0.1, size=shape)
        return params

    def validate(self) -> None:
        for name, shape in self.shapes().items():
            arr = self.tensors.get(name)
            if arr is None or arr.shape != shape:
                raise InvariantError(f"policy tensor {name} missing or not of shape {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvariantError(f"policy tensor {name} is not finite")

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(
            self.embedding_dim, self.conv_layers, self.feature_maps, self.windows,
            self.term_hidden, self.score_hidden,
            {name: arr.copy() for name, arr in self.tensors.items()},
        )

    def digest(self) -> str:
        return checkpoint.digest(self.tensors)

    def save(self, path) -> None:
        meta = {
            "embedding_dim": self.embedding_dim,
            "conv_layers": self.conv_layers,
            "feature_maps": self.feature_maps,
            "windows": list(self.windows),
            "term_hidden": self.term_hidden,
            "score_hidden": self.score_hidden,
        }
        checkpoint.save_tensors(path, "policy", self.tensors, meta)

    @classmethod
    def load(cls, path) -> "PolicyParameters":
        tensors, meta = checkpoint.load_tensors(path, kind="policy")
        try:
            params = cls(
                meta["embedding_dim"], meta["conv_layers"], meta["feature_maps"],
                tuple(meta["windows"]), meta["term_hidden"], meta["score_hidden"], tensors,
            )
            params.validate()
        except (KeyError, InvariantError) as e:
            raise CheckpointError(f"{path}: bad policy checkpoint ({e})") from e
        return params


def _is_bias(name: str) -> bool:
    return name in ("term_a", "head_b") or (name.startswith("conv") and "_b" in name)
