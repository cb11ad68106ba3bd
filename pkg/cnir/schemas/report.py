"""Evaluation and training report schemas."""
from pydantic import BaseModel, Field

METRIC_NAMES = ("map", "err", "ndcg@5", "ndcg@10")


class MetricReport(BaseModel):
    """Per-query metric values and their macro-averages."""

    per_query: dict[str, dict[str, float]] = Field(default_factory=dict)
    means: dict[str, float] = Field(default_factory=dict)
    evaluated: int = 0
    skipped: int = 0  # queries without any judgment

    def mean(self, metric: str) -> float:
        return self.means.get(metric, 0.0)


class EpochRecord(BaseModel):
    """One row of the training history."""

    epoch: int
    mean_reward: float
    reward_ma: float
    valid_map: float
    valid_err: float
    valid_ndcg5: float
    valid_ndcg10: float
    ranker_updated: bool

    @classmethod
    def columns(cls) -> list[str]:
        return list(cls.model_fields)

    def tsv_row(self) -> str:
        values = []
        for name in self.columns():
            value = getattr(self, name)
            if isinstance(value, bool):
                values.append("1" if value else "0")
            elif isinstance(value, float):
                values.append(f"{value:.6f}")
            else:
                values.append(str(value))
        return "\t".join(values)


class TrainingState(BaseModel):
    """Progress of the cooperative loop."""

    epoch: int = 0
    best_metric: float = float("-inf")
    best_epoch: int = 0
    reward_trace: list[float] = Field(default_factory=list)
    history: list[EpochRecord] = Field(default_factory=list)
    policy_checkpoint: str | None = None
    ranker_checkpoint: str | None = None
    stopped_early: bool = False


class SynthSummary(BaseModel):
    """What the synthetic generator wrote and the self-check values it saw."""

    out_dir: str
    seed: int
    documents: int
    queries: dict[str, int]
    planted: int
    controls: int
    entities: int
    edges: int
    raw_map: float
    oracle_map: float
