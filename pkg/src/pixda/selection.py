"""Epoch-wise source-set pruning driven by image-discriminator scores.

Each epoch keeps only the currently retained source images whose discriminator
score falls below the threshold, then doubles the threshold (clamped strictly
below 1, since scores are sigmoid outputs). The retained set can only shrink;
an empty set signals that the adversarial phase should stop.
"""

from dataclasses import dataclass, replace

DEFAULT_DELTA0 = 0.4
DEFAULT_DELTA_MAX = 1.0 - 1e-6


def _delta_at(epoch: int, delta0: float, delta_max: float) -> float:
    return min(delta0 * 2.0**epoch, delta_max)


@dataclass(frozen=True)
class SelectionState:
    retained_ids: tuple
    delta: float
    epoch: int
    delta0: float
    delta_max: float

    def __post_init__(self):
        object.__setattr__(self, "retained_ids", tuple(self.retained_ids))
        if self.delta0 <= 0:
            raise ValueError(f"delta0 must be positive, got {self.delta0}")
        if not 0 < self.delta_max < 1:
            raise ValueError(f"delta_max must lie in (0, 1), got {self.delta_max}")
        if self.epoch < 0:
            raise ValueError(f"epoch must be >= 0, got {self.epoch}")
        expected = _delta_at(self.epoch, self.delta0, self.delta_max)
        if self.delta != expected:
            raise ValueError(
                f"delta {self.delta} inconsistent with schedule value {expected} at epoch {self.epoch}"
            )

    @classmethod
    def initial(cls, ids, delta0: float = DEFAULT_DELTA0, delta_max: float = DEFAULT_DELTA_MAX):
        return cls(
            retained_ids=tuple(ids),
            delta=_delta_at(0, delta0, delta_max),
            epoch=0,
            delta0=delta0,
            delta_max=delta_max,
        )

    @property
    def exhausted(self) -> bool:
        return len(self.retained_ids) == 0


def delta_schedule(delta0: float, delta_max: float, epochs: int):
    """Closed-form threshold sequence for epochs 0..epochs-1."""
    return [_delta_at(k, delta0, delta_max) for k in range(epochs)]


def select_epoch(state: SelectionState, scores: dict) -> SelectionState:
    """One pruning step: filter by the current threshold, then advance it.

    scores maps image id to the image-discriminator output in (0, 1) and must
    cover every retained id; ids scoring at or above the threshold are dropped.
    """
    missing = [i for i in state.retained_ids if i not in scores]
    if missing:
        raise ValueError(f"missing scores for retained ids: {missing}")
    retained = tuple(i for i in state.retained_ids if scores[i] < state.delta)
    epoch = state.epoch + 1
    return replace(
        state,
        retained_ids=retained,
        epoch=epoch,
        delta=_delta_at(epoch, state.delta0, state.delta_max),
    )
