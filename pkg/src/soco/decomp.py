"""Rule-based observation decomposition into solo views.

A cooperative observation is ``[self features | entity blocks ...]``.  Each
solo view is the self features followed by one entity of the ``view_kind``
block, which reproduces the SoloNav observation layout exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass(frozen=True)
class EntityBlock:
    kind: str
    width: int
    count: int


@dataclass(frozen=True)
class ObservationLayout:
    self_width: int
    blocks: tuple[EntityBlock, ...]
    view_kind: str = "landmark"
    solo_view_width: int = 6
    _offsets: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        offsets = {}
        start = self.self_width
        for b in self.blocks:
            if b.width <= 0 or b.count < 0:
                raise ValueError(f"bad entity block {b}")
            offsets[b.kind] = (start, b)
            start += b.width * b.count
        if self.view_kind not in offsets:
            raise ValueError(f"layout has no {self.view_kind!r} block")
        view_block = offsets[self.view_kind][1]
        if self.self_width + view_block.width != self.solo_view_width:
            raise ValueError("self width + entity width must equal the solo view width")
        object.__setattr__(self, "_offsets", offsets)

    @property
    def obs_width(self) -> int:
        return self.self_width + sum(b.width * b.count for b in self.blocks)

    @property
    def n_views(self) -> int:
        return self._offsets[self.view_kind][1].count

    def to_dict(self) -> dict[str, Any]:
        return {
            "self_width": self.self_width,
            "blocks": [{"kind": b.kind, "width": b.width, "count": b.count} for b in self.blocks],
            "view_kind": self.view_kind,
            "solo_view_width": self.solo_view_width,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ObservationLayout":
        return cls(
            self_width=int(d["self_width"]),
            blocks=tuple(EntityBlock(b["kind"], int(b["width"]), int(b["count"])) for b in d["blocks"]),
            view_kind=d.get("view_kind", "landmark"),
            solo_view_width=int(d.get("solo_view_width", 6)),
        )


def spread_layout(n_agents: int) -> ObservationLayout:
    return ObservationLayout(
        self_width=4,
        blocks=(EntityBlock("landmark", 2, n_agents), EntityBlock("agent", 2, n_agents - 1)),
    )


def _check(obs: np.ndarray, layout: ObservationLayout) -> np.ndarray:
    obs = np.asarray(obs)
    if obs.shape[-1] != layout.obs_width:
        raise ValueError(f"observation width {obs.shape[-1]} != layout width {layout.obs_width}")
    return obs


def decompose(obs: np.ndarray, layout: ObservationLayout) -> tuple[np.ndarray, list[np.ndarray]]:
    """Split into self features and the list of per-entity feature slices.

    Works on any leading batch shape; slicing only, so concatenating the
    parts in order gives back ``obs``.
    """
    obs = _check(obs, layout)
    parts = []
    start = layout.self_width
    for b in layout.blocks:
        for _ in range(b.count):
            parts.append(obs[..., start : start + b.width])
            start += b.width
    return obs[..., : layout.self_width], parts


def build_solo_views(obs: np.ndarray, layout: ObservationLayout) -> np.ndarray:
    """Views of shape ``(..., G, solo_view_width)``; view k pairs self features with entity k."""
    obs = _check(obs, layout)
    start, block = layout._offsets[layout.view_kind]
    ents = obs[..., start : start + block.width * block.count]
    ents = ents.reshape(*obs.shape[:-1], block.count, block.width)
    own = np.broadcast_to(obs[..., None, : layout.self_width], (*obs.shape[:-1], block.count, layout.self_width))
    return np.concatenate([own, ents], axis=-1)
