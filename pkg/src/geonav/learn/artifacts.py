"""Actor checkpoints shared by teachers and students."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from ..core.exceptions import ArchitectureMismatchError
from ..sim.nav_env import ActionBounds, ObservationNormalizer
from .neural import Mlp, forward, load_checkpoint, save_checkpoint


@dataclass
class ActorBundle:
    """A deterministic actor plus the observation/action maps it was trained with."""

    actor: Mlp
    normalizer: ObservationNormalizer
    bounds: ActionBounds
    role: str = "teacher"
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def act_normalized(self, obs: np.ndarray) -> np.ndarray:
        return forward(self.actor, obs)


def bundle_metadata(normalizer: ObservationNormalizer, bounds: ActionBounds, role: str, name: str,
                    extra: Optional[dict] = None) -> dict:
    meta = {
        "role": role,
        "name": name,
        "normalizer": normalizer.to_dict(),
        "action_bounds": {"psi_max": bounds.psi_max, "dist_max_km": bounds.dist_max_km},
    }
    meta.update(extra or {})
    return meta


def save_actor(path: Union[str, Path], bundle: ActorBundle, extra_networks: Optional[Dict[str, Mlp]] = None,
               arrays: Optional[Dict[str, np.ndarray]] = None, extra: Optional[dict] = None) -> Path:
    networks = {"actor": bundle.actor}
    networks.update(extra_networks or {})
    meta = bundle_metadata(bundle.normalizer, bundle.bounds, bundle.role, bundle.name, extra)
    return save_checkpoint(path, networks, arrays=arrays, metadata=meta)


def load_actor(path: Union[str, Path]) -> ActorBundle:
    """Load the actor of any teacher or student checkpoint."""
    ckpt = load_checkpoint(path)
    if "actor" not in ckpt.networks:
        raise ValueError(f"{path} holds no actor network")
    meta = ckpt.metadata
    bounds = meta.get("action_bounds", {})
    return ActorBundle(
        actor=ckpt.networks["actor"],
        normalizer=ObservationNormalizer.from_dict(meta["normalizer"]),
        bounds=ActionBounds(**bounds) if bounds else ActionBounds(),
        role=meta.get("role", "teacher"),
        name=meta.get("name", Path(path).stem),
        metadata=meta,
    )


def check_same_architecture(bundles) -> None:
    """Raise when the actors of ``bundles`` differ in layer sizes or output activation."""
    first = bundles[0].actor
    for other in bundles[1:]:
        if not first.same_architecture(other.actor):
            raise ArchitectureMismatchError(first.layer_dims, other.actor.layer_dims)
