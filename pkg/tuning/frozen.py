"""
Snapshots of frozen parameters and bitwise drift detection.
"""
import logging
from typing import Dict, Iterable, Optional

import numpy as np

from shared.errors import SnapshotCorruptionError
from shared.models import FrozenCheckReport
from backbone.model import HEAD_GROUP
from .attach import FreezeMask, TunedModel

logger = logging.getLogger(__name__)

Snapshot = Dict[str, np.ndarray]


def snapshot_parameters(model: TunedModel, names: Optional[Iterable[str]] = None) -> Snapshot:
    """
    Copy parameter values for a later bitwise comparison.

    Args:
        model: Attached model
        names: Parameters to record; defaults to the pre-trained backbone
            (every backbone parameter except the head)
    """
    params = model.parameters()
    if names is None:
        names = [n for n in model.backbone.parameters() if model.group_of(n) != HEAD_GROUP]
    return {name: params[name].data.copy() for name in names}


def assert_frozen(model: TunedModel, freeze_mask: FreezeMask, snapshot: Snapshot) -> FrozenCheckReport:
    """
    Compare every snapshotted parameter bitwise against its current value.

    Raises:
        SnapshotCorruptionError: the snapshot misses frozen parameters or its
            shapes disagree with the model
    """
    params = model.parameters()
    missing = [name for name in freeze_mask if name not in snapshot]
    if missing:
        raise SnapshotCorruptionError(f"snapshot lacks frozen parameters: {missing[:5]}")

    drifted = []
    for name, saved in snapshot.items():
        current = params.get(name)
        if current is None or current.data.shape != saved.shape:
            raise SnapshotCorruptionError(
                f"snapshot entry {name} with shape {saved.shape} does not match the model"
            )
        if current.data.dtype != saved.dtype or current.data.tobytes() != saved.tobytes():
            drifted.append(name)

    groups = sorted({model.group_of(name) for name in drifted})
    if drifted:
        logger.warning(f"Frozen-parameter drift in groups {groups}")
    return FrozenCheckReport(
        passed=not drifted,
        checked=len(snapshot),
        drifted_groups=groups,
        drifted_parameters=drifted
    )
