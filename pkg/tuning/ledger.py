"""
Parameter ledger: exact per-group counts split into trainable and frozen.
"""
import csv
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Optional, Union

from shared.models import BackboneConfig, LedgerGroup, ParamLedger, TuningSpec
from backbone.model import parameter_shapes
from .attach import TunedModel, is_trainable_group, tuning_parameter_shapes

logger = logging.getLogger(__name__)

LEDGER_HEADER = ["group", "count", "trainable"]
SUMMARY_HEADER = ["total_trainable", "total_frozen", "percent"]


def ledger_for_config(config: BackboneConfig, spec: TuningSpec, num_classes: int) -> ParamLedger:
    """
    Count parameters from the architecture alone (nothing is allocated).

    Args:
        config: Backbone architecture
        spec: Attached method
        num_classes: Head output size

    Returns:
        Ledger with groups in model order
    """
    counts: "OrderedDict[str, int]" = OrderedDict()
    shapes = parameter_shapes(config, num_classes)
    shapes.update(tuning_parameter_shapes(config, spec))
    for s in shapes.values():
        counts[s.group] = counts.get(s.group, 0) + s.count

    groups = [
        LedgerGroup(name=name, count=count, trainable=is_trainable_group(spec.method, name))
        for name, count in counts.items()
    ]
    return ParamLedger.from_groups(groups)


def count_params(model: TunedModel, spec: Optional[TuningSpec] = None) -> ParamLedger:
    """Ledger of an attached model."""
    return ledger_for_config(model.config, spec or model.spec, model.num_classes)


def format_ledger(ledger: ParamLedger) -> str:
    """Human-readable table of a ledger."""
    lines = [f"{'group':<20} {'count':>14} {'trainable':>10}"]
    for g in ledger.groups:
        lines.append(f"{g.name:<20} {g.count:>14,} {str(g.trainable).lower():>10}")
    lines.append(
        f"trainable {ledger.total_trainable:,} / total {ledger.total:,} "
        f"({ledger.trainable_percent:.2f}%), {ledger.total_trainable / 1e6:.2f} M trainable"
    )
    return "\n".join(lines)


def write_ledger_csv(ledger: ParamLedger, path: Union[str, Path]) -> Path:
    """Export a ledger: one row per group, then the summary header and row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LEDGER_HEADER)
        for g in ledger.groups:
            writer.writerow([g.name, g.count, str(g.trainable).lower()])
        writer.writerow(SUMMARY_HEADER)
        writer.writerow([ledger.total_trainable, ledger.total_frozen, f"{ledger.trainable_percent:.2f}"])
    logger.info(f"Wrote ledger to {path}")
    return path
