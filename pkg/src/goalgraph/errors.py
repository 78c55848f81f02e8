"""Exception hierarchy.

Every error carries a short machine-readable ``category`` used by the CLI
when reporting failures.
"""


class GoalGraphError(Exception):
    category = "error"


class InapplicableDelta(GoalGraphError):
    category = "inapplicable_delta"


class InvariantViolation(GoalGraphError):
    category = "invariant_violation"


class NodeSetMismatch(GoalGraphError):
    category = "node_set_mismatch"


class UnknownNode(GoalGraphError):
    category = "unknown_node"


class UnsettledWorld(GoalGraphError):
    category = "unsettled_world"


class Unsolvable(GoalGraphError):
    category = "unsolvable"


class GoalConflict(GoalGraphError):
    category = "goal_conflict"


class CyclicOrdering(GoalGraphError):
    category = "cyclic_ordering"


class InsufficientData(GoalGraphError):
    category = "insufficient_data"


class NoModelForRelation(GoalGraphError):
    category = "no_model"


class MissingBox(GoalGraphError):
    category = "missing_box"


class MissingBackgroundPlate(GoalGraphError):
    category = "missing_background_plate"


class EmptyLabelSubset(GoalGraphError):
    category = "empty_label_subset"


class DegenerateBox(GoalGraphError):
    category = "degenerate_box"


class MaskMismatch(GoalGraphError):
    category = "mask_mismatch"


class ScenarioInvalid(GoalGraphError):
    category = "scenario_invalid"


class PlacementInfeasible(GoalGraphError):
    category = "placement_infeasible"


class CorruptManifest(GoalGraphError):
    category = "corrupt_manifest"


class MissingAsset(GoalGraphError):
    category = "missing_asset"


class UnreachableTarget(GoalGraphError):
    category = "unreachable_target"


class BufferNotFull(GoalGraphError):
    category = "buffer_not_full"


class StepTimeout(GoalGraphError):
    category = "step_timeout"


class MissingArtifacts(GoalGraphError):
    category = "missing_artifacts"


class ConfigInvalid(GoalGraphError):
    category = "config_invalid"
