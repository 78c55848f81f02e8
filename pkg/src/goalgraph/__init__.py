"""Plan scene-graph transition chains, synthesize sub-goal images and execute
them in a deterministic 2D gripper world."""
from .errors import GoalGraphError
from .graph import Edge, ObjectNode, Relation, SceneGraph
from .layout import BoundingBox, Layout, LayoutPredictor, extract_layout
from .library import Library
from .parser import GeomThresholds, parse
from .planner import Ordering, TaskSpec, TransitionChain, plan, validate_chain
from .scenarios import ScenarioConfig, generate_scenario
from .scene import Action, WorldState, render, step

__version__ = "0.1.0"

__all__ = [
    "Action", "BoundingBox", "Edge", "GeomThresholds", "GoalGraphError", "Layout", "LayoutPredictor",
    "Library", "ObjectNode", "Ordering", "Relation", "ScenarioConfig", "SceneGraph", "TaskSpec",
    "TransitionChain", "WorldState", "extract_layout", "generate_scenario", "parse", "plan", "render",
    "step", "validate_chain",
]
