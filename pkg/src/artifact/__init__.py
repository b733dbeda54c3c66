"""Fuse IDS alerts into time-windowed multilayer artifact graphs and flag
windows with anomalous role dynamics.

The pipeline: parse Snort/OSSEC alert logs into normalized records, build one
co-occurrence graph of alert field values per time window, extract recursive
structural features per node, factorize the training window's node-feature
matrix into roles (KL-NMF with description-length model selection), then track
each node's maximum role-membership probability across windows and score every
window by the average absolute change.
"""

__version__ = "0.1.0"

from artifact.ingest import (
    AlertRecord,
    HostMap,
    WindowSpec,
    parse_snort_fast,
    parse_ossec_block,
    normalize_record,
    window_partition,
)
from artifact.graph import ArtifactGraph, build_graph, graph_summary
from artifact.features import FeatureMatrix, FeatureSchema, apply_schema, fit_schema
from artifact.roles import (
    Membership,
    RoleModel,
    memberships_fixed_F,
    nmf_kl,
    select_model,
)
from artifact.dynamics import (
    MembershipSeries,
    NodeRegistry,
    detect_anomalies,
    role_change_score,
    score_windows,
    update_series,
)
from artifact.scenario import ScenarioConfig, default_scenario, generate_scenario
from artifact.pipeline import PipelineConfig, load_pipeline_config, score, train
from artifact.cli import main

__all__ = [
    "AlertRecord",
    "HostMap",
    "WindowSpec",
    "parse_snort_fast",
    "parse_ossec_block",
    "normalize_record",
    "window_partition",
    "ArtifactGraph",
    "build_graph",
    "graph_summary",
    "FeatureMatrix",
    "FeatureSchema",
    "apply_schema",
    "fit_schema",
    "Membership",
    "RoleModel",
    "memberships_fixed_F",
    "nmf_kl",
    "select_model",
    "MembershipSeries",
    "NodeRegistry",
    "detect_anomalies",
    "role_change_score",
    "score_windows",
    "update_series",
    "ScenarioConfig",
    "default_scenario",
    "generate_scenario",
    "PipelineConfig",
    "load_pipeline_config",
    "score",
    "train",
    "main",
]
