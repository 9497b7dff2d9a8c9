"""Python access to the coordinate-conditioned merging lab."""

from ccm._core import (
    DigestMismatch,
    InvalidArgument,
    MissingArtifact,
    argmin_alpha,
    config_digest,
    continuation_bound,
    default_bank,
    line_points,
    run_pipeline,
    run_stage,
    select_coord,
    select_scale,
    split_protocol,
    stages,
    verify,
    wrong_sign,
)

__all__ = [
    "DigestMismatch",
    "InvalidArgument",
    "MissingArtifact",
    "argmin_alpha",
    "config_digest",
    "continuation_bound",
    "default_bank",
    "line_points",
    "run_pipeline",
    "run_stage",
    "select_coord",
    "select_scale",
    "split_protocol",
    "stages",
    "verify",
    "wrong_sign",
]
