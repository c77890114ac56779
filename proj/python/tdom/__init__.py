from ._tdom import (
    ConfigError,
    RuntimeFailure,
    RunConfig,
    compliance,
    config_hash,
    contact_force,
    default_config,
    dump_config,
    evaluate_oracle,
    heatmap,
    load_config,
    oracle_best,
    parse_config,
)

__all__ = [
    "ConfigError",
    "RuntimeFailure",
    "RunConfig",
    "compliance",
    "config_hash",
    "contact_force",
    "default_config",
    "dump_config",
    "evaluate_oracle",
    "heatmap",
    "load_config",
    "oracle_best",
    "parse_config",
]
