"""Structured LLM routing runtime and full-factorial cross-backend benchmark harness."""

__version__ = "0.1.0"

SCHEMA_VERSIONS = {
    "control_record": "1",
    "prompt_pool": "1",
    "outcome_log": "1",
    "simulator_profiles": "1",
    "metric_tables": "1",
    "policy": "1",
}
