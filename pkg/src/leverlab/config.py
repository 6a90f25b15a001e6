"""Run configuration loading.

Key-value INI text: a [run] section with the RunConfig keys, one
[backend.<role>] section per live backend, and an optional [mock] section
pointing at a tuned schedule. Secrets come only from environment variables
named in the backend sections.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .model import (
    BackendEndpoint,
    InterventionDirection,
    LeverConcept,
    LeverlabError,
    Percept,
    RunConfig,
    parse_family,
)


class ConfigError(LeverlabError):
    pass


def load_config(path: str | Path) -> tuple[RunConfig, Path | None]:
    """Parse a config file into (RunConfig, optional mock schedule path)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config {path}: {exc}") from exc

    run = parser["run"] if parser.has_section("run") else {}

    def get(key: str, cast, default):
        raw = run.get(key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for [run] {key}: {raw!r}") from exc

    percept = Percept(
        name=get("percept", str, "safety"),
        scale_min=get("scale_min", float, 0.0),
        scale_max=get("scale_max", float, 10.0),
    )

    backends: dict[str, BackendEndpoint] = {}
    for section in parser.sections():
        if not section.startswith("backend."):
            continue
        role = section.split(".", 1)[1]
        values = parser[section]
        if "endpoint" not in values:
            raise ConfigError(f"[{section}] is missing the endpoint key")
        backends[role] = BackendEndpoint(
            url=values["endpoint"],
            model=values.get("model", ""),
            auth_token_env=values.get("auth_token_env", ""),
            timeout_ms=values.getint("timeout_ms", 30_000),
            max_in_flight=values.getint("max_in_flight", 4),
        )

    extra_concepts: list[LeverConcept] = []
    if parser.has_section("extra_concepts"):
        for concept_id, spec in parser["extra_concepts"].items():
            try:
                family_text, direction_text, display = (
                    part.strip() for part in spec.split("|", 2))
                extra_concepts.append(LeverConcept(
                    concept_id, parse_family(family_text), display,
                    InterventionDirection(direction_text), canonical=False))
            except ValueError as exc:
                raise ConfigError(
                    f"bad extra concept {concept_id!r}: expected "
                    f"'family|direction|display name'") from exc

    try:
        config = RunConfig(
            K=get("k", int, 5),
            T=get("t", int, 5),
            theta_aux=get("theta_aux", float, 0.1),
            bootstrap_B=get("bootstrap_b", int, 10_000),
            confidence_z=get("confidence_z", float, 1.96),
            master_seed=get("master_seed", int, 20_250_101),
            percept=percept,
            backends=backends,
            workers=get("workers", int, 1),
            raters_per_pair=get("raters_per_pair", int, 2),
            taxonomy_rule=get("taxonomy_rule", str, "final_attempt"),
            strict_backend_accounting=get("strict_backend_accounting",
                                          lambda v: v.lower() == "true", False),
            score_rejected=get("score_rejected",
                               lambda v: v.lower() == "true", False),
            fsync=get("fsync", lambda v: v.lower() == "true", False),
            extra_concepts=tuple(extra_concepts),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    schedule_path: Path | None = None
    if parser.has_section("mock") and parser["mock"].get("schedule"):
        schedule_path = (path.parent / parser["mock"]["schedule"]).resolve()
        if not schedule_path.is_file():
            raise ConfigError(f"mock schedule not found: {schedule_path}")

    return config, schedule_path
