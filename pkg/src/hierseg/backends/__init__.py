"""Segmenter backends: rule-based toys, the remote protocol client, and builders."""

from __future__ import annotations

from functools import partial

from ..errors import ConfigError
from .base import (
    BlockDarknessBackend,
    ColorRule,
    ColorRuleBackend,
    ColorRuleSet,
    ConstantBackend,
    DarknessBackend,
    SegmenterBackend,
    block_darkness_segment,
    color_rule_segment,
    darkness_damage_segment,
    one_hot_scores,
    pixel_luma,
)
from .remote import (
    BackendConnection,
    ByteStream,
    RemoteBackend,
    connect_tcp,
    remote_infer,
    spawn_stdio,
)

__all__ = [
    "BackendConnection",
    "BlockDarknessBackend",
    "ByteStream",
    "ColorRule",
    "ColorRuleBackend",
    "ColorRuleSet",
    "ConstantBackend",
    "DarknessBackend",
    "RemoteBackend",
    "SegmenterBackend",
    "block_darkness_segment",
    "build_backend",
    "color_rule_segment",
    "connect_tcp",
    "darkness_damage_segment",
    "one_hot_scores",
    "pixel_luma",
    "remote_infer",
    "spawn_stdio",
]


def _color_rules_from_params(params: dict) -> ColorRuleSet:
    rules = []
    for i, doc in enumerate(params.get("rules", ())):
        try:
            tol = doc.get("tolerance", 0)
            if isinstance(tol, (int, float)):
                tol = (int(tol),) * 3
            rules.append(
                ColorRule(
                    color=tuple(int(v) for v in doc["color"]),
                    tolerance=tuple(int(v) for v in tol),
                    class_index=int(doc["class_index"]),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"color rule #{i} is malformed: {e}") from e
    return ColorRuleSet(rules=tuple(rules), default_class=int(params.get("default_class", 0)))


def build_backend(spec: dict, task: str, num_classes: int) -> SegmenterBackend:
    """Instantiate a backend from its config entry {name, kind, params...}."""
    name = spec.get("name")
    kind = spec.get("kind")
    if not name or not kind:
        raise ConfigError(f"backend entry needs 'name' and 'kind': {spec}")
    params = spec.get("params", {})
    if kind == "color_rule":
        return ColorRuleBackend(name, task, num_classes, _color_rules_from_params(params))
    if kind == "darkness":
        return DarknessBackend(
            name,
            luma_threshold=params.get("luma_threshold", 60),
            rebar_color=tuple(params.get("rebar_color", (185, 80, 35))),
            rebar_tolerance=params.get("rebar_tolerance", 12),
            task=task,
        )
    if kind == "block_darkness":
        return BlockDarknessBackend(
            name,
            luma_threshold=params.get("luma_threshold", 60),
            rebar_color=tuple(params.get("rebar_color", (185, 80, 35))),
            rebar_tolerance=params.get("rebar_tolerance", 12),
            block_size=params.get("block_size", 2),
            task=task,
        )
    if kind == "constant":
        return ConstantBackend(
            name,
            task,
            num_classes,
            class_index=params.get("class_index", 0),
            score=params.get("score", 1.0),
        )
    if kind == "remote":
        endpoint = params.get("endpoint", {})
        transport = endpoint.get("transport")
        if transport == "tcp":
            factory = partial(connect_tcp, endpoint["host"], int(endpoint["port"]))
        elif transport == "stdio":
            factory = partial(spawn_stdio, list(endpoint["command"]))
        else:
            raise ConfigError(
                f"backend {name!r}: endpoint.transport must be 'tcp' or 'stdio', "
                f"got {transport!r}"
            )
        return RemoteBackend(
            name,
            task,
            num_classes,
            stream_factory=factory,
            max_tile=int(params.get("max_tile", 4096)),
            pool_size=int(params.get("pool_size", 1)),
        )
    raise ConfigError(f"backend {name!r} has unknown kind {kind!r}")
