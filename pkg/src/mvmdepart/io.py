"""JSON documents for networks, scenarios, distributions and subpath caches."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Any

import jsonschema
import numpy as np

from .departure import DepartureQuery
from .distribution import TravelTimeDistribution
from .extensions import DayPeriodModel, PhaseTypeArc, RecurrentArc, elapsed_posterior
from .link import GranularityBudget
from .model import Arc, ModelError, Network, NetworkState
from .path import EngineSettings, Path, SubpathCacheEntry, cache_key

NETWORK_FORMAT = "mvm-network"
SCENARIO_FORMAT = "mvm-scenario"
DISTRIBUTION_FORMAT = "mvm-distribution"
CACHE_FORMAT = "mvm-subpath-cache"
MASS_TOL = 1e-9


class DocumentError(ValueError):
    """Invalid input document; ``path`` locates the offending field."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_prob_open = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}

_TWO_STATE = {
    "type": "object",
    "required": ["id", "tail", "head", "length_km", "speed_free", "speed_incident", "onset_rate", "clearance_rate"],
    "properties": {
        "id": {"type": "string"},
        "tail": {"type": "string"},
        "head": {"type": "string"},
        "length_km": _pos,
        "speed_free": _pos,
        "speed_incident": _pos,
        "onset_rate": _pos,
        "clearance_rate": _pos,
        "period_speeds": {"type": "array", "items": {"type": "array", "items": _pos, "minItems": 2}},
    },
}
_PHASE_TYPE = {
    "type": "object",
    "required": ["id", "tail", "head", "length_km", "phase_type"],
    "properties": {
        "id": {"type": "string"},
        "tail": {"type": "string"},
        "head": {"type": "string"},
        "length_km": _pos,
        "phase_type": {
            "type": "object",
            "required": ["generator", "speeds"],
            "properties": {
                "generator": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "speeds": {"type": "array", "items": _pos, "minItems": 2},
            },
        },
        "period_speeds": {"type": "array", "items": {"type": "array", "items": _pos, "minItems": 2}},
    },
}
_INCIDENT = {
    "type": "object",
    "required": ["arc"],
    "properties": {"arc": {"type": "string"}, "elapsed": _nonneg, "phase": {"type": "integer", "minimum": 1}},
}
NETWORK_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "arcs"],
    "properties": {
        "format": {"const": NETWORK_FORMAT},
        "version": {"enum": [1, 2]},
        "nodes": {"type": "array", "items": {"type": "string"}},
        "arcs": {
            "type": "array",
            "items": {"if": {"type": "object", "required": ["phase_type"]}, "then": _PHASE_TYPE, "else": _TWO_STATE},
        },
        "day_model": {
            "type": "object",
            "required": ["means", "shapes"],
            "properties": {
                "means": {"type": "array", "items": _pos, "minItems": 1},
                "shapes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "period": {"type": "integer", "minimum": 0},
                "elapsed": _nonneg,
            },
        },
        "state": {
            "type": "object",
            "properties": {"timestamp": _nonneg, "incidents": {"type": "array", "items": _INCIDENT}},
        },
    },
}
SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "deadline", "reliability"],
    "properties": {
        "format": {"const": SCENARIO_FORMAT},
        "version": {"const": 1},
        "origin": {"type": "string"},
        "destination": {"type": "string"},
        "path": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "deadline": _pos,
        "reliability": _prob_open,
        "update_interval": _pos,
        "bisection_tol": _pos,
        "k": {"type": "integer", "minimum": 1},
        "eps_transition": _prob_open,
        "eps_distance": _prob_open,
        "delta_cap": _pos,
        "bins": {"type": "integer", "minimum": 1},
        "representative": {"enum": ["mean", "upper"]},
        "pin_mass": {"type": "number", "minimum": 0, "maximum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "samples": {"type": "integer", "minimum": 1},
        "replications": {"type": "integer", "minimum": 1},
        "metric": {"enum": ["km", "time"]},
    },
}
DISTRIBUTION_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "atoms"],
    "properties": {
        "format": {"const": DISTRIBUTION_FORMAT},
        "version": {"const": 1},
        "atoms": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2},
        },
        "binned": {"type": "boolean"},
        "bin_count": {"type": ["integer", "null"]},
    },
}
_DIST_BODY = {k: v for k, v in DISTRIBUTION_SCHEMA["properties"].items() if k not in ("format", "version")}
CACHE_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "arcs", "deltas", "bins", "states"],
    "properties": {
        "format": {"const": CACHE_FORMAT},
        "version": {"const": 1},
        "arcs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "deltas": {"type": "array", "items": _pos},
        "bins": {"type": "integer", "minimum": 1},
        "representative": {"enum": ["mean", "upper"]},
        "pin_mass": {"type": "number", "minimum": 0, "maximum": 1},
        "states": {
            "type": "object",
            "additionalProperties": {"type": "object", "required": ["atoms"], "properties": _DIST_BODY},
        },
        "pruned": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 1}}},
    },
}


def _strict(schema: Any) -> Any:
    """Copy of ``schema`` in which every object rejects unknown keys."""
    schema = copy.deepcopy(schema)

    def walk(node):
        if isinstance(node, dict):
            if node.get("type") == "object" and "properties" in node and "additionalProperties" not in node:
                node["additionalProperties"] = False
            for value in node.values():
                walk(value)
        elif isinstance(node, list):
            for value in node:
                walk(value)

    walk(schema)
    return schema


def _where(error: jsonschema.ValidationError) -> str:
    out = "$"
    for part in error.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def validate_document(doc: Any, schema: dict, strict: bool = False) -> None:
    validator = jsonschema.Draft202012Validator(_strict(schema) if strict else schema)
    best = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if best is not None:
        raise DocumentError(best.message, _where(best))


def _load(text_or_doc) -> Any:
    if isinstance(text_or_doc, (str, bytes)):
        try:
            return json.loads(text_or_doc)
        except json.JSONDecodeError as exc:
            raise DocumentError(f"invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return text_or_doc


# --------------------------------------------------------------------------
# Networks
# --------------------------------------------------------------------------


@dataclass
class NetworkDocument:
    network: Network
    state: NetworkState
    day: DayPeriodModel | None = None
    day_belief: np.ndarray | None = None
    incidents: list = field(default_factory=list)


def parse_network(text_or_doc, strict: bool = False) -> NetworkDocument:
    doc = _load(text_or_doc)
    validate_document(doc, NETWORK_SCHEMA, strict)
    version = doc["version"]
    day = None
    belief = None
    if "day_model" in doc:
        if version < 2:
            raise DocumentError("day_model requires version 2", "$.day_model")
        dm = doc["day_model"]
        try:
            day = DayPeriodModel(tuple(dm["means"]), tuple(dm["shapes"]))
            belief = day.belief(dm.get("period", 0), dm.get("elapsed", 0.0))
        except ModelError as exc:
            raise DocumentError(str(exc), "$.day_model") from exc
    arcs = []
    for i, item in enumerate(doc["arcs"]):
        where = f"$.arcs[{i}]"
        try:
            if "phase_type" in item:
                if version < 2:
                    raise DocumentError("phase_type arcs require version 2", where)
                pt = item["phase_type"]
                arc = PhaseTypeArc(item["id"], item["tail"], item["head"], item["length_km"],
                                   tuple(map(tuple, pt["generator"])), tuple(pt["speeds"]))
            else:
                arc = Arc(item["id"], item["tail"], item["head"], item["length_km"], item["speed_free"],
                          item["speed_incident"], item["onset_rate"], item["clearance_rate"])
            if "period_speeds" in item:
                if day is None:
                    raise DocumentError("period_speeds need a day_model", where)
                arc = RecurrentArc(arc, tuple(map(tuple, item["period_speeds"])))
        except ModelError as exc:
            raise DocumentError(str(exc), where) from exc
        arcs.append(arc)
    try:
        network = Network(arcs, doc.get("nodes"))
    except ModelError as exc:
        raise DocumentError(str(exc), "$.arcs") from exc
    st = doc.get("state", {})
    phases = {a.id: 1 for a in arcs}
    beliefs = {}
    incidents = []
    for i, inc in enumerate(st.get("incidents", [])):
        where = f"$.state.incidents[{i}]"
        if inc["arc"] not in network:
            raise DocumentError(f"unknown arc {inc['arc']!r}", where + ".arc")
        arc = network.arc(inc["arc"])
        if "phase" in inc:
            if strict:
                raise DocumentError("sub-phases are not observable; give the elapsed duration", where + ".phase")
            if inc["phase"] > arc.n_phases:
                raise DocumentError(f"phase outside 1..{arc.n_phases}", where + ".phase")
            phases[arc.id] = inc["phase"]
        else:
            elapsed = inc.get("elapsed", 0.0)
            base = arc.base if isinstance(arc, RecurrentArc) else arc
            if isinstance(base, PhaseTypeArc):
                vec = elapsed_posterior(base, elapsed)
                phases[arc.id] = int(np.argmax(vec)) + 1
                beliefs[arc.id] = tuple(vec)
            else:
                phases[arc.id] = 2
        incidents.append(dict(inc))
    state = NetworkState(phases, st.get("timestamp", 0.0), beliefs)
    return NetworkDocument(network, state, day, belief, incidents)


def _arc_doc(arc) -> dict:
    extra = {}
    if isinstance(arc, RecurrentArc):
        extra["period_speeds"] = [list(row) for row in arc.period_speeds]
        arc = arc.base
    out = {"id": arc.id, "tail": arc.tail, "head": arc.head, "length_km": arc.length_km}
    if isinstance(arc, PhaseTypeArc):
        out["phase_type"] = {"generator": [list(r) for r in arc.generator], "speeds": list(arc.speeds)}
    else:
        out.update(speed_free=arc.speed_free, speed_incident=arc.speed_incident, onset_rate=arc.onset_rate,
                   clearance_rate=arc.clearance_rate)
    out.update(extra)
    return out


def serialize_network(parsed: NetworkDocument, day_model_block: dict | None = None) -> dict:
    arcs = parsed.network.arcs
    extended = parsed.day is not None or any(
        isinstance(a, (PhaseTypeArc, RecurrentArc)) for a in arcs
    )
    doc = {
        "format": NETWORK_FORMAT,
        "version": 2 if extended else 1,
        "nodes": sorted(parsed.network.nodes),
        "arcs": [_arc_doc(a) for a in arcs],
    }
    if parsed.day is not None:
        block = {"means": list(parsed.day.means), "shapes": list(parsed.day.shapes)}
        block.update(day_model_block or {})
        doc["day_model"] = block
    state: dict = {}
    if parsed.state.timestamp:
        state["timestamp"] = parsed.state.timestamp
    if parsed.incidents:
        state["incidents"] = [dict(i) for i in parsed.incidents]
    else:
        incidents = [{"arc": a.id, "elapsed": 0.0} for a in arcs if parsed.state.phase(a.id) != 1]
        if incidents:
            state["incidents"] = incidents
    if state:
        doc["state"] = state
    return doc


# --------------------------------------------------------------------------
# Scenarios
# --------------------------------------------------------------------------


@dataclass
class Scenario:
    raw: dict

    def get(self, key, default=None):
        return self.raw.get(key, default)

    @property
    def query(self) -> DepartureQuery:
        r = self.raw
        return DepartureQuery(r["deadline"], r["reliability"], r.get("update_interval"), r.get("bisection_tol", 1e-4))

    @property
    def settings(self) -> EngineSettings:
        r = self.raw
        budget = GranularityBudget(r.get("eps_transition", 0.01), r.get("eps_distance", 0.01), r.get("delta_cap"))
        return EngineSettings(budget, r.get("bins", 100), r.get("representative", "mean"), r.get("pin_mass", 0.005))

    def path(self, network: Network) -> Path:
        if "path" not in self.raw:
            raise DocumentError("scenario needs a path", "$.path")
        try:
            return Path.from_arcs(network, self.raw["path"])
        except ModelError as exc:
            raise DocumentError(str(exc), "$.path") from exc

    def od(self, network: Network) -> tuple[str, str]:
        for key in ("origin", "destination"):
            if key not in self.raw:
                raise DocumentError(f"scenario needs {key}", f"$.{key}")
            if self.raw[key] not in network.nodes:
                raise DocumentError(f"unknown node {self.raw[key]!r}", f"$.{key}")
        return self.raw["origin"], self.raw["destination"]


def parse_scenario(text_or_doc, strict: bool = False) -> Scenario:
    doc = _load(text_or_doc)
    validate_document(doc, SCENARIO_SCHEMA, strict)
    return Scenario(dict(doc))


# --------------------------------------------------------------------------
# Distributions and caches
# --------------------------------------------------------------------------


def distribution_to_doc(dist: TravelTimeDistribution) -> dict:
    return {
        "format": DISTRIBUTION_FORMAT,
        "version": 1,
        "atoms": [[t, p] for t, p in dist.atoms],
        "binned": bool(dist.binned),
        "bin_count": dist.bin_count,
    }


def _dist_from_body(body: dict) -> TravelTimeDistribution:
    atoms = body["atoms"]
    return TravelTimeDistribution(
        np.array([a[0] for a in atoms], dtype=float),
        np.array([a[1] for a in atoms], dtype=float),
        body.get("binned", False),
        body.get("bin_count"),
    )


def distribution_from_doc(text_or_doc, strict: bool = False) -> TravelTimeDistribution:
    doc = _load(text_or_doc)
    validate_document(doc, DISTRIBUTION_SCHEMA, strict)
    try:
        dist = _dist_from_body(doc)
    except ValueError as exc:
        raise DocumentError(str(exc), "$.atoms") from exc
    if abs(float(dist.probs.sum()) - 1.0) > MASS_TOL:
        raise DocumentError(f"atom probabilities sum to {dist.probs.sum():.12g}, not 1", "$.atoms")
    return dist


def _joint_key(joint) -> str:
    return ",".join(str(int(x)) for x in joint)


def cache_to_doc(network: Network, entry: SubpathCacheEntry) -> dict:
    key = cache_key(network, entry)
    return {
        "format": CACHE_FORMAT,
        "version": 1,
        **key,
        "representative": entry.settings.representative,
        "pin_mass": entry.settings.pin_mass,
        "states": {
            _joint_key(j): {k: v for k, v in distribution_to_doc(d).items() if k not in ("format", "version")}
            for j, d in sorted(entry.distributions.items())
        },
        "pruned": [list(j) for j in sorted(entry.pruned_states)],
    }


def cache_from_doc(text_or_doc, network: Network, settings: EngineSettings, strict: bool = False) -> SubpathCacheEntry:
    """Load a cache document; it must match ``settings`` (step sizes and bins)."""
    doc = _load(text_or_doc)
    validate_document(doc, CACHE_SCHEMA, strict)
    try:
        subpath = Path.from_arcs(network, doc["arcs"])
    except ModelError as exc:
        raise DocumentError(str(exc), "$.arcs") from exc
    settings = EngineSettings(settings.budget, doc["bins"], doc.get("representative", settings.representative),
                              doc.get("pin_mass", settings.pin_mass))
    probe = SubpathCacheEntry(subpath, settings, {})
    expected = cache_key(network, probe)["deltas"]
    if not np.allclose(expected, doc["deltas"], rtol=1e-12, atol=0):
        raise DocumentError("cached step sizes do not match the network and budget", "$.deltas")
    dists = {}
    for key, body in doc["states"].items():
        joint = tuple(int(x) for x in key.split(","))
        if len(joint) != len(subpath):
            raise DocumentError("joint state has the wrong length", f"$.states.{key}")
        dists[joint] = _dist_from_body(body)
    pruned = frozenset(tuple(j) for j in doc.get("pruned", []))
    try:
        return SubpathCacheEntry(subpath, settings, dists, pruned)
    except ValueError as exc:
        raise DocumentError(str(exc), "$.pruned") from exc


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"
