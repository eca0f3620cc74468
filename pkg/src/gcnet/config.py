"""Pipeline configuration: one YAML document covering every stage.

The document is a mapping with a top-level ``problem`` and root ``seed``
plus one section per stage.  Section keys mirror the corresponding stage
dataclass fields, and anything omitted falls back to that dataclass's
default, so the empty document is a complete desk-scale configuration.
Physical constants live under ``constants`` and map onto the problem
factory keywords; their defaults are the published problem values.

The root seed is split deterministically into independent per-stage seeds
(a stage section may still pin its own ``seed`` explicitly).
"""

from __future__ import annotations

import dataclasses
import inspect
from dataclasses import dataclass, field

import numpy as np
import yaml

from .bgoe import BgoeConfig
from .cloning import TrainConfig
from .dagger import DaggerConfig
from .errors import ConfigError
from .problems import (ProblemDefinition, get_problem, landing_problem,
                       transfer_problem)
from .refine import RefineConfig
from .shooting import SolveConfig, continuation_schedule

STAGES = ("solve", "generate", "clone", "refine_node", "refine_dagger",
          "evaluate")

_GENERATE_KEYS = {"bc_bundles", "refine_bundle", "val_fraction"}
_CONTINUATION_KEYS = {"start", "ratio", "floor"}
_EVALUATE_KEYS = {"rel_tol"}
_CLONE_EXTRA_KEYS = {"hidden"}


def _field_names(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(section: str, mapping: dict, allowed: set) -> None:
    if not isinstance(mapping, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}; "
                          f"valid: {sorted(allowed)}")


def _default_generate(problem: str) -> dict:
    """Per-problem bundle recipe: wide+narrow cloning bundles plus a
    separate narrow bundle split into refinement train/validation sets."""
    if problem == "transfer":
        bc = [{"delta": 1e-3, "a": 1.0, "c_max": 0.07, "count": 256},
              {"delta": 0.08, "a": 1.0, "c_max": 0.07, "count": 256}]
        refine = {"delta": 1e-3, "a": 1.0, "c_max": 0.0, "count": 200}
    else:
        bc = [{"delta": 1e-3, "a": 1.0, "c_max": 0.05, "count": 192},
              {"delta": 8e-3, "a": 0.8, "c_max": 0.05, "count": 192},
              {"delta": 0.02, "a": 0.5, "c_max": 0.05, "count": 192}]
        refine = {"delta": 5e-4, "a": 1.0, "c_max": 0.0, "count": 200}
    return {"bc_bundles": bc, "refine_bundle": refine, "val_fraction": 0.5}


@dataclass(frozen=True)
class PipelineConfig:
    """Validated configuration; stage sections are plain override mappings."""

    problem: str = "transfer"
    seed: int = 0
    constants: dict = field(default_factory=dict)
    solve: dict = field(default_factory=dict)
    continuation: dict = field(default_factory=dict)
    generate: dict = field(default_factory=dict)
    clone: dict = field(default_factory=dict)
    refine_node: dict = field(default_factory=dict)
    dagger: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.problem not in ("transfer", "landing"):
            raise ConfigError(f"unknown problem kind {self.problem!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) \
                or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        factory = (transfer_problem if self.problem == "transfer"
                   else landing_problem)
        _check_keys("constants", self.constants,
                    set(inspect.signature(factory).parameters))
        _check_keys("solve", self.solve, _field_names(SolveConfig))
        _check_keys("continuation", self.continuation, _CONTINUATION_KEYS)
        _check_keys("generate", self.generate, _GENERATE_KEYS)
        gen = {**_default_generate(self.problem), **self.generate}
        if not isinstance(gen["bc_bundles"], (list, tuple)) \
                or not gen["bc_bundles"]:
            raise ConfigError("generate.bc_bundles must be a nonempty list")
        for i, spec in enumerate(gen["bc_bundles"]):
            _check_keys(f"generate.bc_bundles[{i}]", spec,
                        _field_names(BgoeConfig))
        _check_keys("generate.refine_bundle", gen["refine_bundle"],
                    _field_names(BgoeConfig))
        if not 0.0 < float(gen["val_fraction"]) < 1.0:
            raise ConfigError("generate.val_fraction must lie in (0, 1)")
        _check_keys("clone", self.clone,
                    _field_names(TrainConfig) | _CLONE_EXTRA_KEYS)
        _check_keys("refine_node", self.refine_node,
                    _field_names(RefineConfig))
        _check_keys("dagger", self.dagger, _field_names(DaggerConfig))
        if "solve" in self.dagger:
            _check_keys("dagger.solve", self.dagger["solve"],
                        _field_names(SolveConfig))
        if "retrain" in self.dagger:
            _check_keys("dagger.retrain", self.dagger["retrain"],
                        _field_names(TrainConfig))
        _check_keys("evaluate", self.evaluate, _EVALUATE_KEYS)

    # -- seeds -----------------------------------------------------------------

    def stage_seed(self, stage: str, index: int = 0) -> int:
        """Deterministic child seed for one stage (and sub-stream index)."""
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}")
        ss = np.random.SeedSequence(self.seed,
                                    spawn_key=(STAGES.index(stage), index))
        return int(ss.generate_state(1, np.uint32)[0])

    def _seeded(self, section: dict, stage: str, index: int = 0) -> dict:
        out = dict(section)
        out.setdefault("seed", self.stage_seed(stage, index))
        return out

    # -- stage builders ----------------------------------------------------------

    def build_problem(self) -> ProblemDefinition:
        return get_problem(self.problem, self.constants)

    def solve_config(self) -> SolveConfig:
        return SolveConfig(**self._seeded(self.solve, "solve"))

    def continuation_values(self) -> tuple:
        return continuation_schedule(**self.continuation)

    def _generate_section(self) -> dict:
        return {**_default_generate(self.problem), **self.generate}

    def bc_bundle_configs(self) -> list:
        gen = self._generate_section()
        return [BgoeConfig(**self._seeded(spec, "generate", index=i))
                for i, spec in enumerate(gen["bc_bundles"])]

    def refine_bundle_config(self) -> BgoeConfig:
        gen = self._generate_section()
        return BgoeConfig(**self._seeded(gen["refine_bundle"], "generate",
                                         index=len(gen["bc_bundles"])))

    def val_fraction(self) -> float:
        return float(self._generate_section()["val_fraction"])

    def split_seed(self) -> int:
        gen = self._generate_section()
        return self.stage_seed("generate", index=len(gen["bc_bundles"]) + 1)

    def hidden_layers(self) -> tuple:
        hidden = self.clone.get("hidden", (32, 32, 32))
        if isinstance(hidden, int) or not all(
                isinstance(h, int) and h >= 1 for h in hidden):
            raise ConfigError("clone.hidden must be a list of positive ints")
        return tuple(hidden)

    def train_config(self) -> TrainConfig:
        section = {k: v for k, v in self.clone.items() if k != "hidden"}
        return TrainConfig(**self._seeded(section, "clone"))

    def refine_config(self) -> RefineConfig:
        section = dict(self.refine_node)
        if section.get("state_weights") is not None:
            section["state_weights"] = np.asarray(section["state_weights"],
                                                  dtype=float)
        return RefineConfig(**self._seeded(section, "refine_node"))

    def dagger_config(self) -> DaggerConfig:
        section = self._seeded(self.dagger, "refine_dagger")
        if "solve" in section:
            section["solve"] = SolveConfig(
                **self._seeded(section["solve"], "refine_dagger", index=1))
        if "retrain" in section:
            section["retrain"] = TrainConfig(
                **self._seeded(section["retrain"], "refine_dagger", index=2))
        return DaggerConfig(**section)

    def eval_rel_tol(self) -> float:
        rel_tol = float(self.evaluate.get("rel_tol", 1e-9))
        if rel_tol <= 0.0:
            raise ConfigError("evaluate.rel_tol must be positive")
        return rel_tol


def load_config(path) -> PipelineConfig:
    """Parse a YAML pipeline configuration file."""
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    allowed = _field_names(PipelineConfig)
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {unknown}; "
                          f"valid: {sorted(allowed)}")
    try:
        return PipelineConfig(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad config structure: {exc}") from exc


def _constants_document(cfg: PipelineConfig) -> dict:
    factory = (transfer_problem if cfg.problem == "transfer"
               else landing_problem)
    out = {}
    for name, param in inspect.signature(factory).parameters.items():
        value = cfg.constants.get(name, param.default)
        out[name] = list(value) if isinstance(value, (tuple, list)) else value
    return out


def resolved_document(cfg: PipelineConfig) -> dict:
    """Fully-populated configuration: every default made explicit.

    This is the document the run manifest hashes, so two configs that
    resolve to the same stage parameters share a hash regardless of which
    defaults they spelled out.
    """
    doc = {
        "problem": cfg.problem,
        "seed": cfg.seed,
        "constants": _constants_document(cfg),
        "solve": dataclasses.asdict(cfg.solve_config()),
        "generate": {
            "bc_bundles": [dataclasses.asdict(b)
                           for b in cfg.bc_bundle_configs()],
            "refine_bundle": dataclasses.asdict(cfg.refine_bundle_config()),
            "val_fraction": cfg.val_fraction(),
            "split_seed": cfg.split_seed(),
        },
        "clone": {**dataclasses.asdict(cfg.train_config()),
                  "hidden": list(cfg.hidden_layers())},
        "refine_node": dataclasses.asdict(cfg.refine_config()),
        "dagger": dataclasses.asdict(cfg.dagger_config()),
        "evaluate": {"rel_tol": cfg.eval_rel_tol()},
    }
    if cfg.problem == "landing":
        doc["continuation"] = list(cfg.continuation_values())
    return doc
