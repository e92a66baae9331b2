"""Plain-JSON experiment configuration.

A config file fully determines an experiment: model, observable, index
family, block exponents and run parameters.  Schema version 1::

    {
      "schema_version": 1,
      "model": {"kind": "markov_chain", "states": [-1, 1],
                "transition": [[0.7, 0.3], [0.3, 0.7]]},
      "observable": {"name": "product_plus_half_sum"},
      "q_family": {"ell": 2, "k": 1, "fast": [{"coeff": 1, "degree": 2}]},
      "blocks": {"theta": 0.2, "tau": 0.45, "eta": 0.04},
      "run": {"horizon": 10000, "replicates": 200, "seed": 0,
              "step_factor": 1e-4}
    }

Observables are registered by name so that configs stay declarative; each
registry entry carries its argument count and regularity constants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from nonconv.models import ProcessModel, build_process
from nonconv.sums import ObservableSpec, QFamily

__all__ = [
    "SCHEMA_VERSION",
    "OBSERVABLES",
    "observable_by_name",
    "q_family_from_dict",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "canonical_config",
]

SCHEMA_VERSION = 1


def _make_identity():
    return ObservableSpec(lambda a: a, ell=1, growth_order=1, name="identity")


def _make_product():
    return ObservableSpec(lambda a, b: a * b, ell=2, growth_order=2, name="product")


def _make_product_plus_half_sum():
    return ObservableSpec(lambda a, b: a * b + 0.5 * (a + b), ell=2,
                          growth_const=1.0, growth_order=2,
                          name="product_plus_half_sum")


def _make_triple_product():
    return ObservableSpec(lambda a, b, c: a * b * c, ell=3, growth_order=3,
                          name="triple_product")


def _make_first_coordinate():
    return ObservableSpec(lambda a, b: a, ell=2, growth_order=1,
                          name="first_coordinate")


OBSERVABLES = {
    "identity": _make_identity,
    "product": _make_product,
    "product_plus_half_sum": _make_product_plus_half_sum,
    "triple_product": _make_triple_product,
    "first_coordinate": _make_first_coordinate,
}


def observable_by_name(name: str) -> ObservableSpec:
    if name not in OBSERVABLES:
        raise ValueError(f"unknown observable {name!r}; have {sorted(OBSERVABLES)}")
    return OBSERVABLES[name]()


def q_family_from_dict(d: dict) -> QFamily:
    fast = tuple(("power", int(f.get("coeff", 1)), int(f["degree"]))
                 for f in d.get("fast", ()))
    return QFamily(ell=int(d["ell"]), k=int(d["k"]), fast=fast)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ProcessModel
    observable: ObservableSpec
    qf: QFamily
    theta: float
    tau: float
    eta: float
    horizon: int
    replicates: int
    seed: int
    step_factor: float
    raw: dict = field(repr=False, default_factory=dict)


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate and materialise a config document."""
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    for key in ("model", "observable", "q_family"):
        if key not in doc:
            raise ValueError(f"config is missing the {key!r} section")
    model = build_process(doc["model"])
    obs = observable_by_name(doc["observable"]["name"])
    qf = q_family_from_dict(doc["q_family"])
    if qf.ell != obs.ell:
        raise ValueError(f"observable takes {obs.ell} arguments but the index "
                         f"family has {qf.ell} maps")
    blocks = doc.get("blocks", {})
    run = doc.get("run", {})
    return ExperimentConfig(
        model=model,
        observable=obs,
        qf=qf,
        theta=float(blocks.get("theta", 0.2)),
        tau=float(blocks.get("tau", 0.45)),
        eta=float(blocks.get("eta", 0.04)),
        horizon=int(run.get("horizon", 10_000)),
        replicates=int(run.get("replicates", 200)),
        seed=int(run.get("seed", 0)),
        step_factor=float(run.get("step_factor", 1e-4)),
        raw=doc,
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(json.load(fh))


def canonical_config(**overrides) -> ExperimentConfig:
    """The reference pipeline config: two-state chain, canonical observable,
    index maps (n, n^2)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "model": {"kind": "markov_chain", "states": [-1.0, 1.0],
                  "transition": [[0.7, 0.3], [0.3, 0.7]]},
        "observable": {"name": "product_plus_half_sum"},
        "q_family": {"ell": 2, "k": 1, "fast": [{"coeff": 1, "degree": 2}]},
        "blocks": {"theta": 0.2, "tau": 0.45, "eta": 0.04},
        "run": {"horizon": 10_000, "replicates": 200, "seed": 0,
                "step_factor": 1e-4},
    }
    for section, vals in overrides.items():
        if section not in doc or not isinstance(vals, dict):
            raise ValueError(f"unknown override section {section!r}")
        doc[section].update(vals)
    return parse_config(doc)
