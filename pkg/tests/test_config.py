import json

import numpy as np
import pytest

from nonconv.config import (
    SCHEMA_VERSION,
    OBSERVABLES,
    observable_by_name,
    q_family_from_dict,
    parse_config,
    load_config,
    canonical_config,
)


def _doc(**kw):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "model": {"kind": "markov_chain", "states": [-1.0, 1.0],
                  "transition": [[0.7, 0.3], [0.3, 0.7]]},
        "observable": {"name": "product_plus_half_sum"},
        "q_family": {"ell": 2, "k": 1, "fast": [{"coeff": 1, "degree": 2}]},
    }
    doc.update(kw)
    return doc


def test_canonical_config_shape():
    cfg = canonical_config()
    assert cfg.model.kind == "markov_chain"
    assert cfg.observable.name == "product_plus_half_sum"
    assert cfg.qf.ell == 2 and cfg.qf.k == 1
    assert (cfg.theta, cfg.tau, cfg.eta) == (0.2, 0.45, 0.04)
    assert cfg.horizon == 10_000 and cfg.replicates == 200 and cfg.seed == 0
    # the exponent gate the block construction needs
    assert 4 * cfg.eta < 2 * cfg.theta < cfg.tau < 0.5


def test_canonical_config_overrides():
    cfg = canonical_config(run={"horizon": 77, "seed": 3},
                           blocks={"theta": 0.05, "tau": 0.49, "eta": 0.02})
    assert cfg.horizon == 77 and cfg.seed == 3
    assert (cfg.theta, cfg.tau, cfg.eta) == (0.05, 0.49, 0.02)
    with pytest.raises(ValueError, match="unknown override section"):
        canonical_config(runs={"horizon": 5})


def test_parse_rejects_wrong_schema_version():
    with pytest.raises(ValueError, match="schema_version"):
        parse_config(_doc(schema_version=2))
    with pytest.raises(ValueError, match="schema_version"):
        parse_config({k: v for k, v in _doc().items() if k != "schema_version"})


def test_parse_rejects_missing_sections():
    for key in ("model", "observable", "q_family"):
        doc = {k: v for k, v in _doc().items() if k != key}
        with pytest.raises(ValueError, match=key):
            parse_config(doc)


def test_parse_rejects_arity_mismatch():
    doc = _doc()
    doc["q_family"] = {"ell": 3, "k": 1,
                       "fast": [{"degree": 2}, {"degree": 3}]}
    with pytest.raises(ValueError, match="arguments"):
        parse_config(doc)


def test_parse_rejects_unknown_observable():
    doc = _doc()
    doc["observable"] = {"name": "no_such_thing"}
    with pytest.raises(ValueError, match="unknown observable"):
        parse_config(doc)


def test_observable_registry_arities():
    for name in OBSERVABLES:
        spec = observable_by_name(name)
        assert spec.name == name
        x = [0.5] * spec.ell
        assert np.isfinite(float(spec.f(*x)))


def test_q_family_from_dict_defaults_coeff():
    qf = q_family_from_dict({"ell": 2, "k": 1, "fast": [{"degree": 2}]})
    assert qf.fast == (("power", 1, 2),)
    n = np.array([3], dtype=np.int64)
    assert int(qf.index(2, n)[0]) == 9


def test_load_config_round_trip(tmp_path):
    p = tmp_path / "exp.json"
    doc = _doc(run={"horizon": 500, "replicates": 7, "seed": 11})
    p.write_text(json.dumps(doc))
    cfg = load_config(p)
    assert cfg.horizon == 500 and cfg.replicates == 7 and cfg.seed == 11
    assert cfg.raw["run"]["horizon"] == 500
    # defaults fill unspecified run keys
    assert cfg.step_factor == 1e-4
