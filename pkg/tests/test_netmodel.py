import copy
import json
import os
from pathlib import Path

import networkx as nx
import numpy as np
import pytest

from robust_envelopes.models import CustomerKind, CustomerRecord, Phase
from robust_envelopes.netmodel import (
    NetworkParseError,
    NetworkValidationError,
    bundled_network_path,
    incidence,
    load_network,
    parse_network,
    random_radial_network,
    save_network,
)


@pytest.fixture
def raw_twobus():
    return json.loads(bundled_network_path().read_text(encoding="utf-8"))


def test_bundled_network_structure(twobus):
    assert twobus.name == "twobus"
    assert twobus.reference.id == "1"
    assert twobus.bfs_order == ["2"]
    assert [c.id for c in twobus.active] == ["1", "3"]
    assert [c.id for c in twobus.passive] == ["2"]
    assert twobus.z_base == pytest.approx(52.9)
    assert twobus.line("1-2").z[0, 1] == complex(0.15, 0.25)
    assert abs(twobus.v_ref[1] - np.exp(-2j * np.pi / 3)) < 1e-12


def test_random_feeder_is_a_tree(feeder10):
    assert len(feeder10.buses) == 10
    assert len(feeder10.lines) == 9
    assert nx.is_tree(feeder10.graph)
    assert len(feeder10.active) == 9 and len(feeder10.passive) == 9


def test_random_feeder_is_reproducible():
    a = random_radial_network(8, seed=11)
    b = random_radial_network(8, seed=11)
    assert [ln.id for ln in a.lines] == [ln.id for ln in b.lines]
    assert all(np.array_equal(x.z, y.z) for x, y in zip(a.lines, b.lines))


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_incidence_is_unimodular(seed):
    network = random_radial_network(10, seed=seed)
    mat, ordering = incidence(network)
    assert mat.shape == (9, 9)
    assert round(abs(np.linalg.det(mat))) == 1
    assert ordering.buses == tuple(network.bfs_order)


def test_save_and_load(tmp_path, feeder10):
    path = save_network(feeder10, tmp_path / "feeder.json")
    loaded = load_network(path)
    assert [b.id for b in loaded.buses] == [b.id for b in feeder10.buses]
    for a, b in zip(loaded.lines, feeder10.lines):
        assert np.allclose(a.z, b.z)
    assert [c.p_forecast for c in loaded.passive] == [c.p_forecast for c in feeder10.passive]
    assert [(c.phase, c.kind) for c in loaded.customers] == [
        (c.phase, c.kind) for c in feeder10.customers
    ]
    saved = json.loads(path.read_text(encoding="utf-8"))
    assert {c["phase"] for c in saved["customers"]} <= {"a", "b", "c"}


def test_customer_record_accepts_phase_enum():
    record = CustomerRecord(id="1", bus="2", phase=Phase.B, kind=CustomerKind.ACTIVE)
    assert record.phase is Phase.B


def test_missing_file(tmp_path):
    with pytest.raises(NetworkParseError, match="not found"):
        load_network(tmp_path / "nope.json")


def test_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(NetworkParseError, match="invalid JSON"):
        load_network(path)


def test_wrong_version(raw_twobus):
    raw_twobus["version"] = "other/9"
    with pytest.raises(NetworkParseError):
        parse_network(raw_twobus)


def test_cycle_is_rejected(raw_twobus):
    raw = copy.deepcopy(raw_twobus)
    raw["buses"].append({"id": "3", "phases": "abc"})
    z = raw["lines"][0]["z"]
    raw["lines"] += [{"id": "2-3", "from": "2", "to": "3", "z": z},
                     {"id": "1-3", "from": "1", "to": "3", "z": z}]
    with pytest.raises(NetworkValidationError, match="radial"):
        parse_network(raw)


def test_unreachable_bus(raw_twobus):
    raw_twobus["buses"].append({"id": "9", "phases": "abc"})
    with pytest.raises(NetworkValidationError, match="not reachable"):
        parse_network(raw_twobus)


def test_two_references(raw_twobus):
    raw_twobus["buses"][1]["is_reference"] = True
    with pytest.raises(NetworkValidationError, match="exactly one reference"):
        parse_network(raw_twobus)


def test_customer_on_missing_phase(raw_twobus):
    raw_twobus["buses"][1]["phases"] = "ab"
    with pytest.raises(NetworkValidationError, match="absent"):
        parse_network(raw_twobus)


def test_asymmetric_impedance(raw_twobus):
    raw_twobus["lines"][0]["z"][0][1] = [0.2, 0.25]
    with pytest.raises(NetworkValidationError, match="symmetric"):
        parse_network(raw_twobus)


def test_degenerate_customer_bounds(raw_twobus):
    raw_twobus["customers"][0]["p_bounds"] = [3.0, 3.0]
    with pytest.raises(NetworkParseError):
        parse_network(raw_twobus)


def test_phase_subset_bus(raw_twobus):
    raw_twobus["buses"][1]["phases"] = ["c", "a", "b"]
    network = parse_network(raw_twobus)
    assert network.bus_map["2"].phases == (Phase.A, Phase.B, Phase.C)


def test_single_bus_has_no_tree(raw_twobus):
    raw_twobus["buses"] = raw_twobus["buses"][:1]
    raw_twobus["lines"] = []
    raw_twobus["customers"] = [{"id": "2", "bus": "1", "phase": "b", "kind": "passive",
                                "p_forecast": 2.0, "q_forecast": 0.5}]
    with pytest.raises(NetworkValidationError, match="no reference-connected tree"):
        parse_network(raw_twobus)


def test_three_bus_chain_incidence(raw_twobus):
    raw = copy.deepcopy(raw_twobus)
    raw["buses"].append({"id": "3", "phases": "abc"})
    raw["lines"].append({"id": "2-3", "from": "2", "to": "3", "z": raw["lines"][0]["z"]})
    mat, ordering = incidence(parse_network(raw))
    assert ordering.buses == ("2", "3")
    assert mat.tolist() == [[1.0, -1.0], [0.0, 1.0]]


@pytest.mark.skipif(not os.environ.get("TWBNETWORK_PATH"),
                    reason="set TWBNETWORK_PATH to a network file")
def test_external_network_loads():
    network = load_network(Path(os.environ["TWBNETWORK_PATH"]))
    mat, _ = incidence(network)
    assert round(abs(np.linalg.det(mat))) == 1
