import csv
import filecmp

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from devmatch.datamodel import TABLE_FILES, ingest, load_truth
from devmatch.synthgen import PERSONS_FILE, TRUTH_FILE, WorldConfig, generate, load_persons, verify_world

ALL_FILES = [*TABLE_FILES.values(), TRUTH_FILE, PERSONS_FILE]


def test_byte_identical_regeneration(tmp_path):
    cfg = WorldConfig(n_persons=80, seed=11)
    generate(cfg, tmp_path / "a")
    generate(cfg, tmp_path / "b")
    for name in ALL_FILES:
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False), name


def test_seed_changes_world(tmp_path):
    generate(WorldConfig(n_persons=40, seed=1), tmp_path / "a")
    generate(WorldConfig(n_persons=40, seed=2), tmp_path / "b")
    assert (tmp_path / "a" / TABLE_FILES["ip"]).read_bytes() != (tmp_path / "b" / TABLE_FILES["ip"]).read_bytes()


def test_world_verifies_and_ingests(small_world):
    rep = verify_world(small_world)
    assert rep.ok, rep.problems[:5]
    cat = ingest(small_world)
    persons = load_persons(small_world)
    assert len(persons) == 300
    n_dev = sum(len(d) for d, _ in persons.values())
    assert n_dev <= len(cat.devices)
    for handle, (devs, cooks) in persons.items():
        assert devs and cooks
        # test devices have their handle hidden
        assert all(cat.devices[d].handle.value in (handle, "-1") for d in devs)
        # the first cookie of every person keeps its handle
        assert any(cat.cookies[c].handle.known for c in cooks)
    hidden = sum(not r.handle.known for r in cat.devices.values())
    assert 0.3 < hidden / len(cat.devices) < 0.7


def test_truth_matches_known_handles(small_world):
    cat = ingest(small_world)
    truth = load_truth(small_world / TRUTH_FILE)
    for d, rec in cat.devices.items():
        if rec.handle.known:
            assert truth[d] == frozenset(c for c, r in cat.cookies.items() if r.handle == rec.handle)


def test_verify_detects_tampering(tmp_path):
    generate(WorldConfig(n_persons=30, seed=3), tmp_path)
    path = tmp_path / TABLE_FILES["ipagg"]
    rows = list(csv.reader(open(path)))
    rows[1][2] = str(int(rows[1][2]) + 1)
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    assert not verify_world(tmp_path).ok


def test_config_validation():
    for bad in (dict(n_persons=0), dict(private_ip_rate=1.5), dict(test_fraction=-0.1)):
        with pytest.raises(ValueError):
            WorldConfig(**bad)
    with pytest.raises(ValueError):
        WorldConfig.from_dict({"nope": 1})
    assert WorldConfig.from_dict({"n_persons": 5}).n_persons == 5


@settings(max_examples=10)
@given(st.integers(0, 1000), st.integers(1, 40))
def test_random_worlds_verify(tmp_path_factory, seed, n):
    d = tmp_path_factory.mktemp("w")
    generate(WorldConfig(n_persons=n, seed=seed), d)
    assert verify_world(d).ok
