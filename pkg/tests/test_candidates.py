import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from devmatch.candidates import (
    R1, R2, R3, R4, BlockingThresholds, coverage_report, expand_candidates,
    read_candidates_csv, rule_base_sets, select_all, select_candidates, true_cookies,
    write_candidates_csv,
)
from devmatch.datamodel import COOKIE, DEVICE, ingest, propagate_same_handle_ips
from devmatch.synthgen import WorldConfig, generate

from helpers import cookie_row, device_row, make_catalog


def _filler(prefix, n, ip, kind):
    rows = [device_row(f"{prefix}{i}") if kind == "d" else cookie_row(f"{prefix}{i}") for i in range(n)]
    obs = [(kind, f"{prefix}{i}", ip, 1) for i in range(n)]
    return rows, obs


def test_rule1_then_rule5(tmp_path):
    # ip "a": 3 devices, 5 cookies; c1 known (handle h), c2 unknown, c9 shares h elsewhere
    devs, dobs = _filler("dx", 2, "a", "d")
    cooks, cobs = _filler("cx", 3, "a", "c")
    cat = make_catalog(
        tmp_path,
        devices=[device_row("d0")] + devs,
        cookies=[cookie_row("c1", "h"), cookie_row("c2", "-1"), cookie_row("c9", "h")] + cooks,
        ips=[("d", "d0", "a", 1), ("c", "c1", "a", 1), ("c", "c2", "a", 1), ("c", "c9", "far", 1)]
            + dobs + cobs,
    )
    assert cat.device_degree("a") == 3 and cat.cookie_degree("a") == 5
    cs = select_candidates(cat, "d0")
    assert cs.rule_used == R1
    assert cs.cookie_ids == ("c1", "c9")
    assert cs.via_handle == {"c9"}


def test_rule4_when_only_unknown_cookies_on_busy_ips(tmp_path):
    devs, dobs = _filler("dx", 25, "busy", "d")
    cat = make_catalog(
        tmp_path,
        devices=[device_row("d0")] + devs,
        cookies=[cookie_row("u1"), cookie_row("u2")],
        ips=[("d", "d0", "busy", 1), ("c", "u1", "busy", 1), ("c", "u2", "busy", 1)] + dobs,
    )
    assert cat.device_degree("busy") == 26
    cs = select_candidates(cat, "d0")
    assert cs.rule_used == R4
    assert cs.cookie_ids == ("u1", "u2")


def test_rule2_and_rule3_fallbacks(tmp_path):
    devs, dobs = _filler("dm", 12, "mid", "d")
    devs2, dobs2 = _filler("db", 30, "big", "d")
    cat = make_catalog(
        tmp_path,
        devices=[device_row("d0"), device_row("d1")] + devs + devs2,
        cookies=[cookie_row("c1", "h1"), cookie_row("c2", "h2")],
        ips=[("d", "d0", "mid", 1), ("c", "c1", "mid", 1),
             ("d", "d1", "big", 1), ("c", "c2", "big", 1)] + dobs + dobs2,
    )
    assert select_candidates(cat, "d0").rule_used == R2
    assert select_candidates(cat, "d1").rule_used == R3


def test_thresholds_are_strict(tmp_path):
    # exactly 10 devices on the ip: not "less than ten"
    devs, dobs = _filler("dx", 9, "a", "d")
    cat = make_catalog(tmp_path, devices=[device_row("d0")] + devs, cookies=[cookie_row("c1", "h")],
                       ips=[("d", "d0", "a", 1), ("c", "c1", "a", 1)] + dobs)
    assert cat.device_degree("a") == 10
    assert select_candidates(cat, "d0").rule_used == R2


def test_no_ip_device(tmp_path):
    cat = make_catalog(tmp_path, devices=[device_row("d0")], cookies=[cookie_row("c1", "h")])
    cs = select_candidates(cat, "d0")
    assert cs.cookie_ids == () and cs.rule_used is None
    assert expand_candidates(cat, "d0").cookie_ids == ()


def test_expand_is_raw_sharers(tmp_path):
    cat = make_catalog(
        tmp_path, devices=[device_row("d0")],
        cookies=[cookie_row("c1", "h"), cookie_row("c2"), cookie_row("c3", "h2"), cookie_row("c4", "h")],
        ips=[("d", "d0", "a", 1), ("d", "d0", "b", 1), ("c", "c1", "a", 1), ("c", "c2", "a", 1),
             ("c", "c3", "b", 1), ("c", "c4", "elsewhere", 1)],
    )
    assert expand_candidates(cat, "d0").cookie_ids == ("c1", "c2", "c3")
    assert "c4" in select_candidates(cat, "d0").cookie_ids


def test_unknown_device_raises(tmp_path):
    cat = make_catalog(tmp_path, devices=[device_row("d0")])
    with pytest.raises(KeyError):
        select_candidates(cat, "nope")
    with pytest.raises(KeyError):
        expand_candidates(cat, "nope")


def test_thresholds_validated():
    with pytest.raises(ValueError):
        BlockingThresholds(r1_dev=30)


def test_coverage_simple_worlds(tmp_path):
    cat = make_catalog(
        tmp_path,
        devices=[device_row("d1", "h1"), device_row("d2", "h2")],
        cookies=[cookie_row("c1", "h1"), cookie_row("c2", "h2")],
        ips=[("d", "d1", "r1", 1), ("c", "c1", "r1", 1), ("d", "d2", "r2", 1), ("c", "c2", "r2", 1)],
    )
    assert coverage_report(cat).coverage == 1.0
    cat2 = make_catalog(
        tmp_path / "b",
        devices=[device_row("d1", "h1"), device_row("d2", "h2")],
        cookies=[cookie_row("c1", "h1"), cookie_row("c2", "h2")],
        ips=[("d", "d1", "r1", 1), ("c", "c1", "r1", 1), ("d", "d2", "r2", 1), ("c", "c2", "other", 1)],
    )
    rep = coverage_report(cat2)
    assert rep.coverage == 0.5
    assert rep.n_empty == 1


def _check_properties(cat, thresholds=BlockingThresholds()):
    for did in sorted(cat.devices):
        base = rule_base_sets(cat, did, thresholds)
        assert base[R1] <= base[R2] <= base[R3] <= base[R4]
        cs = select_candidates(cat, did, thresholds)
        ids = set(cs.cookie_ids)
        for cid in cs.cookie_ids:
            h = cat.cookies[cid].handle
            if h.known:
                assert set(cat.index_handle_to_cookies[h.value]) <= ids
        assert cs.via_handle <= ids
        assert list(cs.cookie_ids) == sorted(ids)
        if cs.rule_used is not None:
            assert ids - cs.via_handle == base[cs.rule_used]
        assert set(expand_candidates(cat, did).cookie_ids) >= base[R4]


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.integers(5, 60))
def test_blocking_properties_random_worlds(tmp_path_factory, seed, n_persons):
    d = tmp_path_factory.mktemp("w")
    generate(WorldConfig(n_persons=n_persons, seed=seed, public_ip_count=3), d)
    _check_properties(propagate_same_handle_ips(ingest(d)))


def test_select_is_pure(small_catalog):
    d = sorted(small_catalog.devices)[0]
    assert select_candidates(small_catalog, d) == select_candidates(small_catalog, d)


def test_coverage_against_brute_force(small_catalog):
    cat = small_catalog
    labeled = [d for d, r in cat.devices.items() if r.handle.known]
    covered = 0
    for did in labeled:
        # brute force: scan all cookies, apply the rules literally
        dev_ips = cat.ips_of(DEVICE, did)
        def on_ips(ips, known_only):
            return {c for c, rec in cat.cookies.items()
                    if cat.ips_of(COOKIE, c) & ips and (rec.handle.known or not known_only)}
        def rare(md, mc):
            out = set()
            for ip in dev_ips:
                n_d = sum(1 for x in cat.devices if ip in cat.ips_of(DEVICE, x))
                n_c = sum(1 for x in cat.cookies if ip in cat.ips_of(COOKIE, x))
                if n_d < md and n_c < mc:
                    out.add(ip)
            return out
        base = on_ips(rare(10, 20), True) or on_ips(rare(25, 50), True) or on_ips(dev_ips, True) or on_ips(dev_ips, False)
        full = set(base)
        for c in base:
            h = cat.cookies[c].handle
            if h.known:
                full |= {x for x, r in cat.cookies.items() if r.handle == h}
        truth = {c for c, r in cat.cookies.items() if r.handle == cat.devices[did].handle}
        assert full == set(select_candidates(cat, did).cookie_ids)
        covered += truth <= full
    rep = coverage_report(cat)
    assert rep.coverage == covered / len(labeled)
    assert rep.coverage >= 0.9


def test_candidates_csv_roundtrip(tmp_path, small_catalog):
    sets = select_all(small_catalog, sorted(small_catalog.devices)[:20])
    write_candidates_csv(tmp_path / "c.csv", sets)
    back = read_candidates_csv(tmp_path / "c.csv")
    for d, cs in sets.items():
        if cs.cookie_ids:
            assert back[d] == cs


def test_true_cookies(small_catalog, small_truth):
    for d, rec in small_catalog.devices.items():
        if rec.handle.known:
            assert true_cookies(small_catalog, d) == small_truth[d]
