"""Synthetic device/cookie worlds with known ground truth.

Each person owns devices and cookies. They share the person's home IPs
(which are rare), and sometimes a group IP shared with a handful of other
persons (the source of look-alike candidates). Larger "block" groups share
IPs seen on 10-24 devices, so blocking has to fall back to Rule 2. Public
IPs are built to sit above the Rule 2 cutoffs.
A few stray cookies with unknown handles belong to nobody.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from .datamodel import (
    COOKIE_COLUMNS, DEVICE_COLUMNS, IP_COLUMNS, IPAGG_COLUMNS, KIND_TO_INDICATOR,
    PROPERTY_CATEGORY_COLUMNS, PROPERTY_COLUMNS, TABLE_FILES, UNKNOWN_HANDLE, DEVICE, COOKIE,
    write_id_sets,
)

TRUTH_FILE = "truth.csv"
PERSONS_FILE = "persons.csv"


@dataclass(frozen=True)
class WorldConfig:
    n_persons: int = 200
    min_devices: int = 1
    extra_devices_mean: float = 0.5
    min_cookies: int = 1
    extra_cookies_mean: float = 1.5
    home_ips_mean: float = 0.7
    private_ip_rate: float = 0.9
    roaming_device_rate: float = 0.04
    group_size: int = 6
    group_ip_attach_prob: float = 0.35
    block_size: int = 40
    block_ip_attach_prob: float = 0.3
    public_ip_count: int = 20
    public_ip_attach_prob: float = 0.01
    public_ip_min_devices: int = 25
    public_ip_min_cookies: int = 50
    unknown_handle_fraction: float = 0.15
    stray_cookie_fraction: float = 0.05
    lonely_device_rate: float = 0.01
    n_properties: int = 300
    n_categories: int = 20
    test_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        probs = ("private_ip_rate", "roaming_device_rate", "group_ip_attach_prob", "block_ip_attach_prob",
                 "public_ip_attach_prob", "unknown_handle_fraction", "lonely_device_rate",
                 "test_fraction")
        for name in probs:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        counts = ("n_persons", "min_devices", "min_cookies", "group_size", "block_size",
                  "public_ip_count", "public_ip_min_devices", "public_ip_min_cookies",
                  "n_properties", "n_categories")
        for name in counts:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("extra_devices_mean", "extra_cookies_mean", "home_ips_mean", "stray_cookie_fraction"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_persons < 1:
            raise ValueError("n_persons must be >= 1")
        if self.min_cookies < 1:
            raise ValueError("every person needs at least one cookie")
        if self.group_size < 1 or self.block_size < 1:
            raise ValueError("group sizes must be >= 1")
        if self.n_properties < 1 or self.n_categories < 1:
            raise ValueError("need at least one property and one category")

    @classmethod
    def from_dict(cls, d: Mapping) -> "WorldConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown world config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GroundTruth:
    persons: dict[str, tuple[list[str], list[str]]]
    device_cookies: dict[str, frozenset[str]]


@dataclass
class _Entity:
    kind: str
    person: int  # -1 for stray cookies
    handle: str
    attrs: list
    ips: dict  # ip index -> [freq, c1..c5]
    props: dict  # property index -> count
    eid: str = ""


_DEVICE_TYPES = [f"devtype_{i}" for i in range(6)]
_OSES = [f"os_{i}" for i in range(12)]
_BROWSERS = [f"browser_{i}" for i in range(15)]
_COUNTRIES = [f"country_{i}" for i in range(10)]
_ANON_C1 = [f"anon_c1_{i}" for i in range(40)]
_ANON_C2 = [f"anon_c2_{i}" for i in range(80)]


def _pick(rng, pool, p=None):
    return pool[int(rng.choice(len(pool), p=p))]


def _observation(rng, intensity: float) -> list[int]:
    freq = int(rng.poisson(intensity)) + 1
    shares = (0.6, 0.3, 0.15, 0.4, 0.05)
    return [freq] + [int(rng.binomial(freq, q)) for q in shares]


def _build(config: WorldConfig):
    rng = np.random.default_rng(config.seed)
    n = config.n_persons
    country_p = np.array([0.4, 0.2, 0.1, 0.08, 0.06, 0.05, 0.04, 0.03, 0.02, 0.02])

    ip_kind: list[str] = []  # "home" | "group" | "block" | "public" | "lonely"

    def new_ip(kind):
        ip_kind.append(kind)
        return len(ip_kind) - 1

    group_ips = [new_ip("group") for _ in range((n + config.group_size - 1) // config.group_size)]
    block_ips = [new_ip("block") for _ in range((n + config.block_size - 1) // config.block_size)]

    cat_p = rng.dirichlet(np.ones(config.n_properties) * 0.5)
    entities: list[_Entity] = []
    persons = []
    for pid in range(n):
        handle = f"handle_{pid}"
        test = bool(rng.random() < config.test_fraction)
        country = _pick(rng, _COUNTRIES, country_p)
        anon_c0 = int(rng.random() < 0.7)
        anon_c1 = _pick(rng, _ANON_C1)
        anon_c2 = _pick(rng, _ANON_C2)
        activity = float(rng.gamma(2.0, 6.0))
        homes = [new_ip("home") for _ in range(1 + int(rng.poisson(config.home_ips_mean)))]
        favourites = rng.choice(config.n_properties, size=min(6, config.n_properties), replace=False, p=cat_p)
        group_ip = group_ips[pid // config.group_size]
        block_ip = block_ips[pid // config.block_size]
        n_dev = config.min_devices + int(rng.poisson(config.extra_devices_mean))
        n_cook = config.min_cookies + int(rng.poisson(config.extra_cookies_mean))
        members = []
        for k in range(n_dev + n_cook):
            kind = DEVICE if k < n_dev else COOKIE
            lonely = kind == DEVICE and rng.random() < config.lonely_device_rate
            roaming = kind == DEVICE and not lonely and rng.random() < config.roaming_device_rate
            ips: dict[int, list[int]] = {}
            if not lonely:
                if not roaming:
                    attached = [ip for ip in homes if rng.random() < config.private_ip_rate]
                    if not attached:
                        attached = [homes[int(rng.integers(len(homes)))]]
                    for ip in attached:
                        ips[ip] = _observation(rng, activity)
                if rng.random() < config.group_ip_attach_prob:
                    ips[group_ip] = _observation(rng, activity * 0.3)
                block_prob = min(1.0, 2 * config.block_ip_attach_prob) if roaming else config.block_ip_attach_prob
                if rng.random() < block_prob:
                    ips[block_ip] = _observation(rng, activity * 0.2)
            shared_attr = rng.random() < 0.8
            if kind == DEVICE:
                attrs = [
                    _pick(rng, _DEVICE_TYPES), _pick(rng, _OSES),
                    country if rng.random() < 0.9 else _pick(rng, _COUNTRIES, country_p),
                    anon_c0 if shared_attr else int(rng.random() < 0.5),
                    anon_c1 if shared_attr else _pick(rng, _ANON_C1),
                    anon_c2 if rng.random() < 0.5 else _pick(rng, _ANON_C2),
                ]
                dev_handle = UNKNOWN_HANDLE if test else handle
                ent_handle = dev_handle
            else:
                attrs = [
                    _pick(rng, _OSES), _pick(rng, _BROWSERS),
                    country if rng.random() < 0.9 else _pick(rng, _COUNTRIES, country_p),
                    anon_c0 if shared_attr else int(rng.random() < 0.5),
                    anon_c1 if shared_attr else _pick(rng, _ANON_C1),
                    anon_c2 if rng.random() < 0.5 else _pick(rng, _ANON_C2),
                ]
                first_cookie = k == n_dev
                unknown = not first_cookie and rng.random() < config.unknown_handle_fraction
                ent_handle = UNKNOWN_HANDLE if unknown else handle
            attrs += [
                -1 if rng.random() < 0.05 else int(rng.integers(0, 50)),
                -1 if rng.random() < 0.05 else int(rng.integers(0, 200)),
                -1 if rng.random() < 0.05 else int(rng.poisson(activity)),
            ]
            props: dict[int, int] = {}
            for _ in range(1 + int(rng.poisson(3))):
                if rng.random() < 0.7:
                    prop = int(favourites[int(rng.integers(len(favourites)))])
                else:
                    prop = int(rng.choice(config.n_properties, p=cat_p))
                props[prop] = props.get(prop, 0) + 1 + int(rng.poisson(2))
            ent = _Entity(kind, pid, ent_handle, attrs, ips, props)
            if lonely:
                stray = _stray_cookie(rng, config, country_p)
                ip = new_ip("lonely")
                ent.ips[ip] = _observation(rng, 3.0)
                stray.ips[ip] = _observation(rng, 3.0)
                entities.append(stray)
            entities.append(ent)
            members.append(ent)
        persons.append((handle, members))

    n_stray = int(round(config.stray_cookie_fraction * sum(
        1 for e in entities if e.kind == COOKIE and e.person >= 0)))
    strays = [_stray_cookie(rng, config, country_p) for _ in range(n_stray)]
    for s in strays:
        for ip in (group_ips[int(rng.integers(len(group_ips)))],) if group_ips else ():
            s.ips[ip] = _observation(rng, 2.0)
    entities.extend(strays)

    devices = [e for e in entities if e.kind == DEVICE]
    cookies = [e for e in entities if e.kind == COOKIE]
    for _ in range(config.public_ip_count):
        ip = new_ip("public")
        n_d = min(len(devices), max(config.public_ip_min_devices,
                                    int(round(config.public_ip_attach_prob * len(devices)))))
        n_c = min(len(cookies), max(config.public_ip_min_cookies,
                                    int(round(config.public_ip_attach_prob * len(cookies)))))
        for j in rng.choice(len(devices), size=n_d, replace=False):
            devices[int(j)].ips[ip] = _observation(rng, 1.5)
        for j in rng.choice(len(cookies), size=n_c, replace=False):
            cookies[int(j)].ips[ip] = _observation(rng, 1.5)

    # opaque ids, shuffled so that id order carries no information
    id_perm = rng.permutation(len(entities))
    for e, j in zip(entities, id_perm):
        e.eid = f"id_{int(j)}"
    ip_perm = rng.permutation(len(ip_kind))
    ip_names = [f"ip_{int(j)}" for j in ip_perm]
    is_cell = [int(rng.random() < (0.5 if k == "public" else 0.05)) for k in ip_kind]
    categories = [f"category_{int(rng.integers(config.n_categories))}" for _ in range(config.n_properties)]
    return entities, persons, ip_names, is_cell, categories


def _stray_cookie(rng, config, country_p) -> _Entity:
    attrs = [
        _pick(rng, _OSES), _pick(rng, _BROWSERS), _pick(rng, _COUNTRIES, country_p),
        int(rng.random() < 0.5), _pick(rng, _ANON_C1), _pick(rng, _ANON_C2),
        int(rng.integers(0, 50)), int(rng.integers(0, 200)), int(rng.poisson(5)),
    ]
    return _Entity(COOKIE, -1, UNKNOWN_HANDLE, attrs, {}, {
        int(rng.integers(config.n_properties)): 1 + int(rng.poisson(2))
    })


def _id_key(eid: str):
    return int(eid.split("_")[1])


def generate(config: WorldConfig, out_dir) -> GroundTruth:
    """Write the six tables plus ``truth.csv`` and ``persons.csv`` to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entities, persons, ip_names, is_cell, categories = _build(config)
    entities = sorted(entities, key=lambda e: _id_key(e.eid))

    def writer(name, columns):
        fh = open(out / TABLE_FILES[name], "w", newline="", encoding="utf-8")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        return fh, w

    fh, w = writer("devices", DEVICE_COLUMNS)
    with fh:
        for e in entities:
            if e.kind == DEVICE:
                w.writerow([e.handle, e.eid, *e.attrs])
    fh, w = writer("cookies", COOKIE_COLUMNS)
    with fh:
        for e in entities:
            if e.kind == COOKIE:
                w.writerow([e.handle, e.eid, *e.attrs])

    agg = {}
    fh, w = writer("ip", IP_COLUMNS)
    with fh:
        for e in entities:
            for ip in sorted(e.ips, key=lambda i: ip_names[i]):
                obs = e.ips[ip]
                w.writerow([e.eid, KIND_TO_INDICATOR[e.kind], ip_names[ip], *obs])
                tot = agg.setdefault(ip, [0, 0, 0, 0])
                tot[0] += obs[0]
                tot[1] += obs[1]
                tot[2] += obs[2]
                tot[3] += obs[3]
    fh, w = writer("ipagg", IPAGG_COLUMNS)
    with fh:
        for ip in sorted(agg, key=lambda i: ip_names[i]):
            w.writerow([ip_names[ip], is_cell[ip], *agg[ip]])

    fh, w = writer("property", PROPERTY_COLUMNS)
    with fh:
        for e in entities:
            for prop in sorted(e.props):
                w.writerow([e.eid, KIND_TO_INDICATOR[e.kind], f"property_{prop}", e.props[prop]])
    fh, w = writer("property_category", PROPERTY_CATEGORY_COLUMNS)
    with fh:
        for prop, cat in enumerate(categories):
            w.writerow([f"property_{prop}", cat])

    person_map = {}
    device_cookies = {}
    for handle, members in persons:
        devs = sorted((m.eid for m in members if m.kind == DEVICE), key=_id_key)
        cooks = sorted((m.eid for m in members if m.kind == COOKIE), key=_id_key)
        person_map[handle] = (devs, cooks)
        known = frozenset(m.eid for m in members if m.kind == COOKIE and m.handle != UNKNOWN_HANDLE)
        for d in devs:
            device_cookies[d] = known
    write_id_sets(out / TRUTH_FILE, device_cookies)
    with open(out / PERSONS_FILE, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["handle", "device_ids", "cookie_ids"])
        for handle in sorted(person_map, key=lambda h: int(h.split("_")[1])):
            devs, cooks = person_map[handle]
            w.writerow([handle, " ".join(devs), " ".join(cooks)])
    return GroundTruth(person_map, device_cookies)


@dataclass
class WorldReport:
    problems: list[str]

    @property
    def ok(self) -> bool:
        return not self.problems


def verify_world(world_dir) -> WorldReport:
    """Re-derive aggregates from observations and check handles against the truth files."""
    d = Path(world_dir)

    def rows(name):
        with open(d / name, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))

    problems: list[str] = []
    sums: dict[str, list[int]] = {}
    for r in rows(TABLE_FILES["ip"]):
        tot = sums.setdefault(r["ip"], [0, 0, 0, 0])
        tot[0] += int(r["freq_count"])
        tot[1] += int(r["count_1"])
        tot[2] += int(r["count_2"])
        tot[3] += int(r["count_3"])
    seen = set()
    for r in rows(TABLE_FILES["ipagg"]):
        ip = r["ip"]
        seen.add(ip)
        expected = sums.get(ip, [0, 0, 0, 0])
        got = [int(r["ip_total_freq"]), int(r["ip_count_c0"]), int(r["ip_count_c1"]), int(r["ip_count_c2"])]
        for name, e, g in zip(("ip_total_freq", "ip_count_c0", "ip_count_c1", "ip_count_c2"), expected, got):
            if e != g:
                problems.append(f"ip {ip}: {name} is {g}, observations sum to {e}")
    for ip in sorted(set(sums) - seen):
        problems.append(f"ip {ip}: observed but missing from aggregates")

    cookie_handle = {r["cookie_id"]: r["drawbridge_handle"] for r in rows(TABLE_FILES["cookies"])}
    device_handle = {r["device_id"]: r["drawbridge_handle"] for r in rows(TABLE_FILES["devices"])}
    truth = {r["device_id"]: set(r["cookie_id"].split()) for r in rows(TRUTH_FILE)}
    for r in rows(PERSONS_FILE):
        handle = r["handle"]
        cooks = r["cookie_ids"].split()
        known = {c for c in cooks if cookie_handle.get(c) not in (None, UNKNOWN_HANDLE)}
        for c in cooks:
            h = cookie_handle.get(c)
            if h is None:
                problems.append(f"person {handle}: cookie {c} not in cookie table")
            elif h != UNKNOWN_HANDLE and h != handle:
                problems.append(f"cookie {c}: handle {h} but owned by {handle}")
        for dev in r["device_ids"].split():
            h = device_handle.get(dev)
            if h is None:
                problems.append(f"person {handle}: device {dev} not in device table")
            elif h != UNKNOWN_HANDLE and h != handle:
                problems.append(f"device {dev}: handle {h} but owned by {handle}")
            if truth.get(dev) != known:
                problems.append(f"device {dev}: truth {sorted(truth.get(dev, ()))} != known cookies {sorted(known)}")
    return WorldReport(problems)


def load_persons(world_dir) -> dict[str, tuple[list[str], list[str]]]:
    with open(Path(world_dir) / PERSONS_FILE, newline="", encoding="utf-8") as fh:
        return {r["handle"]: (r["device_ids"].split(), r["cookie_ids"].split()) for r in csv.DictReader(fh)}
