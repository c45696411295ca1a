"""Rule-based blocking: which cookies are eligible for a device."""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .datamodel import DEVICE, Catalog

R1, R2, R3, R4 = "R1", "R2", "R3", "R4"
RULES = (R1, R2, R3, R4)


@dataclass(frozen=True)
class BlockingThresholds:
    r1_dev: int = 10
    r1_cook: int = 20
    r2_dev: int = 25
    r2_cook: int = 50

    def __post_init__(self):
        if not (self.r1_dev < self.r2_dev and self.r1_cook < self.r2_cook):
            raise ValueError(f"rule 1 thresholds must be below rule 2 thresholds: {self}")


@dataclass(frozen=True)
class CandidateSet:
    device_id: str
    cookie_ids: tuple[str, ...]
    rule_used: str | None
    via_handle: frozenset[str] = field(default_factory=frozenset)


def _require_device(catalog: Catalog, device_id: str) -> None:
    if device_id not in catalog.devices:
        raise KeyError(f"unknown device_id {device_id!r}")


def rare_ips(catalog: Catalog, ips: Iterable[str], max_dev: int, max_cook: int) -> set[str]:
    """IPs seen on fewer than ``max_dev`` devices and fewer than ``max_cook`` cookies."""
    return {
        ip for ip in ips
        if catalog.device_degree(ip) < max_dev and catalog.cookie_degree(ip) < max_cook
    }


def _cookies_on(catalog: Catalog, ips: Iterable[str], known_only: bool) -> set[str]:
    out: set[str] = set()
    for ip in ips:
        for cid in catalog.index_ip_to_cookies.get(ip, ()):
            if not known_only or catalog.cookies[cid].handle.known:
                out.add(cid)
    return out


def rule_base_sets(catalog: Catalog, device_id: str, thresholds: BlockingThresholds) -> dict[str, set[str]]:
    """Base set of every rule, evaluated independently (no fallback, no Rule 5)."""
    _require_device(catalog, device_id)
    ips = catalog.ips_of(DEVICE, device_id)
    t = thresholds
    return {
        R1: _cookies_on(catalog, rare_ips(catalog, ips, t.r1_dev, t.r1_cook), known_only=True),
        R2: _cookies_on(catalog, rare_ips(catalog, ips, t.r2_dev, t.r2_cook), known_only=True),
        R3: _cookies_on(catalog, ips, known_only=True),
        R4: _cookies_on(catalog, ips, known_only=False),
    }


def select_candidates(
    catalog: Catalog, device_id: str, thresholds: BlockingThresholds = BlockingThresholds()
) -> CandidateSet:
    _require_device(catalog, device_id)
    ips = catalog.ips_of(DEVICE, device_id)
    t = thresholds
    stages = (
        (R1, lambda: _cookies_on(catalog, rare_ips(catalog, ips, t.r1_dev, t.r1_cook), True)),
        (R2, lambda: _cookies_on(catalog, rare_ips(catalog, ips, t.r2_dev, t.r2_cook), True)),
        (R3, lambda: _cookies_on(catalog, ips, True)),
        (R4, lambda: _cookies_on(catalog, ips, False)),
    )
    base: set[str] = set()
    rule_used = None
    for rule, stage in stages:
        base = stage()
        if base:
            rule_used = rule
            break
    if not base:
        return CandidateSet(device_id, (), None)

    added: set[str] = set()
    for cid in base:
        for mate in catalog.handle_mates(cid):
            if mate not in base:
                added.add(mate)
    return CandidateSet(device_id, tuple(sorted(base | added)), rule_used, frozenset(added))


def expand_candidates(catalog: Catalog, device_id: str) -> CandidateSet:
    """Every cookie sharing any IP with the device, handles ignored."""
    _require_device(catalog, device_id)
    cookies = _cookies_on(catalog, catalog.ips_of(DEVICE, device_id), known_only=False)
    return CandidateSet(device_id, tuple(sorted(cookies)), R4 if cookies else None)


def select_all(
    catalog: Catalog, device_ids: Iterable[str], thresholds: BlockingThresholds = BlockingThresholds()
) -> dict[str, CandidateSet]:
    return {did: select_candidates(catalog, did, thresholds) for did in sorted(device_ids)}


def true_cookies(catalog: Catalog, device_id: str) -> frozenset[str]:
    """Cookies sharing the device's known handle."""
    handle = catalog.devices[device_id].handle
    if not handle.known:
        return frozenset()
    return frozenset(catalog.index_handle_to_cookies.get(handle.value, ()))


@dataclass
class CoverageReport:
    n_devices: int
    rule_counts: dict[str, int]
    n_covered: int
    total_pairs: int
    n_empty: int

    @property
    def coverage(self) -> float:
        return self.n_covered / self.n_devices if self.n_devices else 0.0

    def as_rows(self) -> list[tuple[str, float]]:
        rows = [("devices", self.n_devices)]
        rows += [(f"rule_{r}", self.rule_counts.get(r, 0)) for r in RULES]
        rows += [("empty", self.n_empty), ("pairs", self.total_pairs), ("coverage", self.coverage)]
        return rows


def coverage_report(
    catalog: Catalog,
    thresholds: BlockingThresholds = BlockingThresholds(),
    truth: Mapping[str, Iterable[str]] | None = None,
    candidate_sets: Mapping[str, CandidateSet] | None = None,
) -> CoverageReport:
    """Rule usage and the fraction of labeled devices whose cookies are all candidates.

    Without ``truth`` the labeled devices are those with a known handle and
    their cookies are the handle's cookies.
    """
    if truth is None:
        truth = {
            did: true_cookies(catalog, did)
            for did, rec in catalog.devices.items() if rec.handle.known
        }
    counts: Counter[str] = Counter()
    covered = pairs = empty = 0
    for did in sorted(truth):
        cs = candidate_sets[did] if candidate_sets is not None else select_candidates(catalog, did, thresholds)
        if cs.rule_used is None:
            empty += 1
        else:
            counts[cs.rule_used] += 1
        pairs += len(cs.cookie_ids)
        if set(truth[did]) <= set(cs.cookie_ids):
            covered += 1
    return CoverageReport(len(truth), dict(counts), covered, pairs, empty)


def write_candidates_csv(path, candidate_sets: Mapping[str, CandidateSet]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device_id", "cookie_id", "rule_used", "via_handle"])
        for did in sorted(candidate_sets):
            cs = candidate_sets[did]
            for cid in cs.cookie_ids:
                writer.writerow([did, cid, cs.rule_used, int(cid in cs.via_handle)])


def read_candidates_csv(path) -> dict[str, CandidateSet]:
    grouped: dict[str, list[tuple[str, str, bool]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            grouped.setdefault(row["device_id"], []).append(
                (row["cookie_id"], row["rule_used"], row["via_handle"] == "1")
            )
    return {
        did: CandidateSet(
            did,
            tuple(sorted(c for c, _, _ in rows)),
            rows[0][1],
            frozenset(c for c, _, v in rows if v),
        )
        for did, rows in grouped.items()
    }
