"""Turning candidate scores into a device's final cookie set."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .datamodel import Catalog

STEP1 = "step1"
STEP2 = "step2"
STEP3_HANDLE = "step3-handle"
STEP4 = "step4"
STEP4_HANDLE = "step4-handle"
NO_MATCH = "no-match"

LABELED_BUCKETS = ("1", "2", "3+")
MATES_BUCKETS = ("0", "1-2", "3+")

AccessKey = tuple[int, int, bool, bool]


@dataclass(frozen=True)
class ScoredCandidates:
    device_id: str
    entries: tuple[tuple[str, float], ...]

    @classmethod
    def from_scores(cls, device_id: str, cookie_ids, scores) -> "ScoredCandidates":
        pairs = sorted(zip(cookie_ids, (float(s) for s in scores)), key=lambda e: (-e[1], e[0]))
        return cls(device_id, tuple(pairs))

    @property
    def top(self) -> tuple[str, float] | None:
        return self.entries[0] if self.entries else None

    @property
    def second_score(self) -> float | None:
        return self.entries[1][1] if len(self.entries) > 1 else None


@dataclass(frozen=True)
class PredictionSet:
    device_id: str
    cookie_ids: tuple[str, ...]
    trace: Mapping[str, str] = field(default_factory=dict)

    @property
    def is_no_match(self) -> bool:
        return NO_MATCH in self.trace.values()


def access_key_str(key: AccessKey) -> str:
    lb, mb, wk, ck = key
    return f"{LABELED_BUCKETS[lb]}/{MATES_BUCKETS[mb]}/{int(wk)}/{int(ck)}"


def parse_access_key(text: str) -> AccessKey:
    lb, mb, wk, ck = text.split("/")
    return LABELED_BUCKETS.index(lb), MATES_BUCKETS.index(mb), wk == "1", ck == "1"


ALL_ACCESS_KEYS: tuple[AccessKey, ...] = tuple(
    (lb, mb, wk, ck)
    for lb, mb, wk, ck in itertools.product(range(3), range(3), (False, True), (False, True))
)


@dataclass(frozen=True)
class PostProcessConfig:
    """Step 1 threshold plus a Step 4 multiplier per situation.

    A situation is (cookies already accepted, handle-mates of the runner-up,
    winner handle known, runner-up handle known), the first two bucketed by
    ``labeled_edges`` / ``mates_edges``: values up to the first edge, up to
    the second edge, and above. Keys missing from ``access_params`` use
    ``default_multiplier``.
    """

    step1_threshold: float = 0.3
    access_params: Mapping[AccessKey, float] = field(default_factory=dict)
    default_multiplier: float = 1.0
    labeled_edges: tuple[int, int] = (1, 2)
    mates_edges: tuple[int, int] = (0, 2)
    sentinel: str = "NO_MATCH"

    def __post_init__(self):
        for key, m in {**self.access_params, None: self.default_multiplier}.items():
            if not 0 < m <= 1:
                raise ValueError(f"multiplier for {key} must be in (0, 1], got {m}")
        if not 0 <= self.step1_threshold < 1:
            raise ValueError("step1_threshold must be in [0, 1)")

    @classmethod
    def winner_only(cls, sentinel: str = "NO_MATCH") -> "PostProcessConfig":
        """Accept the top cookie and its handle-mates, nothing else."""
        return cls(step1_threshold=0.0, access_params={}, default_multiplier=1.0, sentinel=sentinel)

    @staticmethod
    def _bucket(value: int, edges: tuple[int, int]) -> int:
        if value <= edges[0]:
            return 0
        if value <= edges[1]:
            return 1
        return 2

    def key(self, n_labeled: int, n_mates: int, winner_known: bool, candidate_known: bool) -> AccessKey:
        return (self._bucket(n_labeled, self.labeled_edges), self._bucket(n_mates, self.mates_edges),
                bool(winner_known), bool(candidate_known))

    def multiplier(self, key: AccessKey) -> float:
        return self.access_params.get(key, self.default_multiplier)

    def with_params(self, **changes) -> "PostProcessConfig":
        from dataclasses import replace
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "step1_threshold": self.step1_threshold,
            "default_multiplier": self.default_multiplier,
            "labeled_edges": list(self.labeled_edges),
            "mates_edges": list(self.mates_edges),
            "sentinel": self.sentinel,
            "access_params": {access_key_str(k): v for k, v in sorted(self.access_params.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PostProcessConfig":
        d = dict(d)
        allowed = {"step1_threshold", "default_multiplier", "labeled_edges", "mates_edges",
                   "sentinel", "access_params"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown postprocess keys: {sorted(unknown)}")
        params = {parse_access_key(k): float(v) for k, v in (d.pop("access_params", None) or {}).items()}
        for edge in ("labeled_edges", "mates_edges"):
            if edge in d:
                d[edge] = tuple(int(x) for x in d[edge])
        return cls(access_params=params, **d)


Rescorer = Callable[[str], ScoredCandidates]


def postprocess(
    catalog: Catalog,
    device_id: str,
    scored: ScoredCandidates,
    config: PostProcessConfig,
    rescore_expanded: Rescorer | None = None,
) -> PredictionSet:
    """Select the device's cookies from its scored candidates.

    ``rescore_expanded(device_id)`` must return the scores of every cookie
    sharing an IP with the device; it is only called when the best initial
    score does not clear ``config.step1_threshold``.
    """
    entries = scored.entries
    winner_step = STEP1
    if not entries or entries[0][1] <= config.step1_threshold:
        if rescore_expanded is not None:
            expanded = rescore_expanded(device_id).entries
            if expanded:
                entries = expanded
                winner_step = STEP2
    if not entries:
        return PredictionSet(device_id, (config.sentinel,), {config.sentinel: NO_MATCH})

    accepted: dict[str, str] = {}

    def accept(cid: str, step: str, mate_step: str) -> None:
        if cid not in accepted:
            accepted[cid] = step
        for mate in catalog.handle_mates(cid):
            accepted.setdefault(mate, mate_step)

    winner, top_score = entries[0]
    accept(winner, winner_step, STEP3_HANDLE)
    winner_known = catalog.cookies[winner].handle.known
    for cid, score in entries[1:]:
        if cid in accepted:
            continue
        mates = catalog.handle_mates(cid)
        key = config.key(len(accepted), len(mates), winner_known, catalog.cookies[cid].handle.known)
        if score > top_score * config.multiplier(key):
            accept(cid, STEP4, STEP4_HANDLE)
    return PredictionSet(device_id, tuple(sorted(accepted)), accepted)


def write_predictions_csv(path, predictions: Mapping[str, PredictionSet]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device_id", "cookie_id"])
        for did in sorted(predictions):
            writer.writerow([did, " ".join(predictions[did].cookie_ids)])


def write_scores_csv(path, scored: Mapping[str, ScoredCandidates]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device_id", "cookie_id", "score"])
        for did in sorted(scored):
            for cid, s in scored[did].entries:
                writer.writerow([did, cid, repr(s)])


def read_scores_csv(path) -> dict[str, ScoredCandidates]:
    grouped: dict[str, list[tuple[str, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            grouped.setdefault(row["device_id"], []).append((row["cookie_id"], float(row["score"])))
    return {
        d: ScoredCandidates.from_scores(d, [c for c, _ in e], [s for _, s in e])
        for d, e in grouped.items()
    }
