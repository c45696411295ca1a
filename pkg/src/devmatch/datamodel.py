"""Input tables, the in-memory Catalog and same-handle IP propagation.

Six comma-delimited UTF-8 tables with header rows make up a world:

    devices.csv            one row per device
    cookies.csv            one row per cookie
    id_all_ip.csv          joint device/cookie behaviour on an IP
    ipagg_all.csv          per-IP aggregate counters
    id_all_property.csv    device/cookie visits to a property
    property_category.csv  property to category

Categorical string values are interned into dense integer codes in
first-seen order through a :class:`Vocabulary` that can be persisted and
re-used so that two ingests encode identically.
"""
from __future__ import annotations

import csv
import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

UNKNOWN_HANDLE = "-1"
MISSING_CODE = -1

DEVICE = "device"
COOKIE = "cookie"
OWNER_KINDS = (DEVICE, COOKIE)

TABLE_FILES = {
    "devices": "devices.csv",
    "cookies": "cookies.csv",
    "ip": "id_all_ip.csv",
    "ipagg": "ipagg_all.csv",
    "property": "id_all_property.csv",
    "property_category": "property_category.csv",
}

DEVICE_COLUMNS = (
    "drawbridge_handle", "device_id", "device_type", "device_os", "country",
    "anonymous_c0", "anonymous_c1", "anonymous_c2",
    "anonymous_5", "anonymous_6", "anonymous_7",
)
COOKIE_COLUMNS = (
    "drawbridge_handle", "cookie_id", "computer_os_type", "computer_browser_version", "country",
    "anonymous_c0", "anonymous_c1", "anonymous_c2",
    "anonymous_5", "anonymous_6", "anonymous_7",
)
IP_COLUMNS = (
    "device_or_cookie_id", "device_or_cookie_indicator", "ip", "freq_count",
    "count_1", "count_2", "count_3", "count_4", "count_5",
)
IPAGG_COLUMNS = ("ip", "is_cell_ip", "ip_total_freq", "ip_count_c0", "ip_count_c1", "ip_count_c2")
PROPERTY_COLUMNS = ("device_or_cookie_id", "device_or_cookie_indicator", "property_id", "property_count")
PROPERTY_CATEGORY_COLUMNS = ("property_id", "property_category")

SCHEMAS = {
    "devices": DEVICE_COLUMNS,
    "cookies": COOKIE_COLUMNS,
    "ip": IP_COLUMNS,
    "ipagg": IPAGG_COLUMNS,
    "property": PROPERTY_COLUMNS,
    "property_category": PROPERTY_CATEGORY_COLUMNS,
}

INDICATOR_TO_KIND = {"0": DEVICE, "1": COOKIE}
KIND_TO_INDICATOR = {DEVICE: "0", COOKIE: "1"}


class IngestError(ValueError):
    """A table failed validation. The message names file, line and column."""

    def __init__(self, path, line: int | None, column: str | None, reason: str):
        self.path = str(path)
        self.line = line
        self.column = column
        where = self.path
        if line is not None:
            where += f", line {line}"
        if column is not None:
            where += f", column {column!r}"
        super().__init__(f"{where}: {reason}")


@dataclass(frozen=True)
class Handle:
    value: str
    known: bool

    @classmethod
    def parse(cls, value: str, sentinel: str = UNKNOWN_HANDLE) -> "Handle":
        return cls(value, value != sentinel)


@dataclass(frozen=True)
class DeviceRecord:
    device_id: str
    handle: Handle
    device_type: int
    device_os: int
    country: int
    anon_c0: int
    anon_c1: int
    anon_c2: int
    anon_5: float
    anon_6: float
    anon_7: float


@dataclass(frozen=True)
class CookieRecord:
    cookie_id: str
    handle: Handle
    computer_os: int
    browser_version: int
    country: int
    anon_c0: int
    anon_c1: int
    anon_c2: int
    anon_5: float
    anon_6: float
    anon_7: float


@dataclass(frozen=True)
class IpObservation:
    owner_id: str
    owner_kind: str
    ip: str
    freq_count: int
    counts: tuple[int, int, int, int, int]

    @property
    def joint_vector(self) -> tuple[int, ...]:
        return (self.freq_count, *self.counts)


@dataclass(frozen=True)
class IpAggregate:
    ip: str
    is_cell: int
    total_freq: int
    counts: tuple[int, int, int]

    @property
    def vector(self) -> tuple[int, ...]:
        return (self.is_cell, self.total_freq, *self.counts)

    @classmethod
    def zeros(cls, ip: str) -> "IpAggregate":
        return cls(ip, 0, 0, (0, 0, 0))


@dataclass(frozen=True)
class PropertyObservation:
    owner_id: str
    owner_kind: str
    property_id: str
    count: int


class Vocabulary:
    """Dense first-seen-order interning of categorical tokens.

    One dictionary is shared by every categorical column so that, for
    instance, a country token gets the same code on a device and a cookie.
    """

    def __init__(self, tokens: Iterable[str] = ()):
        self._codes: dict[str, int] = {}
        for token in tokens:
            self.code(token)

    def code(self, token: str) -> int:
        if token == "":
            return MISSING_CODE
        code = self._codes.get(token)
        if code is None:
            code = self._codes[token] = len(self._codes)
        return code

    def __len__(self) -> int:
        return len(self._codes)

    def __contains__(self, token: str) -> bool:
        return token in self._codes

    def items(self):
        return self._codes.items()

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["token", "code"])
            for token, code in self._codes.items():
                writer.writerow([token, code])

    @classmethod
    def load(cls, path) -> "Vocabulary":
        vocab = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["token", "code"]:
                raise IngestError(path, 1, None, f"expected header token,code, got {header}")
            for lineno, row in enumerate(reader, start=2):
                token, code = row
                if int(code) != len(vocab):
                    raise IngestError(path, lineno, "code", "codes must be dense and in order")
                vocab.code(token)
        return vocab


OwnerKey = tuple[str, str]


@dataclass(frozen=True, eq=False, repr=False)
class Catalog:
    """Immutable world snapshot with the inverted indexes the pipeline needs.

    Build through :meth:`build`; never mutate the mappings afterwards.
    """

    def __repr__(self) -> str:
        return f"Catalog({len(self.devices)} devices, {len(self.cookies)} cookies, {len(self.ip_agg)} ips)"

    devices: Mapping[str, DeviceRecord]
    cookies: Mapping[str, CookieRecord]
    ip_obs: Mapping[OwnerKey, tuple[IpObservation, ...]]
    ip_agg: Mapping[str, IpAggregate]
    props: Mapping[OwnerKey, tuple[PropertyObservation, ...]]
    property_category: Mapping[str, int]
    vocab: Vocabulary
    content_hash: str
    index_ip_to_devices: Mapping[str, tuple[str, ...]] = field(init=False)
    index_ip_to_cookies: Mapping[str, tuple[str, ...]] = field(init=False)
    index_handle_to_cookies: Mapping[str, tuple[str, ...]] = field(init=False)
    index_handle_to_devices: Mapping[str, tuple[str, ...]] = field(init=False)
    _obs_lookup: Mapping[OwnerKey, Mapping[str, IpObservation]] = field(init=False, repr=False)
    _ip_sets: Mapping[OwnerKey, frozenset[str]] = field(init=False, repr=False)
    _prop_sets: Mapping[OwnerKey, frozenset[str]] = field(init=False, repr=False)

    def __post_init__(self):
        ip_dev: dict[str, list[str]] = defaultdict(list)
        ip_cook: dict[str, list[str]] = defaultdict(list)
        lookup = {}
        ip_sets = {}
        for key, observations in self.ip_obs.items():
            kind, owner = key
            by_ip = {o.ip: o for o in observations}
            lookup[key] = by_ip
            ip_sets[key] = frozenset(by_ip)
            target = ip_dev if kind == DEVICE else ip_cook
            for ip in by_ip:
                target[ip].append(owner)
        h_cook: dict[str, list[str]] = defaultdict(list)
        for cid, rec in self.cookies.items():
            if rec.handle.known:
                h_cook[rec.handle.value].append(cid)
        h_dev: dict[str, list[str]] = defaultdict(list)
        for did, rec in self.devices.items():
            if rec.handle.known:
                h_dev[rec.handle.value].append(did)

        def freeze(d):
            return {k: tuple(sorted(v)) for k, v in d.items()}

        object.__setattr__(self, "index_ip_to_devices", freeze(ip_dev))
        object.__setattr__(self, "index_ip_to_cookies", freeze(ip_cook))
        object.__setattr__(self, "index_handle_to_cookies", freeze(h_cook))
        object.__setattr__(self, "index_handle_to_devices", freeze(h_dev))
        object.__setattr__(self, "_obs_lookup", lookup)
        object.__setattr__(self, "_ip_sets", ip_sets)
        object.__setattr__(
            self, "_prop_sets",
            {key: frozenset(p.property_id for p in obs) for key, obs in self.props.items()},
        )

    def device_degree(self, ip: str) -> int:
        return len(self.index_ip_to_devices.get(ip, ()))

    def cookie_degree(self, ip: str) -> int:
        return len(self.index_ip_to_cookies.get(ip, ()))

    def ips_of(self, kind: str, owner_id: str) -> frozenset[str]:
        return self._ip_sets.get((kind, owner_id), frozenset())

    def properties_of(self, kind: str, owner_id: str) -> frozenset[str]:
        return self._prop_sets.get((kind, owner_id), frozenset())

    def observation(self, kind: str, owner_id: str, ip: str) -> IpObservation | None:
        return self._obs_lookup.get((kind, owner_id), {}).get(ip)

    def aggregate(self, ip: str) -> IpAggregate:
        agg = self.ip_agg.get(ip)
        return agg if agg is not None else IpAggregate.zeros(ip)

    def handle_mates(self, cookie_id: str) -> tuple[str, ...]:
        """Other cookies with the same known handle (empty for unknown handles)."""
        handle = self.cookies[cookie_id].handle
        if not handle.known:
            return ()
        return tuple(c for c in self.index_handle_to_cookies[handle.value] if c != cookie_id)

    def index_signature(self) -> str:
        h = hashlib.sha256()
        for name in ("index_ip_to_devices", "index_ip_to_cookies",
                     "index_handle_to_cookies", "index_handle_to_devices"):
            index = getattr(self, name)
            h.update(name.encode())
            for key in sorted(index):
                h.update(key.encode())
                h.update(b"\x00".join(v.encode() for v in index[key]))
                h.update(b"\x01")
        return h.hexdigest()


def _read_table(path: Path, columns: tuple[str, ...]):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise IngestError(path, None, None, "file not found") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != columns:
            raise IngestError(path, 1, None, f"header mismatch: expected {','.join(columns)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise IngestError(path, lineno, None, f"expected {len(columns)} fields, got {len(row)}")
            yield lineno, dict(zip(columns, row))


def _nonneg_int(path, lineno, column, raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise IngestError(path, lineno, column, f"not an integer: {raw!r}") from None
    if value < 0:
        raise IngestError(path, lineno, column, f"negative count: {value}")
    return value


def _flag(path, lineno, column, raw: str) -> int:
    lowered = raw.strip().lower()
    if lowered in ("", "-1"):
        return MISSING_CODE
    if lowered in ("0", "false"):
        return 0
    if lowered in ("1", "true"):
        return 1
    raise IngestError(path, lineno, column, f"not a boolean: {raw!r}")


def _numeric(path, lineno, column, raw: str) -> float:
    if raw.strip() == "":
        return float(MISSING_CODE)
    try:
        value = float(raw)
    except ValueError:
        raise IngestError(path, lineno, column, f"not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise IngestError(path, lineno, column, f"non-finite value: {raw!r}")
    return value


def _kind(path, lineno, column, raw: str) -> str:
    kind = INDICATOR_TO_KIND.get(raw.strip())
    if kind is None:
        raise IngestError(path, lineno, column, f"indicator must be 0 (device) or 1 (cookie), got {raw!r}")
    return kind


def table_paths(directory) -> dict[str, Path]:
    directory = Path(directory)
    return {name: directory / fname for name, fname in TABLE_FILES.items()}


def ingest(
    table_files: Mapping[str, str | Path] | str | Path,
    vocab: Vocabulary | None = None,
    handle_sentinel: str = UNKNOWN_HANDLE,
) -> Catalog:
    """Parse and validate the six tables into a :class:`Catalog`.

    ``table_files`` is either a directory holding the default file names or
    a mapping from table key (see ``TABLE_FILES``) to path. Pass the
    vocabulary of an earlier ingest to keep categorical codes identical.
    """
    if not isinstance(table_files, Mapping):
        table_files = table_paths(table_files)
    paths = {name: Path(table_files[name]) for name in TABLE_FILES}
    vocab = vocab if vocab is not None else Vocabulary()

    digest = hashlib.sha256(handle_sentinel.encode())
    for name in TABLE_FILES:
        try:
            digest.update(paths[name].read_bytes())
        except FileNotFoundError:
            raise IngestError(paths[name], None, None, "file not found") from None

    devices: dict[str, DeviceRecord] = {}
    path = paths["devices"]
    for lineno, row in _read_table(path, DEVICE_COLUMNS):
        did = row["device_id"].strip()
        if not did:
            raise IngestError(path, lineno, "device_id", "empty id")
        if did in devices:
            raise IngestError(path, lineno, "device_id", f"duplicate device_id {did!r}")
        devices[did] = DeviceRecord(
            device_id=did,
            handle=Handle.parse(row["drawbridge_handle"].strip(), handle_sentinel),
            device_type=vocab.code(row["device_type"].strip()),
            device_os=vocab.code(row["device_os"].strip()),
            country=vocab.code(row["country"].strip()),
            anon_c0=_flag(path, lineno, "anonymous_c0", row["anonymous_c0"]),
            anon_c1=vocab.code(row["anonymous_c1"].strip()),
            anon_c2=vocab.code(row["anonymous_c2"].strip()),
            anon_5=_numeric(path, lineno, "anonymous_5", row["anonymous_5"]),
            anon_6=_numeric(path, lineno, "anonymous_6", row["anonymous_6"]),
            anon_7=_numeric(path, lineno, "anonymous_7", row["anonymous_7"]),
        )

    cookies: dict[str, CookieRecord] = {}
    path = paths["cookies"]
    for lineno, row in _read_table(path, COOKIE_COLUMNS):
        cid = row["cookie_id"].strip()
        if not cid:
            raise IngestError(path, lineno, "cookie_id", "empty id")
        if cid in cookies:
            raise IngestError(path, lineno, "cookie_id", f"duplicate cookie_id {cid!r}")
        cookies[cid] = CookieRecord(
            cookie_id=cid,
            handle=Handle.parse(row["drawbridge_handle"].strip(), handle_sentinel),
            computer_os=vocab.code(row["computer_os_type"].strip()),
            browser_version=vocab.code(row["computer_browser_version"].strip()),
            country=vocab.code(row["country"].strip()),
            anon_c0=_flag(path, lineno, "anonymous_c0", row["anonymous_c0"]),
            anon_c1=vocab.code(row["anonymous_c1"].strip()),
            anon_c2=vocab.code(row["anonymous_c2"].strip()),
            anon_5=_numeric(path, lineno, "anonymous_5", row["anonymous_5"]),
            anon_6=_numeric(path, lineno, "anonymous_6", row["anonymous_6"]),
            anon_7=_numeric(path, lineno, "anonymous_7", row["anonymous_7"]),
        )

    known = {DEVICE: devices, COOKIE: cookies}

    # Repeated (owner, ip) rows are merged by summing their counters.
    merged: dict[OwnerKey, dict[str, list[int]]] = defaultdict(dict)
    path = paths["ip"]
    for lineno, row in _read_table(path, IP_COLUMNS):
        kind = _kind(path, lineno, "device_or_cookie_indicator", row["device_or_cookie_indicator"])
        owner = row["device_or_cookie_id"].strip()
        if owner not in known[kind]:
            raise IngestError(path, lineno, "device_or_cookie_id", f"unknown {kind} {owner!r}")
        ip = row["ip"].strip()
        if not ip:
            raise IngestError(path, lineno, "ip", "empty ip")
        values = [_nonneg_int(path, lineno, col, row[col]) for col in IP_COLUMNS[3:]]
        slot = merged[(kind, owner)]
        if ip in slot:
            slot[ip] = [a + b for a, b in zip(slot[ip], values)]
        else:
            slot[ip] = values
    ip_obs = {
        key: tuple(IpObservation(key[1], key[0], ip, v[0], tuple(v[1:])) for ip, v in by_ip.items())
        for key, by_ip in merged.items()
    }

    ip_agg: dict[str, IpAggregate] = {}
    path = paths["ipagg"]
    for lineno, row in _read_table(path, IPAGG_COLUMNS):
        ip = row["ip"].strip()
        if ip in ip_agg:
            raise IngestError(path, lineno, "ip", f"duplicate ip {ip!r}")
        is_cell = _flag(path, lineno, "is_cell_ip", row["is_cell_ip"])
        if is_cell == MISSING_CODE:
            raise IngestError(path, lineno, "is_cell_ip", "missing value")
        ip_agg[ip] = IpAggregate(
            ip, is_cell,
            _nonneg_int(path, lineno, "ip_total_freq", row["ip_total_freq"]),
            tuple(_nonneg_int(path, lineno, c, row[c]) for c in IPAGG_COLUMNS[3:]),
        )
    for observations in ip_obs.values():
        for obs in observations:
            if obs.ip not in ip_agg:
                ip_agg[obs.ip] = IpAggregate.zeros(obs.ip)

    prop_lists: dict[OwnerKey, list[PropertyObservation]] = defaultdict(list)
    path = paths["property"]
    for lineno, row in _read_table(path, PROPERTY_COLUMNS):
        kind = _kind(path, lineno, "device_or_cookie_indicator", row["device_or_cookie_indicator"])
        owner = row["device_or_cookie_id"].strip()
        if owner not in known[kind]:
            raise IngestError(path, lineno, "device_or_cookie_id", f"unknown {kind} {owner!r}")
        prop_lists[(kind, owner)].append(PropertyObservation(
            owner, kind, row["property_id"].strip(),
            _nonneg_int(path, lineno, "property_count", row["property_count"]),
        ))

    categories: dict[str, int] = {}
    path = paths["property_category"]
    for lineno, row in _read_table(path, PROPERTY_CATEGORY_COLUMNS):
        categories[row["property_id"].strip()] = vocab.code(row["property_category"].strip())

    return Catalog(
        devices=devices,
        cookies=cookies,
        ip_obs=ip_obs,
        ip_agg=ip_agg,
        props={k: tuple(v) for k, v in prop_lists.items()},
        property_category=categories,
        vocab=vocab,
        content_hash=digest.hexdigest(),
    )


def propagate_same_handle_ips(catalog: Catalog) -> Catalog:
    """Give every cookie the IP observations of its known-handle mates.

    For an IP a cookie lacks, the payload is copied from the mate with the
    smallest cookie id that has it. IPs already present are left untouched,
    which makes the operation idempotent.
    """
    new_obs = dict(catalog.ip_obs)
    changed = False
    for handle, mates in catalog.index_handle_to_cookies.items():
        if len(mates) < 2:
            continue
        donors: dict[str, IpObservation] = {}
        for cid in mates:  # ascending id, first donor wins
            for obs in catalog.ip_obs.get((COOKIE, cid), ()):
                donors.setdefault(obs.ip, obs)
        for cid in mates:
            have = catalog.ips_of(COOKIE, cid)
            extra = [
                replace(obs, owner_id=cid)
                for ip, obs in donors.items() if ip not in have
            ]
            if extra:
                changed = True
                new_obs[(COOKIE, cid)] = catalog.ip_obs.get((COOKIE, cid), ()) + tuple(extra)
    if not changed:
        return catalog
    return Catalog(
        devices=catalog.devices,
        cookies=catalog.cookies,
        ip_obs=new_obs,
        ip_agg=catalog.ip_agg,
        props=catalog.props,
        property_category=catalog.property_category,
        vocab=catalog.vocab,
        content_hash=hashlib.sha256((catalog.content_hash + ":propagated").encode()).hexdigest(),
    )


def load_truth(path) -> dict[str, frozenset[str]]:
    """Read ``device_id, space-separated cookie_ids`` into a mapping."""
    truth = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["device_id", "cookie_id"]:
            raise IngestError(path, 1, None, f"expected header device_id,cookie_id, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise IngestError(path, lineno, None, "expected 2 fields")
            truth[row[0].strip()] = frozenset(row[1].split())
    return truth


def write_id_sets(path, mapping: Mapping[str, Iterable[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device_id", "cookie_id"])
        for did in sorted(mapping):
            writer.writerow([did, " ".join(sorted(mapping[did]))])
