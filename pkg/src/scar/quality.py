"""Quality scores, the pair-participation mask, judge prompt rendering,
and an optional HTTP judge client.

The quality of a response is the mean of its helpfulness and correctness
scores (each 1-5). A ranking pair participates in training only when both
responses' quality strictly exceeds the threshold. File-based quality is
the primary path; the HTTP judge is optional and never required by the
core pipeline.
"""

from __future__ import annotations

import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .corpus import _iter_jsonl
from .errors import (
    ConfigError,
    DuplicateIdError,
    MissingEntryError,
    ProtocolError,
    SchemaError,
    TransportError,
)

ROLES = ("human", "referenced", "direct", "single")

QualityKey = tuple[str, str]  # (record id, role)


@dataclass(frozen=True)
class QualityRecord:
    id: str
    role: str
    helpfulness: float
    correctness: float

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"record {self.id!r}: unknown role {self.role!r}")
        for name in ("helpfulness", "correctness"):
            value = getattr(self, name)
            if not 1.0 <= value <= 5.0:
                raise SchemaError(
                    f"record {self.id!r}: {name} {value} outside [1, 5]"
                )


@dataclass(frozen=True)
class PairMask:
    """Participation flags for the (d,r), (r,h), (d,h) ranking pairs."""

    dr: bool
    rh: bool
    dh: bool


def quality_of(rec: QualityRecord) -> float:
    """Mean of helpfulness and correctness."""
    return (rec.helpfulness + rec.correctness) / 2.0


def load_quality(path: str | Path) -> dict[QualityKey, QualityRecord]:
    """Load a quality table from JSONL {id, role, helpfulness, correctness}."""
    table: dict[QualityKey, QualityRecord] = {}
    for lineno, obj in _iter_jsonl(path):
        for key in ("id", "role", "helpfulness", "correctness"):
            if key not in obj:
                raise SchemaError(f"line {lineno}: missing key {key}")
        for key in ("helpfulness", "correctness"):
            if not isinstance(obj[key], (int, float)) or isinstance(obj[key], bool):
                raise SchemaError(f"line {lineno}: {key} must be a number")
        try:
            rec = QualityRecord(
                id=str(obj["id"]),
                role=str(obj["role"]),
                helpfulness=float(obj["helpfulness"]),
                correctness=float(obj["correctness"]),
            )
        except SchemaError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
        key2 = (rec.id, rec.role)
        if key2 in table:
            raise DuplicateIdError(f"line {lineno}: duplicate quality entry {key2}")
        table[key2] = rec
    return table


def _lookup(table: Mapping[QualityKey, QualityRecord], triplet_id: str, role: str) -> float:
    try:
        return quality_of(table[(triplet_id, role)])
    except KeyError:
        raise MissingEntryError(
            f"no quality record for id {triplet_id!r} role {role!r}"
        ) from None


def pair_mask(
    triplet_id: str, table: Mapping[QualityKey, QualityRecord], threshold: float
) -> PairMask:
    """A pair is active iff the lower of its two qualities strictly exceeds
    the threshold."""
    f_d = _lookup(table, triplet_id, "direct")
    f_r = _lookup(table, triplet_id, "referenced")
    f_h = _lookup(table, triplet_id, "human")
    return PairMask(
        dr=min(f_d, f_r) > threshold,
        rh=min(f_r, f_h) > threshold,
        dh=min(f_d, f_h) > threshold,
    )


def render_judge_prompt(instruction: str, response: str, domain: str) -> str:
    """Fill the shipped judge template for the code or open domain."""
    if domain not in ("code", "open"):
        raise ConfigError(f"unknown judge domain {domain!r}")
    template = (
        resources.files("scar.data")
        .joinpath(f"judge_prompt_{domain}.txt")
        .read_text("utf-8")
    )
    return template.replace("<<INSTRUCTION>>", instruction).replace(
        "<<RESPONSE>>", response
    )


def judge_remote(
    endpoint: str | None,
    instruction: str,
    response: str,
    domain: str,
    api_key: str | None = None,
    record_id: str = "",
    max_attempts: int = 3,
    backoff: float = 0.5,
    timeout: float = 30.0,
) -> QualityRecord:
    """POST one judging request and validate the reply into a QualityRecord.

    Retries transport failures and 5xx replies with exponential backoff.
    Endpoint and key fall back to SCAR_JUDGE_URL / SCAR_JUDGE_KEY.
    """
    if endpoint is None:
        endpoint = os.environ.get("SCAR_JUDGE_URL")
        if not endpoint:
            raise ConfigError("no judge endpoint given and SCAR_JUDGE_URL is unset")
    if api_key is None:
        api_key = os.environ.get("SCAR_JUDGE_KEY")
    if domain not in ("code", "open"):
        raise ConfigError(f"unknown judge domain {domain!r}")
    payload = json.dumps(
        {"instruction": instruction, "response": response, "domain": domain}
    ).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    body: bytes | None = None
    last_error: Exception | None = None
    for attempt in range(max_attempts):
        request = urllib.request.Request(endpoint, data=payload, headers=headers)
        try:
            with urllib.request.urlopen(request, timeout=timeout) as reply:
                body = reply.read()
            break
        except urllib.error.HTTPError as exc:
            last_error = exc
            if exc.code < 500:
                raise ProtocolError(f"judge returned HTTP {exc.code}") from None
        except (urllib.error.URLError, OSError) as exc:
            last_error = exc
        if attempt + 1 < max_attempts:
            time.sleep(backoff * (2**attempt))
    if body is None:
        raise TransportError(f"judge unreachable after {max_attempts} attempts: {last_error}")

    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ProtocolError("judge reply is not valid JSON") from None
    if not isinstance(obj, dict) or "helpfulness" not in obj or "correctness" not in obj:
        raise ProtocolError("judge reply missing helpfulness/correctness")
    for key in ("helpfulness", "correctness"):
        if not isinstance(obj[key], (int, float)) or isinstance(obj[key], bool):
            raise ProtocolError(f"judge reply field {key} is not a number")
    return QualityRecord(
        id=record_id,
        role="single",
        helpfulness=float(obj["helpfulness"]),
        correctness=float(obj["correctness"]),
    )
