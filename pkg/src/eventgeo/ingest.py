"""Message loading, tokenization and OLE-date time features."""

from __future__ import annotations

import csv
import json
import math
import unicodedata
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator

if TYPE_CHECKING:
    from eventgeo.gazetteer import Gazetteer

OLE_EPOCH = datetime(1899, 12, 30, tzinfo=timezone.utc)
_MIN_TS = datetime(1800, 1, 1, tzinfo=timezone.utc)
_MAX_TS = datetime(2200, 1, 1, tzinfo=timezone.utc)
_SECONDS_PER_DAY = 86400


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset records."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Message:
    id: str
    text: str
    user_id: str
    mentioned_user_ids: tuple[str, ...] = ()
    timestamp: datetime = OLE_EPOCH
    tokens: tuple[str, ...] | None = None
    event_label: str | None = None
    truth_coord: tuple[float, float] | None = None

    def __post_init__(self):
        if self.truth_coord is not None:
            lat, lon = self.truth_coord
            if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
                raise ValueError(f"message {self.id}: coordinate out of range ({lat}, {lon})")


@dataclass(frozen=True)
class TimeFeature:
    integer_days: int
    day_fraction: float

    def as_vector(self) -> tuple[float, float]:
        return float(self.integer_days), self.day_fraction

    def to_datetime(self) -> datetime:
        return OLE_EPOCH + timedelta(days=self.integer_days, seconds=self.day_fraction * _SECONDS_PER_DAY)


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC-3339 timestamp; naive values are taken as UTC."""
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def ole_date(timestamp: datetime) -> TimeFeature:
    """Split a UTC instant into whole days and day fraction since the OLE epoch."""
    if timestamp.tzinfo is None:
        timestamp = timestamp.replace(tzinfo=timezone.utc)
    if not (_MIN_TS <= timestamp <= _MAX_TS):
        raise ValueError(f"timestamp out of range: {timestamp.isoformat()}")
    delta = timestamp - OLE_EPOCH
    micros = (delta.days * _SECONDS_PER_DAY + delta.seconds) * 1_000_000 + delta.microseconds
    days, rem = divmod(micros, _SECONDS_PER_DAY * 1_000_000)
    return TimeFeature(int(days), rem / (_SECONDS_PER_DAY * 1_000_000))


# ── Loading ─────────────────────────────────────────────


def _coord(lat, lon, line: int) -> tuple[float, float] | None:
    if lat in (None, "") and lon in (None, ""):
        return None
    if lat in (None, "") or lon in (None, ""):
        raise DatasetError("lat and lon must be given together", line)
    try:
        lat_f, lon_f = float(lat), float(lon)
    except (TypeError, ValueError):
        raise DatasetError(f"non-numeric coordinate ({lat!r}, {lon!r})", line) from None
    if not (math.isfinite(lat_f) and math.isfinite(lon_f)):
        raise DatasetError("non-finite coordinate", line)
    if not -90.0 <= lat_f <= 90.0:
        raise DatasetError(f"lat out of range: {lat_f}", line)
    if not -180.0 <= lon_f <= 180.0:
        raise DatasetError(f"lon out of range: {lon_f}", line)
    return lat_f, lon_f


def _record_to_message(rec: dict, line: int) -> Message:
    for key in ("id", "text", "user_id", "timestamp"):
        if key not in rec or rec[key] is None:
            raise DatasetError(f"missing field {key!r}", line)
    try:
        ts = parse_timestamp(str(rec["timestamp"]))
    except ValueError as exc:
        raise DatasetError(f"bad timestamp {rec['timestamp']!r}: {exc}", line) from None
    mentions = rec.get("mentions") or []
    tokens = rec.get("tokens")
    label = rec.get("event_label")
    return Message(
        id=str(rec["id"]),
        text=str(rec["text"]),
        user_id=str(rec["user_id"]),
        mentioned_user_ids=tuple(str(m) for m in mentions),
        timestamp=ts,
        tokens=tuple(str(t) for t in tokens) if tokens is not None else None,
        event_label=str(label) if label not in (None, "") else None,
        truth_coord=_coord(rec.get("lat"), rec.get("lon"), line),
    )


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(rec, dict):
                raise DatasetError("record is not an object", lineno)
            yield lineno, rec


def _split_list(value: str | None) -> list[str] | None:
    if value is None:
        return None
    return [v for v in value.split(",") if v]


def _iter_tsv(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        if reader.fieldnames is None:
            return
        for col in ("id", "text", "user_id", "timestamp"):
            if col not in reader.fieldnames:
                raise DatasetError(f"header missing column {col!r}", 1)
        for rec in reader:
            lineno = reader.line_num
            rec = {k: (v if v != "" else None) for k, v in rec.items()}
            rec["mentions"] = _split_list(rec.get("mentions"))
            if "tokens" in rec:
                rec["tokens"] = _split_list(rec["tokens"])
            yield lineno, rec


def load_dataset(path: str | Path, format: str | None = None) -> list[Message]:
    """Read messages from a JSONL or TSV file, preserving file order.

    ``format`` defaults to the file suffix (``.tsv`` means TSV, anything
    else JSONL).
    """
    path = Path(path)
    if format is None:
        format = "tsv" if path.suffix.lower() == ".tsv" else "jsonl"
    if format not in ("jsonl", "tsv"):
        raise ValueError(f"unknown dataset format: {format}")
    records = _iter_jsonl(path) if format == "jsonl" else _iter_tsv(path)

    messages: list[Message] = []
    seen: dict[str, int] = {}
    for lineno, rec in records:
        msg = _record_to_message(rec, lineno)
        if msg.id in seen:
            raise DatasetError(f"duplicate id {msg.id!r} (first seen on line {seen[msg.id]})", lineno)
        seen[msg.id] = lineno
        messages.append(msg)
    return messages


def message_to_record(msg: Message) -> dict:
    rec = {
        "id": msg.id,
        "text": msg.text,
        "user_id": msg.user_id,
        "mentions": list(msg.mentioned_user_ids),
        "timestamp": msg.timestamp.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
    }
    if msg.tokens is not None:
        rec["tokens"] = list(msg.tokens)
    if msg.event_label is not None:
        rec["event_label"] = msg.event_label
    if msg.truth_coord is not None:
        rec["lat"], rec["lon"] = msg.truth_coord
    return rec


def write_dataset(messages: Iterable[Message], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for msg in messages:
            fh.write(json.dumps(message_to_record(msg), ensure_ascii=False) + "\n")


# ── Tokenization ────────────────────────────────────────


def _char_class(ch: str) -> str | None:
    """Segmentation class of a character; None marks a separator."""
    if ch.isspace():
        return None
    cat = unicodedata.category(ch)
    if cat[0] in ("P", "S", "Z", "C"):
        return None
    try:
        name = unicodedata.name(ch)
    except ValueError:
        return "other"
    if name.startswith(("CJK", "HIRAGANA", "KATAKANA", "HANGUL")):
        return "cjk"
    return "word"


def _is_word_char(ch: str) -> bool:
    return _char_class(ch) == "word"


def _segment(text: str) -> list[str]:
    """Split on whitespace/punctuation and at script boundaries."""
    tokens: list[str] = []
    buf: list[str] = []
    cls_prev = None
    for ch in text:
        cls = _char_class(ch)
        if cls is None or (buf and cls != cls_prev):
            if buf:
                tokens.append("".join(buf))
                buf = []
        if cls is not None:
            buf.append(ch)
        cls_prev = cls
    if buf:
        tokens.append("".join(buf))
    return tokens


class NameMatcher:
    """Greedy left-to-right longest match of a fixed name set inside text.

    Names that begin or end with a word character (Latin letters, digits)
    only match on word boundaries, so "Xian" never matches inside "Xianyang".
    """

    def __init__(self, names: Iterable[str]):
        self.names = frozenset(n for n in names if n)
        self._lengths = sorted({len(n) for n in self.names}, reverse=True)

    def find(self, text: str) -> list[tuple[int, int]]:
        """Return (start, end) spans of non-overlapping longest matches."""
        spans = []
        i, n = 0, len(text)
        while i < n:
            hit = self._match_at(text, i)
            if hit:
                spans.append((i, i + hit))
                i += hit
            else:
                i += 1
        return spans

    def _match_at(self, text: str, i: int) -> int:
        for length in self._lengths:
            end = i + length
            if end > len(text):
                continue
            cand = text[i:end]
            if cand not in self.names:
                continue
            if _is_word_char(cand[0]) and i > 0 and _is_word_char(text[i - 1]):
                continue
            if _is_word_char(cand[-1]) and end < len(text) and _is_word_char(text[end]):
                continue
            return length
        return 0


def tokenize_text(text: str, matcher: NameMatcher | None = None) -> list[str]:
    if matcher is None or not matcher.names:
        return _segment(text)
    tokens: list[str] = []
    pos = 0
    for start, end in matcher.find(text):
        tokens.extend(_segment(text[pos:start]))
        tokens.append(text[start:end])
        pos = end
    tokens.extend(_segment(text[pos:]))
    return tokens


def tokenize(message: Message, gazetteer: Gazetteer | None = None) -> list[str]:
    """Tokens of a message; pre-supplied tokens win over segmentation."""
    if message.tokens is not None:
        return list(message.tokens)
    matcher = gazetteer.matcher if gazetteer is not None else None
    return tokenize_text(message.text, matcher)
