"""Planted-partition event fixtures built on the shipped test gazetteer.

Every event has its own topic vocabulary, user pool, time window and
place. Messages borrow words from other events with probability
``word_noise`` and mention an out-of-province city with probability
``toponym_noise``, which is the kind of contamination the geolocation
filter is meant to remove.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from eventgeo.gazetteer import Gazetteer, GeoPoint, ToponymMention
from eventgeo.ingest import Message


@dataclass(frozen=True)
class PlantedEvent:
    label: str
    province: str
    places: tuple[str, ...]  # in-chain toponyms, coarse to fine
    center: str  # gazetteer name whose coordinates are the truth
    vocabulary: tuple[str, ...]


EVENTS = (
    PlantedEvent(
        "fog_pileup", "Henan",
        ("Zhengzhou", "Jinshui District", "Wenhua Road Subdistrict", "Huayuan Road"),
        "Huayuan Road",
        ("fog", "truck", "pileup", "visibility", "highway", "collision", "ambulance",
         "drivers", "stranded", "morning", "brakes", "lanes"),
    ),
    PlantedEvent(
        "lake_festival", "Zhejiang",
        ("Hangzhou", "West Lake District", "West Lake Street", "Manjuelong Road", "West Lake"),
        "Manjuelong Road",
        ("lanterns", "festival", "boats", "osmanthus", "crowds", "tourists", "music",
         "fireworks", "tickets", "parade", "night", "stage"),
    ),
    PlantedEvent(
        "flood_alert", "Jiangxi",
        ("Nanchang", "Donghu District", "Baihuazhou Subdistrict", "Bayi Avenue"),
        "Bayi Avenue",
        ("flood", "rain", "waterlogged", "rescue", "pumps", "evacuation", "sandbags",
         "storm", "rainfall", "submerged", "warning", "drainage"),
    ),
    PlantedEvent(
        "mall_fire", "Guangdong",
        ("Guangzhou", "Tianhe District", "Shipai Subdistrict", "Tianhe Road"),
        "Tianhe Road",
        ("fire", "smoke", "firefighters", "mall", "blaze", "alarm", "escalator",
         "shoppers", "extinguished", "sprinklers", "flames", "exits"),
    ),
    PlantedEvent(
        "quake_drill", "Sichuan",
        ("Chengdu", "Wuhou District", "Yulin Subdistrict", "Renmin South Road"),
        "Renmin South Road",
        ("earthquake", "tremor", "drill", "magnitude", "shaking", "aftershock", "school",
         "students", "seismic", "shelter", "cracks", "sirens"),
    ),
)

NOISE_CITIES = ("Wuhan", "Changsha", "Xi'an", "Beijing City", "Shanghai City", "Nanjing", "Jinan", "Kunming")

_BASE_TIME = datetime(2024, 8, 20, tzinfo=timezone.utc)


@dataclass
class Fixture:
    messages: list[Message]
    events: tuple[PlantedEvent, ...]
    truths: dict[str, GeoPoint]


def make_fixture(
    gazetteer: Gazetteer,
    per_event: int = 40,
    n_events: int = 5,
    word_noise: float = 0.05,
    toponym_noise: float = 0.10,
    words_per_message: int = 6,
    seed: int = 0,
) -> Fixture:
    if not 1 <= n_events <= len(EVENTS):
        raise ValueError(f"n_events must be within 1..{len(EVENTS)}")
    rng = np.random.default_rng(seed)
    events = EVENTS[:n_events]
    messages = []
    truths = {}
    for k, ev in enumerate(events):
        center = gazetteer.resolve(ev.center)
        if center is None:
            raise ValueError(f"gazetteer lacks planted center {ev.center!r}")
        truths[ev.label] = center.coord
        others = [w for j, o in enumerate(events) if j != k for w in o.vocabulary]
        users = [f"{ev.label}_u{i}" for i in range(8)]
        start = _BASE_TIME + timedelta(days=2 * k)
        for i in range(per_event):
            words = [
                str(rng.choice(others)) if rng.random() < word_noise else str(rng.choice(ev.vocabulary))
                for _ in range(words_per_message)
            ]
            place = str(ev.places[rng.integers(len(ev.places))])
            if rng.random() < toponym_noise:
                place = str(NOISE_CITIES[rng.integers(len(NOISE_CITIES))])
            pos = int(rng.integers(len(words) + 1))
            text = " ".join(words[:pos] + [place] + words[pos:])
            author = users[rng.integers(len(users))]
            mentions = (users[rng.integers(len(users))],) if rng.random() < 0.3 else ()
            ts = start + timedelta(seconds=int(rng.integers(0, 3 * 86400)))
            messages.append(
                Message(
                    id=f"{ev.label}-{i:03d}",
                    text=text,
                    user_id=author,
                    mentioned_user_ids=mentions,
                    timestamp=ts,
                    event_label=ev.label,
                    truth_coord=(center.coord.lat, center.coord.lon),
                )
            )
    order = rng.permutation(len(messages))
    return Fixture([messages[i] for i in order], events, truths)


def make_hist_mentions(
    gazetteer: Gazetteer,
    event: PlantedEvent = EVENTS[0],
    n: int = 200,
    noise: float = 0.10,
    seed: int = 0,
) -> tuple[list[ToponymMention], list[bool]]:
    """Mentions for one event with an exact share of planted noise.

    Returns the shuffled mentions and a parallel is-noise mask.
    """
    rng = np.random.default_rng(seed)
    n_noise = int(round(noise * n))
    in_chain = (event.province,) + event.places
    names = [str(rng.choice(in_chain)) for _ in range(n - n_noise)]
    names += [str(rng.choice(NOISE_CITIES)) for _ in range(n_noise)]
    is_noise = [False] * (n - n_noise) + [True] * n_noise
    order = rng.permutation(n)
    mentions = [ToponymMention(names[i], f"m{i}", gazetteer.resolve(names[i])) for i in order]
    return mentions, [is_noise[i] for i in order]
