"""Detect events in social messages and place them on the map."""

from eventgeo.detect import EventClusterSet, ModelParams, TrainConfig, detect_events, train
from eventgeo.gazetteer import (
    Gazetteer,
    GazetteerEntry,
    Geocoder,
    GeoPoint,
    HierarchyChain,
    ToponymMention,
    default_gazetteer_path,
    load_gazetteer,
)
from eventgeo.geoloc import GeolocationConfig, geolocate_event
from eventgeo.graph import FeatureConfig, build_message_graph
from eventgeo.hyperbolic import HyperbolicConfig, exp_map, log_map
from eventgeo.ingest import Message, load_dataset, ole_date
from eventgeo.metrics import acc_at, error_stats, haversine

__version__ = "0.1.0"
