"""JSON configuration and scene documents.

Sensor config (all times in ns, rates in cps)::

    {
      "width": 64, "height": 64,
      "gate": {"length_ns": 3.8, "rise_ns": 0.55, "fall_ns": 0.55},
      "maps": null                          # constant maps (no skew)
            | {"generate": {"seed": 1, "position_fwhm_ns": 0.41, "length_fwhm_ns": 0.12}}
            | {"position_csv": "pos.csv", "length_csv": "len.csv"}
            | {"position": [[...]], "length": [[...]]},
      "pdp_efficiency": 1.0,                # scalar or 2-D list
      "dcr": 2.0                            # scalar, 2-D list, or population:
           | {"median_cps": 2.0, "spread": 0.35, "hot_fraction": 0.2, "seed": 0},
      "dcr_model": {"tunneling_floor_cps": ..., "diffusion_prefactor_cps": ..., "activation_energy_ev": 1.1},
      "temperature_k": 293.15,
      "crosstalk_p": 0.0039,
      "n_sat": 4080,
      "laser_period_ns": 25.0,
      "frame_exposure_ns": 41666.666...
    }

Every key is optional except width and height. Relative file paths resolve
against the config file's directory.

Scene::

    {
      "ambient": 0.0,            # counts per ns of open gate per frame
      "focal_px": 100.0,
      "returns": [{"amplitude": 0.5, "delay_ns": 3.0}, ...],     # same at every pixel
      "pixels": [[[[a, d], ...], ...], ...],                     # or explicit per pixel
      "primitives": [
        {"type": "flat", "distance_m": 0.75, "amplitude": 0.5},
        {"type": "plate", "distance_m": 0.45, "amplitude": 0.2, "transmittance": 0.8},
        {"type": "sphere", "distance_m": 0.75, "radius_m": 0.15, "amplitude": 0.6,
         "center_px": [32, 32]},
        {"type": "image", "distance_m": 1.0, "amplitude": 1.0, "image_csv": "refl.csv"}
      ]
    }

Primitives accept an optional ``region`` [row0, col0, row1, col1].
"""

import json
from pathlib import Path

import numpy as np

from . import formats
from .errors import ConfigError
from .gate import GateProfile, PixelMaps, SkewParams, generate_pixel_maps
from .scene import Primitive, Scene, rasterize
from .sensor import FRAME_EXPOSURE_NS, ROOM_TEMPERATURE_K, DcrParams, DcrPopulation, SensorConfig

DEFAULTS = {
    "gate": {"length_ns": 3.8, "rise_ns": 0.55, "fall_ns": 0.55},
    "maps": None,
    "pdp_efficiency": 1.0,
    "dcr": 2.0,
    "temperature_k": ROOM_TEMPERATURE_K,
    "crosstalk_p": 0.0039,
    "n_sat": 4080,
    "laser_period_ns": 25.0,
    "frame_exposure_ns": FRAME_EXPOSURE_NS,
}

_CONFIG_KEYS = set(DEFAULTS) | {"width", "height", "dcr_model"}


def _read_json(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}", "json") from exc


def _number(doc, key, cast=float):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", key)
    return cast(v)


def _grid(value, key, shape, base):
    """Scalar, nested list, or {"csv": path} -> float array or scalar."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, dict) and "csv" in value:
        arr = formats.read_map_csv(base / value["csv"])
    elif isinstance(value, list):
        arr = np.asarray(value, dtype=float)
    else:
        raise ConfigError(f"expected a number, 2-D list or {{'csv': path}}, got {value!r}", key)
    if arr.shape != shape:
        raise ConfigError(f"expected shape {shape}, got {arr.shape}", key)
    return arr


def config_from_dict(doc, base_dir="."):
    """Build a validated :class:`SensorConfig` from a parsed document."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", "config")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", "config")
    for key in ("width", "height"):
        if key not in doc:
            raise ConfigError("required", key)
    base = Path(base_dir)
    d = {**DEFAULTS, **doc}
    width, height = _number(d, "width", int), _number(d, "height", int)
    if width <= 0 or height <= 0:
        raise ConfigError("sensor dimensions must be positive", "width/height")
    shape = (height, width)

    g = {**DEFAULTS["gate"], **(d["gate"] or {})}
    gate = GateProfile.anchored(float(g["length_ns"]), float(g["rise_ns"]), float(g["fall_ns"]))

    m = d["maps"]
    if m is None:
        maps = PixelMaps.constant(width, height, 0.0, gate.length)
    elif "generate" in m:
        gen = dict(m["generate"])
        sp = SkewParams(
            position_fwhm=float(gen.get("position_fwhm_ns", 0.41)),
            length_fwhm=float(gen.get("length_fwhm_ns", 0.12)),
            nominal_length=float(gen.get("nominal_length_ns", gate.length)),
        )
        maps = generate_pixel_maps(width, height, sp, int(gen.get("seed", 0)))
    elif "position_csv" in m:
        maps = PixelMaps(formats.read_map_csv(base / m["position_csv"]),
                         formats.read_map_csv(base / m["length_csv"]))
    elif "position" in m:
        maps = PixelMaps(np.asarray(m["position"], float), np.asarray(m["length"], float))
    else:
        raise ConfigError("expected null, generate, position_csv or position/length", "maps")

    dcr = d["dcr"]
    if isinstance(dcr, dict) and "csv" not in dcr:
        pop = DcrPopulation(
            median_cps=float(dcr.get("median_cps", 2.0)),
            spread=float(dcr.get("spread", 0.35)),
            hot_fraction=float(dcr.get("hot_fraction", 0.2)),
            hot_factor=float(dcr.get("hot_factor", 8.0)),
        )
        dcr_map = pop.rate_map(width, height, int(dcr.get("seed", 0)), float(d["temperature_k"]))
    else:
        dcr_map = _grid(dcr, "dcr", shape, base)

    dcr_params = None
    if doc.get("dcr_model") is not None:
        dm = doc["dcr_model"]
        dcr_params = DcrParams(float(dm.get("tunneling_floor_cps", 0.0)),
                               float(dm.get("diffusion_prefactor_cps", 0.0)),
                               float(dm.get("activation_energy_ev", 1.1)))

    return SensorConfig(
        width, height, maps, gate,
        pdp_efficiency=_grid(d["pdp_efficiency"], "pdp_efficiency", shape, base),
        dcr=dcr_map,
        crosstalk_p=_number(d, "crosstalk_p"),
        n_sat=_number(d, "n_sat", int),
        laser_period_ns=_number(d, "laser_period_ns"),
        frame_exposure_ns=_number(d, "frame_exposure_ns"),
        dcr_params=dcr_params,
        temperature_k=_number(d, "temperature_k"),
    )


def load_config(path):
    """Read and validate a sensor config file."""
    path = Path(path)
    return config_from_dict(_read_json(path), path.parent)


def _plain(a):
    a = np.asarray(a, dtype=float)
    if a.size and np.all(a == a.flat[0]):
        return float(a.flat[0])
    return a.tolist()


def config_to_dict(config):
    """Self-contained document that reloads to an identical config."""
    doc = {
        "width": config.width,
        "height": config.height,
        "gate": {"length_ns": config.gate.length, "rise_ns": config.gate.rise, "fall_ns": config.gate.fall},
        "maps": {"position": config.maps.position.tolist(), "length": config.maps.length.tolist()},
        "pdp_efficiency": _plain(config.pdp_efficiency),
        "dcr": _plain(config.dcr),
        "temperature_k": config.temperature_k,
        "crosstalk_p": config.crosstalk_p,
        "n_sat": config.n_sat,
        "laser_period_ns": config.laser_period_ns,
        "frame_exposure_ns": config.frame_exposure_ns,
    }
    if config.dcr_params is not None:
        p = config.dcr_params
        doc["dcr_model"] = {"tunneling_floor_cps": p.tunneling_floor,
                            "diffusion_prefactor_cps": p.diffusion_prefactor,
                            "activation_energy_ev": p.activation_energy}
    return doc


def save_config(config, path):
    formats.write_json(path, config_to_dict(config))


def configs_equal(a, b):
    """Field-by-field equality including every per-pixel map."""
    arrays = lambda c: (c.maps.position, c.maps.length, c.pdp_efficiency, c.dcr)
    scalars = lambda c: (c.width, c.height, c.gate, c.crosstalk_p, c.n_sat, c.laser_period_ns,
                         c.frame_exposure_ns, c.dcr_params, c.temperature_k)
    return scalars(a) == scalars(b) and all(np.array_equal(x, y) for x, y in zip(arrays(a), arrays(b)))


# --------------------------------------------------------------------------
# Scenes

_PRIM_KEYS = {"type", "distance_m", "amplitude", "transmittance", "radius_m", "center_px", "region",
              "image", "image_csv"}


def _primitive(item, index, base):
    where = f"primitives[{index}]"
    if not isinstance(item, dict) or "type" not in item:
        raise ConfigError("each primitive needs a type", where)
    unknown = set(item) - _PRIM_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", where)
    kind = item["type"]
    image = None
    if kind == "image":
        if "image_csv" in item:
            image = formats.read_map_csv(base / item["image_csv"])
        elif "image" in item:
            image = np.asarray(item["image"], dtype=float)
    if "distance_m" not in item:
        raise ConfigError("distance_m is required", where)
    try:
        return Primitive(
            kind=kind,
            distance_m=float(item["distance_m"]),
            amplitude=float(item.get("amplitude", 1.0)),
            transmittance=float(item.get("transmittance", 0.0)),
            radius_m=float(item.get("radius_m", 0.0)),
            center_px=tuple(item["center_px"]) if item.get("center_px") is not None else None,
            region=tuple(item["region"]) if item.get("region") is not None else None,
            image=image,
        )
    except ConfigError as exc:
        raise ConfigError(str(exc), where) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed primitive: {exc}", where) from exc


def scene_from_dict(doc, width, height, base_dir="."):
    if not isinstance(doc, dict):
        raise ConfigError("scene must be a JSON object", "scene")
    base = Path(base_dir)
    width = int(doc.get("width", width))
    height = int(doc.get("height", height))
    ambient = float(doc.get("ambient", 0.0))
    kinds = [k for k in ("returns", "pixels", "primitives") if k in doc]
    if len(kinds) > 1:
        raise ConfigError(f"use only one of returns/pixels/primitives, got {kinds}", "scene")
    if not kinds:
        return Scene.empty(width, height, ambient)
    if "returns" in doc:
        rets = [(float(r["amplitude"]), float(r["delay_ns"])) for r in doc["returns"]]
        return Scene.uniform(width, height, rets, ambient)
    if "pixels" in doc:
        sc = Scene.from_pixel_returns(doc["pixels"], ambient)
        if sc.shape != (height, width):
            raise ConfigError(f"pixel grid is {sc.shape}, sensor is {(height, width)}", "pixels")
        return sc
    prims = [_primitive(p, i, base) for i, p in enumerate(doc["primitives"])]
    if not prims:
        return Scene.empty(width, height, ambient)
    return rasterize(prims, width, height, float(doc.get("focal_px", 100.0)), ambient)


def load_scene(path, width, height):
    """Read a scene file for a ``width`` x ``height`` sensor."""
    path = Path(path)
    return scene_from_dict(_read_json(path), width, height, path.parent)
