from .system import (
    SENSOR_FORMATS,
    ElementInstance,
    IdealLens,
    LensSystem,
    SensorFormat,
    Stop,
    Surface,
    TiltGeometry,
    system_from_json,
    system_to_json,
)
from .trace import Ray, TraceResult, continue_to_sensor, sensor_frame, trace_bundle, trace_ray
from .paraxial import (
    FirstOrder,
    PupilInfo,
    marginal_heights,
    paraxial_chief_hit,
    paraxial_image_distance,
    paraxial_trace,
    set_fnumber,
)
from .sampling import (
    Bundle,
    ChannelWavelengths,
    Emitter,
    FieldSampling,
    default_channels,
    emitter_bundle,
    pupil_grid,
    solve_chief,
    system_fov,
)

__all__ = [
    "SENSOR_FORMATS", "ElementInstance", "IdealLens", "LensSystem",
    "SensorFormat", "Stop", "Surface", "TiltGeometry",
    "system_from_json", "system_to_json",
    "Ray", "TraceResult", "continue_to_sensor", "sensor_frame",
    "trace_bundle", "trace_ray",
    "FirstOrder", "PupilInfo", "marginal_heights", "paraxial_chief_hit",
    "paraxial_image_distance", "paraxial_trace", "set_fnumber",
    "Bundle", "ChannelWavelengths", "Emitter", "FieldSampling",
    "default_channels", "emitter_bundle", "pupil_grid", "solve_chief",
    "system_fov",
]
