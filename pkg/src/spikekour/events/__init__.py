from .sim import (
    MAX_RANGE,
    DepthFrame,
    EventCamera,
    EventFrame,
    EventSimConfig,
    EventStream,
    PixelRefState,
    delta_L_flow,
    depth_to_intensity,
    events_to_frame,
    image_gradient,
    simulate_events,
)
from .io import (
    FormatError,
    events_to_csv,
    parse_events,
    read_dseq,
    read_evt1,
    serialize_events,
    write_dseq,
    write_evt1,
)
