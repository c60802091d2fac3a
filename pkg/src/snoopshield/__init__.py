"""snoopshield: smart-home traffic-metadata attack and shaping-defense toolkit.

Submodules:
  trace     packet/flow model, trace CSV format, synthetic device traces
  identify  OUI / DNS / traffic-rate device identification
  infer     rate-spike activity inference and VPN tunnel aggregation
  shield    link-padding shaper simulator and overhead reporting
  harness   end-to-end evaluation pipeline (see also the CLI: `snoopshield`)
"""

__version__ = "0.1.0"

from .trace import (  # noqa: F401
    ArchetypeKind,
    DeviceArchetype,
    Direction,
    Flow,
    FlowKey,
    PacketRecord,
    Protocol,
    RateScope,
    RateSeries,
    TraceFormatError,
    emit_trace,
    extract_dns,
    parse_trace,
    rate_series,
    split_flows,
    synth_device_trace,
)
from .identify import (  # noqa: F401
    DnsFingerprintDb,
    KnnModel,
    OuiTable,
    WindowFeature,
    dns_identify,
    knn_classify,
    knn_train,
    oui_lookup,
    stratified_cv,
    window_features,
)
from .infer import (  # noqa: F401
    ActivityEvent,
    ActivityKind,
    CameraMode,
    EventDetectorConfig,
    TunnelTrace,
    aggregate_tunnel,
    classify_camera_mode,
    detect_events,
    infer_activities,
)
from .shield import (  # noqa: F401
    Cell,
    CellOrigin,
    Discipline,
    OverheadReport,
    ShapedSchedule,
    ShapingConfig,
    cellify,
    cost_context,
    gb_per_month,
    overhead_report,
    shape,
    shape_home,
)
