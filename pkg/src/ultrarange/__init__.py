"""Near-ultrasound device-to-device ranging and proximity alerting.

Subsystems:

- :mod:`ultrarange.dsp` — pulse synthesis and multipath-robust detection
- :mod:`ultrarange.ranging` — two-way ranging over unsynchronized clocks,
  neighbor classification and alerting
- :mod:`ultrarange.mac` — decentralized TDMA/SDMA slot scheduling
- :mod:`ultrarange.sim` — deterministic discrete-event acoustic simulator
- :mod:`ultrarange.scenario` / :mod:`ultrarange.metrics` — scenario files,
  experiment runs and report emission
- :mod:`ultrarange.cli` — the ``ultrarange`` command
"""

from .dsp import (
    DetectionEvent,
    DetectorConfig,
    PulseDetector,
    PulseTemplate,
    SampleBuffer,
    detect_pulses,
    make_window,
    refine_timestamp,
    synthesize_pulse,
)
from .ranging import (
    AlertDecision,
    DeviceClock,
    NeighborTable,
    RangingConfig,
    RangingRound,
    compute_distance,
    local_time,
)
from .mac import (
    ConflictGraph,
    SlotSchedule,
    assign_slots,
    build_conflict_graph,
    next_transmitters,
    update_membership,
)

__version__ = "0.1.0"
