"""punchsim: packet-level simulator and library for PU-aware opportunistic
XOR network coding in multi-hop cognitive radio networks."""

from .coding import (
    CodingGainGraph,
    CodingGraph,
    NeighbourBelief,
    build_coding_graph,
    edge_weight,
    exact_max_clique,
    greedy_max_clique,
    select_encoding,
    threshold_graph,
    to_gain_graph,
)
from .core import (
    NativePacket,
    OutputQueue,
    PacketIdAllocator,
    PacketPool,
    ReceptionReport,
    xor_combine,
)
from .pu import PuProcess, p_active, pus_affecting_link, sample_dwell
from .sim import (
    FlowSpec,
    MetricsLedger,
    PuConfig,
    Scenario,
    ScenarioError,
    Simulation,
    build_random_topology,
    build_star_topology,
    compute_metrics,
    frame_outcome,
    mac_grant_policy,
    run,
)
from .wire import (
    PunchHeader,
    decode_header,
    encode_header,
    lambda_to_q8_8,
    p_link_to_u16,
    q8_8_to_lambda,
    u16_to_p_link,
)

__version__ = "0.1.0"
