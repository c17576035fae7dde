"""Peer-to-peer multi-node construction and its single-node spill variant."""

from .node import NodeConfig, merge_pair, run_node, simulate_cluster
from .protocol import Frame, MsgType, decode_frame, encode_frame
from .schedule import n_rounds, pair_tasks, schedule
from .transport import InProcessHub, TcpTransport
from .spill import Residency, external_storage_build
