from .framing import Frame, FrameDecoder, crc16
from .session import LeakageLedger, MsgType, ProtocolError, Session, leakage_ledger
from .transport import FrameLink, InProcTransport, LossyTransport, SocketTransport, read_capture

__all__ = [
    "Frame", "FrameDecoder", "crc16", "LeakageLedger", "MsgType", "ProtocolError", "Session",
    "leakage_ledger", "FrameLink", "InProcTransport", "LossyTransport", "SocketTransport",
    "read_capture",
]
