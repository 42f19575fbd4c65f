from gridloop.kernel.api import Simulator
from gridloop.kernel.protocol import (
    MsgKind,
    NeedMore,
    ProtocolError,
    StreamDecoder,
    WireMessage,
    decode_message,
    encode_message,
)
from gridloop.kernel.remote import HandshakeTimeout, RemoteSimulator, SimulatorCrashed, SimulatorError, serve
from gridloop.kernel.world import (
    Connection,
    CycleError,
    DuplicateName,
    Entity,
    EntityId,
    RunReport,
    SimulationAborted,
    SimulatorHandle,
    UnknownAttribute,
    UnknownEntity,
    World,
    WorldError,
)

__all__ = [
    "Connection",
    "CycleError",
    "DuplicateName",
    "Entity",
    "EntityId",
    "HandshakeTimeout",
    "MsgKind",
    "NeedMore",
    "ProtocolError",
    "RemoteSimulator",
    "RunReport",
    "SimulationAborted",
    "Simulator",
    "SimulatorCrashed",
    "SimulatorError",
    "SimulatorHandle",
    "StreamDecoder",
    "UnknownAttribute",
    "UnknownEntity",
    "WireMessage",
    "World",
    "WorldError",
    "decode_message",
    "encode_message",
    "serve",
]
