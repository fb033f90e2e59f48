"""
报文定义模块
NDN 名字、Interest/Data、IP 请求/响应、AODV 控制报文及其线上字节数
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Tuple, Union

# 扁平头部假设（字节）
IP_HEADER_BYTES = 48
INTEREST_FIELDS_BYTES = 16      # nonce + lifetime
INTEREST_HEADER_BYTES = 20      # 等效 MAC 头
DATA_HEADER_BYTES = 24
DATA_PAYLOAD_BYTES = 512
IP_REQUEST_BYTES = 12           # 4 字节序号 + 8 字节时间戳
IP_RESPONSE_BYTES = 512

RREQ_BYTES = 24
RREP_BYTES = 20
RERR_BASE_BYTES = 12
RERR_PER_DEST_BYTES = 8


@dataclass(frozen=True)
class Name:
    """层次化内容名，例如 /A/42 -> ('A', '42')"""
    components: Tuple[str, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("Name must have at least one component")

    @classmethod
    def parse(cls, uri: str) -> 'Name':
        parts = tuple(part for part in uri.split('/') if part)
        return cls(parts)

    @classmethod
    def of(cls, prefix: str, seq: int) -> 'Name':
        return cls((prefix, str(seq)))

    @property
    def prefix(self) -> 'Name':
        """生产者前缀（第一个分量）"""
        return Name(self.components[:1])

    def prefixes(self):
        """从最长到最短依次给出所有前缀，用于最长前缀匹配"""
        for length in range(len(self.components), 0, -1):
            yield Name(self.components[:length])

    @property
    def wire_length(self) -> int:
        return len(str(self))

    def __str__(self) -> str:
        return '/' + '/'.join(self.components)


@dataclass(frozen=True)
class InterestPacket:
    name: Name
    nonce: int
    lifetime: float = 2.0
    discovery: bool = False
    hop_count: int = 0

    kind = 'interest'

    @property
    def size(self) -> int:
        return self.name.wire_length + INTEREST_FIELDS_BYTES + INTEREST_HEADER_BYTES

    def forwarded(self) -> 'InterestPacket':
        return replace(self, hop_count=self.hop_count + 1)


@dataclass(frozen=True)
class DataPacket:
    name: Name
    payload_size: int = DATA_PAYLOAD_BYTES
    announced_prefix: Optional[Name] = None
    hc_from_source: int = 0

    kind = 'data'

    @property
    def size(self) -> int:
        return self.payload_size + self.name.wire_length + DATA_HEADER_BYTES

    @property
    def producer_prefix(self) -> Name:
        return self.announced_prefix or self.name.prefix

    def forwarded(self) -> 'DataPacket':
        return replace(self, hc_from_source=self.hc_from_source + 1)


class IpKind(str, Enum):
    REQUEST = 'ip_request'
    RESPONSE = 'ip_response'


@dataclass(frozen=True)
class IpPacket:
    """
    UDP 风格的请求/响应数据报

    响应回显请求的序号、时间戳和请求经过的跳数。
    """
    src: int
    dst: int
    ip_kind: IpKind
    seq: int
    timestamp: float
    hop_count: int = 0
    request_hops: int = 0

    @property
    def kind(self) -> str:
        return self.ip_kind.value

    @property
    def size(self) -> int:
        body = IP_REQUEST_BYTES if self.ip_kind is IpKind.REQUEST else IP_RESPONSE_BYTES
        return body + IP_HEADER_BYTES

    def forwarded(self) -> 'IpPacket':
        return replace(self, hop_count=self.hop_count + 1)


class AodvKind(str, Enum):
    RREQ = 'rreq'
    RREP = 'rrep'
    RERR = 'rerr'
    HELLO = 'hello'


@dataclass(frozen=True)
class AodvControl:
    """AODV 控制报文（RREQ/RREP/RERR/HELLO）"""
    control: AodvKind
    originator: int = -1
    orig_seq: int = 0
    dest: int = -1
    dest_seq: int = 0
    hop_count: int = 0
    rreq_id: int = 0
    lifetime: float = 0.0
    unreachable: Tuple[Tuple[int, int], ...] = field(default_factory=tuple)

    @property
    def kind(self) -> str:
        return self.control.value

    @property
    def size(self) -> int:
        if self.control is AodvKind.RREQ:
            body = RREQ_BYTES
        elif self.control is AodvKind.RERR:
            body = RERR_BASE_BYTES + RERR_PER_DEST_BYTES * len(self.unreachable)
        else:
            body = RREP_BYTES
        return body + IP_HEADER_BYTES


Packet = Union[InterestPacket, DataPacket, IpPacket, AodvControl]
