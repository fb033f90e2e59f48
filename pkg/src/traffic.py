"""
请求-响应应用模块
固定速率的消费者/请求者，以及生产者/响应者
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set

from loguru import logger

from .kernel import Event, RandomStreams, Simulator
from .metrics import RunLog
from .packets import DATA_PAYLOAD_BYTES, DataPacket, InterestPacket, IpKind, IpPacket, Name


@dataclass
class Outstanding:
    first_send_time: float
    rtx_count: int = 0
    timer: Optional[Event] = None


@dataclass
class ConsumerState:
    """单个请求应用的进度"""
    node: int
    target: str
    total: int
    next_seq: int = 1
    outstanding: Dict[int, Outstanding] = field(default_factory=dict)
    received: Set[int] = field(default_factory=set)
    abandoned: Set[int] = field(default_factory=set)
    start_time: float = 0.0

    @property
    def issued(self) -> int:
        return self.next_seq - 1

    @property
    def finished(self) -> bool:
        return self.next_seq > self.total and not self.outstanding


class RequestApp:
    """
    恒定速率请求应用的公共逻辑

    每 1/rate 秒发出一个新序号，直到 total 个；每个请求有应用层超时，
    超时后最多重传 rtx_max 次，然后放弃该序号。延迟总是相对首次发送计算。
    """

    def __init__(self, node_id: int, target: str, sim: Simulator, streams: RandomStreams,
                 log: RunLog, config: Optional[Dict] = None, rate: float = 5.0,
                 total: int = 500, rtx_max: int = 0,
                 on_finished: Optional[Callable[['RequestApp'], None]] = None):
        traffic_config = (config or {}).get('traffic', {})
        self.sim = sim
        self.streams = streams
        self.log = log
        self.rate = rate
        self.rtx_max = rtx_max
        self.app_timeout = float(traffic_config.get('app_timeout', 2.0))
        self.start_window = tuple(traffic_config.get('start_window', [1.0, 3.0]))
        self.on_finished = on_finished
        self.state = ConsumerState(node=node_id, target=target, total=total)
        self.duplicates_ignored = 0
        self.anomalies = 0
        self.late_ignored = 0
        self._done_reported = False

    @property
    def node_id(self) -> int:
        return self.state.node

    def start(self):
        lo, hi = self.start_window
        self.state.start_time = self.streams.draw_uniform(f"app-start/{self.node_id}", lo, hi)
        self.sim.schedule(self.state.start_time, self.consumer_tick, target=self.node_id)

    # ------------------------------------------------------------ 发送

    def consumer_tick(self):
        """发出下一个序号的请求，并安排下一次发送"""
        state = self.state
        if state.next_seq > state.total:
            return

        seq = state.next_seq
        state.next_seq += 1
        now = self.sim.now
        # 先登记再发送：本地 CS 命中会同步回调 on_response，延迟记为 0、跳数为 0
        state.outstanding[seq] = Outstanding(first_send_time=now)
        self.log.record_issue(now, self.node_id, self.request_label(seq))
        self._arm_timer(seq)
        self._emit(seq, retransmission=False)

        if state.next_seq <= state.total:
            self.sim.schedule_in(1.0 / self.rate, self.consumer_tick, target=self.node_id)
        else:
            self._check_finished()

    def _arm_timer(self, seq: int):
        entry = self.state.outstanding[seq]
        entry.timer = self.sim.schedule_in(self.app_timeout, self.on_timeout, seq, target=self.node_id)

    def on_timeout(self, seq: int):
        """超时：还有重传次数则重发，否则放弃该序号"""
        entry = self.state.outstanding.get(seq)
        if entry is None:
            return
        if entry.rtx_count < self.rtx_max:
            entry.rtx_count += 1
            self._arm_timer(seq)
            self._emit(seq, retransmission=True)
            return

        del self.state.outstanding[seq]
        self.state.abandoned.add(seq)
        self._check_finished()

    # ------------------------------------------------------------ 接收

    def on_response(self, seq: int, hops: int):
        """
        首个响应记录延迟与跳数样本；重复的忽略；未发出过的序号记为异常
        """
        state = self.state
        now = self.sim.now
        entry = state.outstanding.pop(seq, None)
        if entry is None:
            if seq in state.received:
                self.duplicates_ignored += 1
                self.log.record_duplicate(now, self.node_id, self.request_label(seq))
            elif seq in state.abandoned:
                self.late_ignored += 1
            else:
                self.anomalies += 1
                self.log.record_anomaly(now, self.node_id, self.request_label(seq))
                logger.debug(f"Node {self.node_id}: response for never-issued seq {seq} ignored")
            return

        self.sim.cancel(entry.timer)
        state.received.add(seq)
        self.log.record_retrieve(now, self.node_id, self.request_label(seq), hops,
                                 now - entry.first_send_time)
        self._check_finished()

    def _check_finished(self):
        if self.state.finished and not self._done_reported:
            self._done_reported = True
            if self.on_finished is not None:
                self.on_finished(self)

    # ------------------------------------------------------------ 子类实现

    def request_label(self, seq: int) -> str:
        raise NotImplementedError

    def _emit(self, seq: int, retransmission: bool):
        raise NotImplementedError


class Consumer(RequestApp):
    """NDN 消费者：请求 /<prefix>/<seq>"""

    def __init__(self, node_id: int, prefix: str, forwarder, sim: Simulator, streams: RandomStreams,
                 log: RunLog, config: Optional[Dict] = None, discovery_on_retransmission: bool = False,
                 **kwargs):
        super().__init__(node_id, prefix, sim, streams, log, config, **kwargs)
        self.forwarder = forwarder
        self.prefix = prefix
        self.discovery_on_retransmission = discovery_on_retransmission
        self.interest_lifetime = float((config or {}).get('ndn', {}).get('interest_lifetime', 2.0))
        forwarder.app_sink = self.on_data

    def request_label(self, seq: int) -> str:
        return str(Name.of(self.prefix, seq))

    def _emit(self, seq: int, retransmission: bool):
        interest = InterestPacket(
            name=Name.of(self.prefix, seq),
            nonce=self.forwarder.new_nonce(),
            lifetime=self.interest_lifetime,
            # 自学习：超时重传的 Interest 作为发现 Interest 广播
            discovery=self.discovery_on_retransmission and retransmission,
        )
        self.forwarder.express_interest(interest)

    def on_data(self, data: DataPacket, hops: int):
        components = data.name.components
        if len(components) != 2 or components[0] != self.prefix or not components[1].isdigit():
            self.anomalies += 1
            self.log.record_anomaly(self.sim.now, self.node_id, str(data.name))
            logger.debug(f"Node {self.node_id}: unexpected Data {data.name}")
            return
        self.on_response(int(components[1]), hops)


class Producer:
    """NDN 生产者：对前缀下任意名字返回定长 Data"""

    def __init__(self, node_id: int, prefix: str, payload_size: int = DATA_PAYLOAD_BYTES):
        self.node_id = node_id
        self.prefix = Name.parse(prefix)
        self.payload_size = payload_size
        self.served = 0

    def attach(self, forwarder):
        forwarder.register_producer(self.prefix, self)

    def make_data(self, name: Name) -> DataPacket:
        self.served += 1
        return DataPacket(name=name, payload_size=self.payload_size)


class IpRequester(RequestApp):
    """IP 请求者：向固定响应者地址发送 12 字节请求"""

    def __init__(self, node_id: int, responder: int, router, sim: Simulator, streams: RandomStreams,
                 log: RunLog, config: Optional[Dict] = None, **kwargs):
        super().__init__(node_id, str(responder), sim, streams, log, config, **kwargs)
        self.router = router
        self.responder = responder
        router.app_sink = self.on_packet

    def request_label(self, seq: int) -> str:
        return f"{self.responder}#{seq}"

    def _emit(self, seq: int, retransmission: bool):
        first_send = self.state.outstanding[seq].first_send_time
        self.router.send(IpPacket(src=self.node_id, dst=self.responder, ip_kind=IpKind.REQUEST,
                                  seq=seq, timestamp=first_send))

    def on_packet(self, packet: IpPacket):
        if packet.ip_kind is not IpKind.RESPONSE or packet.src != self.responder:
            self.anomalies += 1
            self.log.record_anomaly(self.sim.now, self.node_id, f"{packet.src}#{packet.seq}")
            return
        self.on_response(packet.seq, packet.request_hops)


class IpResponder:
    """IP 响应者：回显序号、时间戳以及请求经过的跳数"""

    def __init__(self, node_id: int, router):
        self.node_id = node_id
        self.router = router
        self.served = 0
        router.app_sink = self.on_packet

    def on_packet(self, packet: IpPacket):
        if packet.ip_kind is not IpKind.REQUEST:
            return
        self.served += 1
        self.router.send(IpPacket(
            src=self.node_id,
            dst=packet.src,
            ip_kind=IpKind.RESPONSE,
            seq=packet.seq,
            timestamp=packet.timestamp,
            request_hops=packet.hop_count,
        ))


def summarize_apps(apps: List[RequestApp]) -> Dict[str, int]:
    return {
        'issued': sum(app.state.issued for app in apps),
        'received': sum(len(app.state.received) for app in apps),
        'abandoned': sum(len(app.state.abandoned) for app in apps),
        'duplicates_ignored': sum(app.duplicates_ignored for app in apps),
        'late_ignored': sum(app.late_ignored for app in apps),
    }
