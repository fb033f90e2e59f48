"""
IP-AODV 路由模块
按需路由发现（RREQ/RREP）、HELLO 邻居存活检测、RERR 失效通告，以及逐跳 IP 数据转发
"""
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from typing import Callable, Deque, Dict, List, Optional, Set, Tuple

from loguru import logger

from .kernel import Event, RandomStreams, Simulator
from .packets import AodvControl, AodvKind, IpPacket
from .radio import Frame, Link


@dataclass
class RouteEntry:
    dest: int
    next_hop: int
    hop_count: int
    dest_seq: int
    lifetime_expiry: float
    active: bool = True
    valid_seq: bool = True
    precursors: Set[int] = field(default_factory=set)
    last_used: float = float('-inf')

    def usable(self, now: float) -> bool:
        return self.active and self.lifetime_expiry > now


class PendingBuffer:
    """等待路由的数据报队列，满时丢弃最旧的一个"""

    def __init__(self, capacity: int = 64):
        self.capacity = capacity
        self._queue: Deque[IpPacket] = deque()

    def __len__(self) -> int:
        return len(self._queue)

    def push(self, packet: IpPacket) -> Optional[IpPacket]:
        dropped = None
        if len(self._queue) >= self.capacity:
            dropped = self._queue.popleft()
        self._queue.append(packet)
        return dropped

    def drain(self) -> List[IpPacket]:
        packets = list(self._queue)
        self._queue.clear()
        return packets


@dataclass
class _Discovery:
    attempt: int
    timer: Optional[Event] = None


IpSink = Callable[[IpPacket], None]


class AodvRouter:
    """
    单节点 AODV 路由器

    不做扩展环搜索、本地修复与无偿 RREP。中继节点没有可用路由时丢弃数据并广播 RERR，
    只有源节点缓存数据并发起路由发现。
    """

    scheme = 'aodv'

    def __init__(self, node_id: int, sim: Simulator, link: Link, streams: RandomStreams,
                 config: Optional[Dict] = None):
        """
        初始化路由器

        Args:
            node_id: 节点 IP 地址（与链路地址相同）
            sim: 仿真器
            link: 链路层
            streams: 随机数流（HELLO 相位、RREQ 转发抖动）
            config: 配置字典（读取 aodv 段）
        """
        aodv_config = (config or {}).get('aodv', {})
        self.node_id = node_id
        self.sim = sim
        self.link = link
        self.streams = streams
        self.hello_interval = float(aodv_config.get('hello_interval', 1.0))
        self.allowed_hello_loss = int(aodv_config.get('allowed_hello_loss', 2))
        self.active_route_timeout = float(aodv_config.get('active_route_timeout', 3.0))
        self.rreq_retries = int(aodv_config.get('rreq_retries', 2))
        self.node_traversal_time = float(aodv_config.get('node_traversal_time', 0.04))
        self.net_diameter = int(aodv_config.get('net_diameter', 35))
        self.rreq_id_cache = float(aodv_config.get('rreq_id_cache', 6.0))
        self.buffer_capacity = int(aodv_config.get('buffer_capacity', 64))
        self.rreq_jitter = float(aodv_config.get('rreq_jitter', 0.01))
        self.net_traversal_time = 2 * self.node_traversal_time * self.net_diameter

        self.seq_num = 0
        self.rreq_id = 0
        self.routes: Dict[int, RouteEntry] = {}
        self.pending: Dict[int, PendingBuffer] = {}
        self.discoveries: Dict[int, _Discovery] = {}
        self.rreq_seen: Dict[Tuple[int, int], float] = {}
        # 每个 (originator, rreq_id) 已处理副本的最少跳数与等待中的转发
        self.rreq_hops: Dict[Tuple[int, int], int] = {}
        self._rreq_forwards: Dict[Tuple[int, int], Event] = {}
        self.last_heard: Dict[int, float] = {}
        self.app_sink: Optional[IpSink] = None
        self.counters: Counter = Counter()
        self._phase = streams.draw_uniform(f"aodv-hello/{node_id}", 0.0, self.hello_interval)

    @property
    def link_break_after(self) -> float:
        return self.allowed_hello_loss * self.hello_interval

    def start(self):
        self.sim.schedule_in(self._phase, self.hello_tick, target=self.node_id)

    # ------------------------------------------------------------ 路由表

    def active_route(self, dest: int) -> Optional[RouteEntry]:
        route = self.routes.get(dest)
        if route is not None and route.usable(self.sim.now):
            return route
        return None

    def _install(self, dest: int, next_hop: int, hop_count: int, dest_seq: int,
                 lifetime: float, valid_seq: bool = True) -> Tuple[RouteEntry, bool]:
        """
        按序号新鲜度与跳数规则安装路由

        Returns:
            (路由条目, 是否更新)
        """
        now = self.sim.now
        if dest == self.node_id:
            raise ValueError(f"Node {self.node_id} cannot install a route to itself")

        existing = self.routes.get(dest)
        better = (
            existing is None
            or not existing.usable(now)
            or not existing.valid_seq
            or (valid_seq and dest_seq > existing.dest_seq)
            or (dest_seq == existing.dest_seq and hop_count < existing.hop_count)
        )
        if not better:
            if existing.next_hop == next_hop and existing.hop_count == hop_count:
                existing.lifetime_expiry = max(existing.lifetime_expiry, now + lifetime)
            return existing, False

        route = RouteEntry(dest, next_hop, hop_count, dest_seq, now + lifetime, True, valid_seq)
        if existing is not None:
            route.precursors = existing.precursors
            route.last_used = existing.last_used
        self.routes[dest] = route
        return route, True

    def _touch_neighbor(self, neighbor: int):
        """收到邻居的控制报文：建立/刷新一跳路由"""
        now = self.sim.now
        route = self.routes.get(neighbor)
        if route is not None and route.usable(now) and route.next_hop == neighbor and route.hop_count == 1:
            route.lifetime_expiry = max(route.lifetime_expiry, now + self.active_route_timeout)
            return
        seq = route.dest_seq if route is not None else 0
        self._install(neighbor, neighbor, 1, seq, self.active_route_timeout, valid_seq=False)

    def _refresh(self, route: Optional[RouteEntry]):
        if route is None:
            return
        now = self.sim.now
        route.lifetime_expiry = max(route.lifetime_expiry, now + self.active_route_timeout)
        route.last_used = now

    # ------------------------------------------------------------ 链路接口

    def receive(self, frame: Frame):
        self.last_heard[frame.sender] = self.sim.now
        packet = frame.payload
        if isinstance(packet, IpPacket):
            self.on_ip(packet, frame.sender)
        elif isinstance(packet, AodvControl):
            if packet.control is AodvKind.RREQ:
                self.handle_rreq(packet, frame.sender)
            elif packet.control is AodvKind.RREP:
                self.handle_rrep(packet, frame.sender)
            elif packet.control is AodvKind.RERR:
                self.handle_rerr(packet, frame.sender)
            elif packet.control is AodvKind.HELLO:
                self.handle_hello(packet, frame.sender)

    def overhear(self, frame: Frame):
        """听到的任何帧都算作邻居存活"""
        self.last_heard[frame.sender] = self.sim.now

    # ------------------------------------------------------------ 数据

    def send(self, packet: IpPacket):
        """本地应用发出的数据报"""
        self.send_or_discover(packet)

    def send_or_discover(self, packet: IpPacket):
        """
        有可用路由则单播给下一跳；否则缓存并发起路由发现

        Args:
            packet: 源节点发出的数据报
        """
        route = self.active_route(packet.dst)
        if route is not None:
            self._forward(packet, route)
            return

        buffer = self.pending.setdefault(packet.dst, PendingBuffer(self.buffer_capacity))
        if buffer.push(packet) is not None:
            self.counters['buffer_overflow'] += 1
        if packet.dst not in self.discoveries:
            self._start_discovery(packet.dst)

    def _forward(self, packet: IpPacket, route: RouteEntry):
        self._refresh(route)
        self._refresh(self.routes.get(route.next_hop))
        if packet.src != self.node_id:
            self._refresh(self.active_route(packet.src))
        self.link.send(packet.forwarded(), route.next_hop)

    def on_ip(self, packet: IpPacket, sender: int):
        if packet.dst == self.node_id:
            self._refresh(self.active_route(packet.src))
            if self.app_sink is not None:
                self.app_sink(packet)
            return

        route = self.active_route(packet.dst)
        if route is None:
            self.counters['data_dropped_no_route'] += 1
            known = self.routes.get(packet.dst)
            seq = known.dest_seq + 1 if known is not None else 0
            self._send_rerr([(packet.dst, seq)])
            return
        self._forward(packet, route)

    # ------------------------------------------------------------ 路由发现

    def _start_discovery(self, dest: int):
        self.discoveries[dest] = _Discovery(attempt=0)
        self._send_rreq(dest)

    def _send_rreq(self, dest: int):
        discovery = self.discoveries[dest]
        self.seq_num += 1
        self.rreq_id += 1
        self.rreq_seen[(self.node_id, self.rreq_id)] = self.sim.now + self.rreq_id_cache

        known = self.routes.get(dest)
        rreq = AodvControl(
            AodvKind.RREQ,
            originator=self.node_id,
            orig_seq=self.seq_num,
            dest=dest,
            dest_seq=known.dest_seq if known is not None and known.valid_seq else 0,
            hop_count=0,
            rreq_id=self.rreq_id,
        )
        self.link.send(rreq, None)
        self.counters['rreq_originated'] += 1

        wait = self.net_traversal_time * (2 ** discovery.attempt)
        discovery.timer = self.sim.schedule_in(wait, self._on_rreq_timeout, dest, target=self.node_id)

    def _on_rreq_timeout(self, dest: int):
        discovery = self.discoveries.get(dest)
        if discovery is None:
            return
        if self.active_route(dest) is not None:
            self._finish_discovery(dest)
            return
        if discovery.attempt >= self.rreq_retries:
            del self.discoveries[dest]
            dropped = self.pending.pop(dest, None)
            count = len(dropped) if dropped is not None else 0
            self.counters['buffer_dropped_no_route'] += count
            logger.debug(f"Node {self.node_id}: route discovery to {dest} failed, dropped {count} packets")
            return
        discovery.attempt += 1
        self._send_rreq(dest)

    def _finish_discovery(self, dest: int):
        discovery = self.discoveries.pop(dest, None)
        if discovery is not None:
            self.sim.cancel(discovery.timer)
        buffer = self.pending.pop(dest, None)
        route = self.active_route(dest)
        if buffer is None or route is None:
            return
        for packet in buffer.drain():
            self._forward(packet, route)

    def _purge_rreq_seen(self, now: float):
        expired = [key for key, expiry in self.rreq_seen.items() if expiry <= now]
        for key in expired:
            del self.rreq_seen[key]
            self.rreq_hops.pop(key, None)
            self._rreq_forwards.pop(key, None)

    def handle_rreq(self, rreq: AodvControl, sender: int):
        """
        处理 RREQ：去重、建立反向路由；本节点是目的或持有足够新的路由时回 RREP，否则抖动后继续广播

        同一 RREQ 的后续副本只在跳数严格更少时处理：更新反向路由，目的节点再回一次 RREP，
        中继重新安排转发。源节点可借此从多个 RREP 中得到最短路径。
        """
        now = self.sim.now
        self._touch_neighbor(sender)

        key = (rreq.originator, rreq.rreq_id)
        hop_count = rreq.hop_count + 1
        expiry = self.rreq_seen.get(key)
        if expiry is not None and expiry > now:
            best = self.rreq_hops.get(key)
            if rreq.originator == self.node_id or best is None or hop_count >= best:
                self.counters['rreq_duplicate'] += 1
                return
            self.counters['rreq_shorter_copy'] += 1
        else:
            self.rreq_seen[key] = now + self.rreq_id_cache
            if rreq.originator == self.node_id:
                return
        self.rreq_hops[key] = hop_count

        reverse_lifetime = 2 * self.net_traversal_time - 2 * hop_count * self.node_traversal_time
        reverse, _ = self._install(rreq.originator, sender, hop_count, rreq.orig_seq,
                                   max(reverse_lifetime, self.active_route_timeout))

        if rreq.dest == self.node_id:
            self.seq_num = max(self.seq_num, rreq.dest_seq)
            rrep = AodvControl(
                AodvKind.RREP,
                originator=rreq.originator,
                dest=self.node_id,
                dest_seq=self.seq_num,
                hop_count=0,
                lifetime=2 * self.active_route_timeout,
            )
            self.link.send(rrep, reverse.next_hop)
            self.counters['rrep_originated'] += 1
            return

        route = self.active_route(rreq.dest)
        if route is not None and route.valid_seq and route.dest_seq >= rreq.dest_seq and route.next_hop != sender:
            rrep = AodvControl(
                AodvKind.RREP,
                originator=rreq.originator,
                dest=rreq.dest,
                dest_seq=route.dest_seq,
                hop_count=route.hop_count,
                lifetime=route.lifetime_expiry - now,
            )
            route.precursors.add(reverse.next_hop)
            reverse.precursors.add(route.next_hop)
            self.link.send(rrep, reverse.next_hop)
            self.counters['rrep_intermediate'] += 1
            return

        known_seq = route.dest_seq if route is not None else 0
        forward = replace(rreq, hop_count=hop_count, dest_seq=max(rreq.dest_seq, known_seq))
        self._schedule_rreq_forward(key, forward)

    def _schedule_rreq_forward(self, key: Tuple[int, int], rreq: AodvControl):
        """在 [0, rreq_jitter] 的随机延迟后广播；更短的副本替换尚未发出的转发"""
        self.sim.cancel(self._rreq_forwards.get(key))
        delay = self.streams.draw_uniform(f"aodv-jitter/{self.node_id}", 0.0, self.rreq_jitter)
        self._rreq_forwards[key] = self.sim.schedule_in(delay, self._forward_rreq, key, rreq,
                                                        target=self.node_id)

    def _forward_rreq(self, key: Tuple[int, int], rreq: AodvControl):
        self._rreq_forwards.pop(key, None)
        self.link.send(rreq, None)
        self.counters['rreq_forwarded'] += 1

    def handle_rrep(self, rrep: AodvControl, sender: int):
        """
        处理 RREP：序号更新或跳数更少时安装前向路由；源节点结束发现并发送缓存数据，
        中继沿反向路由继续转发
        """
        self._touch_neighbor(sender)
        hop_count = rrep.hop_count + 1
        route, updated = self._install(rrep.dest, sender, hop_count, rrep.dest_seq, rrep.lifetime)
        if not updated:
            self.counters['rrep_stale'] += 1

        if rrep.originator == self.node_id:
            if route.usable(self.sim.now) and rrep.dest in self.discoveries:
                self._finish_discovery(rrep.dest)
            return
        if not updated:
            return

        reverse = self.active_route(rrep.originator)
        if reverse is None:
            self.counters['rrep_no_reverse'] += 1
            return
        route.precursors.add(reverse.next_hop)
        self.link.send(replace(rrep, hop_count=hop_count), reverse.next_hop)

    def handle_hello(self, hello: AodvControl, sender: int):
        route, _ = self._install(sender, sender, 1, hello.dest_seq, hello.lifetime)
        route.lifetime_expiry = max(route.lifetime_expiry, self.sim.now + hello.lifetime)

    # ------------------------------------------------------------ 路由维护

    def hello_tick(self):
        """
        周期任务：检测下一跳失联、让闲置路由失效；承载活动路由且最近一个间隔内未发送过任何帧时广播 HELLO
        """
        now = self.sim.now
        used_since = now - self.active_route_timeout
        silent_limit = self.link_break_after

        broken: Set[int] = set()
        for route in self.routes.values():
            if not route.usable(now) or route.last_used < used_since:
                continue
            heard = self.last_heard.get(route.next_hop, float('-inf'))
            if now - heard > silent_limit:
                broken.add(route.next_hop)
        for neighbor in sorted(broken):
            self.detect_link_break(neighbor)

        has_active = False
        for route in self.routes.values():
            if route.active and route.lifetime_expiry <= now:
                route.active = False
            elif route.active and route.last_used >= used_since:
                has_active = True

        if has_active and now - self.link.last_tx_time >= self.hello_interval:
            hello = AodvControl(
                AodvKind.HELLO,
                dest=self.node_id,
                dest_seq=self.seq_num,
                hop_count=0,
                lifetime=self.link_break_after,
            )
            self.link.send(hello, None)
            self.counters['hello_sent'] += 1

        self._purge_rreq_seen(now)
        self.sim.schedule_in(self.hello_interval, self.hello_tick, target=self.node_id)

    def detect_link_break(self, neighbor: int):
        """把经 neighbor 的路由标记为失效，有前驱节点时广播 RERR"""
        unreachable: List[Tuple[int, int]] = []
        notify = False
        for route in self.routes.values():
            if route.active and route.next_hop == neighbor:
                route.active = False
                route.dest_seq += 1
                unreachable.append((route.dest, route.dest_seq))
                notify = notify or bool(route.precursors)

        self.counters['link_breaks'] += 1
        logger.debug(f"Node {self.node_id}: link to {neighbor} lost at t={self.sim.now:.3f}, "
                     f"{len(unreachable)} routes invalidated")
        if unreachable and notify:
            self._send_rerr(unreachable)

    def handle_rerr(self, rerr: AodvControl, sender: int):
        affected: List[Tuple[int, int]] = []
        notify = False
        for dest, seq in rerr.unreachable:
            route = self.routes.get(dest)
            if route is None or not route.active or route.next_hop != sender:
                continue
            route.active = False
            route.dest_seq = max(route.dest_seq, seq)
            affected.append((dest, route.dest_seq))
            notify = notify or bool(route.precursors)

        if affected and notify:
            self._send_rerr(affected)

    def _send_rerr(self, unreachable: List[Tuple[int, int]]):
        self.link.send(AodvControl(AodvKind.RERR, unreachable=tuple(unreachable)), None)
        self.counters['rerr_sent'] += 1
