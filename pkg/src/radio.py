"""
无线与移动模块
网格布点、二维随机游走、单位圆盘连通性，以及简化的 CSMA/CA 共享信道
"""
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Deque, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .kernel import RandomStreams, Simulator
from .packets import Packet

RADIO_RADIUS_M = 125.0
LEG_DURATION_S = 5.0
_RANGE_EPS = 1e-9


@dataclass(frozen=True)
class AreaSpec:
    grid_cols: int
    grid_rows: int
    spacing: float
    area_w: float
    area_h: float
    radio_radius: float = RADIO_RADIUS_M

    @property
    def capacity(self) -> int:
        return self.grid_cols * self.grid_rows

    @classmethod
    def from_dict(cls, data: Dict) -> 'AreaSpec':
        return cls(
            grid_cols=int(data['grid_cols']),
            grid_rows=int(data['grid_rows']),
            spacing=float(data.get('spacing', 100.0)),
            area_w=float(data['area_w']),
            area_h=float(data['area_h']),
            radio_radius=float(data.get('radio_radius', RADIO_RADIUS_M)),
        )


PRESET_50 = AreaSpec(grid_cols=10, grid_rows=5, spacing=100.0, area_w=1500.0, area_h=1000.0)
PRESET_100 = AreaSpec(grid_cols=10, grid_rows=10, spacing=100.0, area_w=1500.0, area_h=1500.0)
PRESETS = {50: PRESET_50, 100: PRESET_100}


@dataclass(frozen=True)
class NodePosition:
    """节点在 time 时刻的位置与当前运动段"""
    node: int
    x: float
    y: float
    heading: float = 0.0
    speed: float = 0.0
    leg_end: float = LEG_DURATION_S
    time: float = 0.0


def place_grid(count: int, area: AreaSpec, rng: Optional[np.random.Generator] = None) -> List[NodePosition]:
    """
    把节点放到网格交点上，节点编号到交点的映射是随机排列

    Args:
        count: 节点数
        area: 区域规格
        rng: 随机数发生器；为 None 时按行优先顺序放置

    Returns:
        NodePosition 列表，第 i 项属于节点 i

    Raises:
        ValueError: 节点数超过网格容量
    """
    if count > area.capacity:
        raise ValueError(f"{count} nodes exceed grid capacity {area.capacity}")

    slots = [(col * area.spacing, row * area.spacing)
             for row in range(area.grid_rows) for col in range(area.grid_cols)]
    order = rng.permutation(len(slots))[:count] if rng is not None else range(count)

    return [NodePosition(node=i, x=float(slots[slot][0]), y=float(slots[slot][1]))
            for i, slot in enumerate(order)]


def _reflect(u: float, size: float) -> Tuple[float, bool]:
    """把无界坐标折回 [0, size]，返回 (坐标, 是否奇数次反射)"""
    if size <= 0:
        return 0.0, False
    period = 2.0 * size
    m = u % period
    if m > size:
        return period - m, True
    return m, False


def step_mobility(pos: NodePosition, now: float, area: AreaSpec,
                  rng: Optional[np.random.Generator] = None,
                  leg_duration: float = LEG_DURATION_S) -> NodePosition:
    """
    随机游走：沿当前航向匀速前进，边界反射；到达运动段终点时重新抽取航向

    Args:
        pos: 当前位置
        now: 推进到的时刻
        area: 区域边界
        rng: 'mobility' 流；到达段终点时用于抽取新航向
        leg_duration: 运动段长度（秒）

    Returns:
        now 时刻的新位置
    """
    if pos.speed <= 0:
        return replace(pos, time=now)

    dt = now - pos.time
    cos_h, sin_h = math.cos(pos.heading), math.sin(pos.heading)
    x, flip_x = _reflect(pos.x + pos.speed * cos_h * dt, area.area_w)
    y, flip_y = _reflect(pos.y + pos.speed * sin_h * dt, area.area_h)
    heading = math.atan2(-sin_h if flip_y else sin_h, -cos_h if flip_x else cos_h)

    leg_end = pos.leg_end
    while leg_end <= now:
        if rng is not None:
            heading = float(rng.uniform(0.0, 2.0 * math.pi))
        leg_end += leg_duration

    return NodePosition(pos.node, x, y, heading, pos.speed, leg_end, now)


def in_range(a: NodePosition, b: NodePosition, radio_radius: float = RADIO_RADIUS_M) -> bool:
    """单位圆盘模型：欧氏距离 <= 半径（闭边界）"""
    return math.hypot(a.x - b.x, a.y - b.y) <= radio_radius + _RANGE_EPS


class Topology:
    """
    全体节点的位置与邻居查询

    每个节点保存当前运动段的起点，段内位置按反射折叠公式解析计算。
    """

    def __init__(self, area: AreaSpec, positions: Sequence[NodePosition]):
        self.area = area
        self.radius = area.radio_radius
        self.size = len(positions)
        self._x0 = np.array([p.x for p in positions], dtype=float)
        self._y0 = np.array([p.y for p in positions], dtype=float)
        self._t0 = np.array([p.time for p in positions], dtype=float)
        self._vx = np.array([p.speed * math.cos(p.heading) for p in positions], dtype=float)
        self._vy = np.array([p.speed * math.sin(p.heading) for p in positions], dtype=float)
        self.static = all(p.speed <= 0 for p in positions)

        self._cache_time: Optional[float] = None
        self._cache_xy: Optional[Tuple[np.ndarray, np.ndarray]] = None
        self._static_neighbors: Optional[List[List[int]]] = None

    def update_leg(self, pos: NodePosition):
        """节点开始新运动段"""
        i = pos.node
        self._x0[i], self._y0[i], self._t0[i] = pos.x, pos.y, pos.time
        self._vx[i] = pos.speed * math.cos(pos.heading)
        self._vy[i] = pos.speed * math.sin(pos.heading)
        self._cache_time = None

    @staticmethod
    def _fold(u: np.ndarray, size: float) -> np.ndarray:
        period = 2.0 * size
        m = np.mod(u, period)
        return np.where(m > size, period - m, m)

    def positions_at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        if self.static:
            return self._x0, self._y0
        if self._cache_time != t or self._cache_xy is None:
            dt = t - self._t0
            xs = self._fold(self._x0 + self._vx * dt, self.area.area_w)
            ys = self._fold(self._y0 + self._vy * dt, self.area.area_h)
            self._cache_time, self._cache_xy = t, (xs, ys)
        return self._cache_xy

    def position(self, node: int, t: float) -> Tuple[float, float]:
        xs, ys = self.positions_at(t)
        return float(xs[node]), float(ys[node])

    def _compute_neighbors(self, node: int, xs: np.ndarray, ys: np.ndarray) -> List[int]:
        d2 = (xs - xs[node]) ** 2 + (ys - ys[node]) ** 2
        mask = d2 <= (self.radius + _RANGE_EPS) ** 2
        mask[node] = False
        return np.nonzero(mask)[0].tolist()

    def neighbors(self, node: int, t: float) -> List[int]:
        """t 时刻 node 射程内的其他节点（升序）"""
        if self.static:
            if self._static_neighbors is None:
                self._static_neighbors = [self._compute_neighbors(i, self._x0, self._y0)
                                          for i in range(self.size)]
            return self._static_neighbors[node]
        xs, ys = self.positions_at(t)
        return self._compute_neighbors(node, xs, ys)

    def in_range_at(self, a: int, b: int, t: float) -> bool:
        xs, ys = self.positions_at(t)
        return math.hypot(xs[a] - xs[b], ys[a] - ys[b]) <= self.radius + _RANGE_EPS


class MobilityManager:
    """每个节点每 5 秒的航向重抽事件"""

    def __init__(self, sim: Simulator, topology: Topology, streams: RandomStreams,
                 positions: Sequence[NodePosition], leg_duration: float = LEG_DURATION_S):
        self.sim = sim
        self.topology = topology
        self.streams = streams
        self.leg_duration = leg_duration
        self.positions: Dict[int, NodePosition] = {p.node: p for p in positions}

    def start(self):
        for node, pos in self.positions.items():
            if pos.speed > 0:
                self.sim.schedule(pos.leg_end, self._leg_end, node, target=node)

    def _leg_end(self, node: int):
        rng = self.streams.stream(f"mobility/{node}")
        pos = step_mobility(self.positions[node], self.sim.now, self.topology.area, rng, self.leg_duration)
        self.positions[node] = pos
        self.topology.update_leg(pos)
        self.sim.schedule(pos.leg_end, self._leg_end, node, target=node)


@dataclass
class Frame:
    """信道上的一帧；dest 为 None 表示广播"""
    sender: int
    dest: Optional[int]
    payload: Packet
    size: int
    tx_start: float = 0.0
    tx_end: float = 0.0
    attempts: int = 0

    @property
    def broadcast(self) -> bool:
        return self.dest is None

    @property
    def kind(self) -> str:
        return self.payload.kind


class Link(Protocol):
    """上层协议看到的链路接口"""
    last_tx_time: float

    def send(self, packet: Packet, dest: Optional[int] = None) -> bool: ...


class FrameReceiver(Protocol):
    def receive(self, frame: Frame) -> None: ...

    def overhear(self, frame: Frame) -> None: ...


@dataclass
class _Reception:
    frame: Frame
    collided: bool = False


class Medium:
    """
    共享单信道

    每个接收者在某帧空中时间内若能听到两帧以上重叠，则这些帧在该接收者处全部丢失。
    无捕获效应、无衰落、无传播时延。
    """

    def __init__(self, sim: Simulator, topology: Topology, config: Optional[Dict] = None,
                 tx_listener: Optional[Callable[[Frame], None]] = None):
        """
        初始化信道

        Args:
            sim: 仿真器
            topology: 拓扑
            config: 配置字典（读取 mac 段）
            tx_listener: 每次发送开始时的回调（计数器）
        """
        mac_config = (config or {}).get('mac', {})
        self.sim = sim
        self.topology = topology
        self.data_rate_bps = float(mac_config.get('data_rate_bps', 11e6))
        self.overhead_s = float(mac_config.get('overhead_s', 192e-6))
        self.tx_listener = tx_listener

        self.nodes: Dict[int, FrameReceiver] = {}
        self._active: Dict[int, Frame] = {}
        self._receptions: Dict[int, List[_Reception]] = {}

    def attach(self, node_id: int, receiver: FrameReceiver):
        self.nodes[node_id] = receiver

    def airtime(self, size: int) -> float:
        return size * 8 / self.data_rate_bps + self.overhead_s

    def busy_until(self, node_id: int) -> Optional[float]:
        """node 听到的正在进行的发送中最晚的结束时刻；信道空闲时为 None"""
        now = self.sim.now
        latest: Optional[float] = None
        for sender, frame in self._active.items():
            if frame.tx_end <= now:
                continue
            if sender == node_id or self.topology.in_range_at(sender, node_id, now):
                if latest is None or frame.tx_end > latest:
                    latest = frame.tx_end
        return latest

    def transmit(self, frame: Frame, on_done: Optional[Callable[[Frame, bool], None]] = None):
        """
        立即开始发送一帧；在 tx_end 时向无冲突的接收者投递

        Args:
            frame: 待发送帧
            on_done: 发送结束、投递完成后的回调，参数为 (帧, 单播目的节点是否无冲突收到)
        """
        now = self.sim.now
        frame.tx_start = now
        frame.tx_end = now + self.airtime(frame.size)
        sender = frame.sender

        # 半双工：开始发送会破坏自己正在进行的接收
        for reception in self._receptions.get(sender, ()):
            reception.collided = True

        receptions: List[Tuple[int, _Reception]] = []
        for receiver in self.topology.neighbors(sender, now):
            if receiver in self._active:
                continue
            ongoing = self._receptions.setdefault(receiver, [])
            reception = _Reception(frame)
            if ongoing:
                reception.collided = True
                for other in ongoing:
                    other.collided = True
            ongoing.append(reception)
            receptions.append((receiver, reception))

        self._active[sender] = frame
        if self.tx_listener is not None:
            self.tx_listener(frame)
        self.sim.schedule(frame.tx_end, self._finish, frame, receptions, on_done, target='medium')

    def _finish(self, frame: Frame, receptions: List[Tuple[int, _Reception]],
                on_done: Optional[Callable[[Frame, bool], None]] = None):
        if self._active.get(frame.sender) is frame:
            del self._active[frame.sender]

        delivered = False
        for receiver, reception in receptions:
            self._receptions[receiver].remove(reception)
            if reception.collided:
                continue
            node = self.nodes.get(receiver)
            if node is None:
                continue
            if frame.broadcast or receiver == frame.dest:
                delivered = delivered or receiver == frame.dest
                node.receive(frame)
            else:
                node.overhear(frame)

        if on_done is not None:
            on_done(frame, delivered)


class LinkLayer:
    """
    单节点的 CSMA/CA 发送队列

    DIFS + 随机退避后侦听；信道忙则等到空闲再重新退避。
    单播帧每次侦听到忙时竞争窗口翻倍（最多 max_backoff_stages 级），广播帧始终用 CWmin。
    单播帧在目的节点处冲突时最多发送 unicast_attempts 次，重传前竞争窗口翻倍；
    投递结果由信道直接判定，不发送 ACK 帧、不占用空中时间。广播帧只发一次。
    """

    def __init__(self, node_id: int, sim: Simulator, medium: Medium, streams: RandomStreams,
                 config: Optional[Dict] = None):
        mac_config = (config or {}).get('mac', {})
        self.node_id = node_id
        self.sim = sim
        self.medium = medium
        self.difs = float(mac_config.get('difs_s', 50e-6))
        self.slot = float(mac_config.get('slot_s', 20e-6))
        self.cw_min = int(mac_config.get('cw_min', 31))
        self.max_stages = int(mac_config.get('max_backoff_stages', 3))
        self.unicast_attempts = max(1, int(mac_config.get('unicast_attempts', 3)))
        self.queue_capacity = int(mac_config.get('queue_capacity', 200))
        self._rng = streams.stream(f"mac-backoff/{node_id}")

        self.queue: Deque[Frame] = deque()
        self.queue_drops = 0
        self.retransmissions = 0
        self.unicast_failures = 0
        self.last_tx_time = -math.inf
        self._busy = False
        self._cw = self.cw_min
        self._stage = 0

    def send(self, packet: Packet, dest: Optional[int] = None) -> bool:
        """
        把报文放入发送队列

        Args:
            packet: 报文
            dest: 下一跳节点；None 为广播

        Returns:
            入队成功为 True，队列满被丢弃为 False
        """
        if len(self.queue) >= self.queue_capacity:
            self.queue_drops += 1
            return False

        self.queue.append(Frame(self.node_id, dest, packet, packet.size))
        if not self._busy:
            self._begin_access()
        return True

    def _begin_access(self):
        self._busy = True
        self._cw = self.cw_min
        self._stage = 0
        self._schedule_backoff(self.sim.now)

    def _schedule_backoff(self, start: float):
        slots = int(self._rng.integers(0, self._cw, endpoint=True))
        self.sim.schedule(start + self.difs + slots * self.slot, self._attempt, target=self.node_id)

    def _attempt(self):
        busy_until = self.medium.busy_until(self.node_id)
        if busy_until is not None:
            head = self.queue[0]
            if head.broadcast:
                self._cw = self.cw_min
            elif self._stage < self.max_stages:
                self._stage += 1
                self._cw = (self._cw + 1) * 2 - 1
            self._schedule_backoff(busy_until)
            return

        frame = self.queue.popleft()
        frame.attempts += 1
        self.medium.transmit(frame, self._on_tx_done)
        self.last_tx_time = self.sim.now

    def _on_tx_done(self, frame: Frame, delivered: bool):
        if not frame.broadcast and not delivered:
            if frame.attempts < self.unicast_attempts:
                self.retransmissions += 1
                self.queue.appendleft(frame)
                if self._stage < self.max_stages:
                    self._stage += 1
                    self._cw = (self._cw + 1) * 2 - 1
                self._schedule_backoff(self.sim.now)
                return
            self.unicast_failures += 1

        if self.queue:
            self._begin_access()
        else:
            self._busy = False
