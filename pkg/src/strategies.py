"""
NDN 转发策略模块
DAF（FIB 未命中广播、命中单播并用 RTT 反馈维护下一跳）、洪泛、自学习
"""
from collections import Counter
from dataclasses import replace
from typing import Callable, Dict, Optional, Protocol, Tuple

from loguru import logger

from .kernel import RandomStreams, Simulator
from .ndn_tables import (
    LOCAL_FACE,
    ContentStore,
    Downstream,
    Fib,
    FibNextHop,
    Pit,
    PitResult,
    PitSatisfaction,
)
from .packets import DataPacket, InterestPacket, Name
from .radio import Frame, Link


class DataSource(Protocol):
    def make_data(self, name: Name) -> DataPacket: ...


DataSink = Callable[[DataPacket, int], None]


class NdnForwarder:
    """
    NDN 转发管线的公共部分：CS -> PIT -> 生产者 -> 策略转发；Data: 策略学习 -> CS -> PIT

    子类实现 _forward_interest / _send_downstream，按需覆盖 _learn / _reply / _announces。
    """

    scheme = 'ndn'
    purges_fib = False
    answers_shorter_copies = True

    def __init__(self, node_id: int, sim: Simulator, link: Link, streams: RandomStreams,
                 config: Optional[Dict] = None, cs_capacity: int = 0):
        """
        初始化转发器

        Args:
            node_id: 节点编号（同时是链路地址）
            sim: 仿真器
            link: 链路层（send(packet, dest)）
            streams: 随机数流
            config: 配置字典（读取 ndn 段）
            cs_capacity: 内容仓库容量（报文数）
        """
        ndn_config = (config or {}).get('ndn', {})
        self.node_id = node_id
        self.sim = sim
        self.link = link
        self.interest_lifetime = float(ndn_config.get('interest_lifetime', 2.0))
        self.checker_period = float(ndn_config.get('checker_period', 1.0))
        self.stale_lifetime = float(ndn_config.get('stale_lifetime', 1.0))
        self.dead_nonce_lifetime = float(ndn_config.get('dead_nonce_lifetime', 6.0))

        self.cs = ContentStore(cs_capacity)
        self.pit = Pit(self.interest_lifetime, self.dead_nonce_lifetime)
        self.fib = Fib(float(ndn_config.get('initial_timeout', 1.0)), on_expire=self._on_nexthop_expired)

        self.producers: Dict[Name, DataSource] = {}
        self.app_sink: Optional[DataSink] = None
        self.counters: Counter = Counter()
        # 生产者已回答的 (名字, nonce) -> (Interest 的 hop_count, 过期时刻)
        self._answered: Dict[Tuple[Name, int], Tuple[int, float]] = {}
        self._nonce_rng = streams.stream(f"nonce/{node_id}")

    # ------------------------------------------------------------ 应用接口

    def new_nonce(self) -> int:
        return int(self._nonce_rng.integers(0, 2 ** 32))

    def register_producer(self, prefix: Name, source: DataSource):
        self.producers[prefix] = source

    def express_interest(self, interest: InterestPacket):
        """本地应用发出的 Interest，与从本地面收到等价"""
        self.on_interest(interest, LOCAL_FACE, via_broadcast=False)

    def start(self):
        """启动周期性清理（过期 PIT、陈旧 FIB 下一跳）"""
        self.sim.schedule_in(self.checker_period, self._housekeeping, target=self.node_id)

    def _housekeeping(self):
        now = self.sim.now
        self.pit.purge_expired(now)
        self._answered = {key: value for key, value in self._answered.items() if value[1] > now}
        if self.purges_fib:
            self.purge_stale(now)
        self.sim.schedule_in(self.checker_period, self._housekeeping, target=self.node_id)

    def purge_stale(self, now: float):
        removed = self.fib.purge_stale(now, self.stale_lifetime)
        self.counters['fib_stale_removed'] += len(removed)
        return removed

    # ------------------------------------------------------------ 链路接口

    def receive(self, frame: Frame):
        packet = frame.payload
        if isinstance(packet, InterestPacket):
            self.on_interest(packet, frame.sender, via_broadcast=frame.broadcast)
        elif isinstance(packet, DataPacket):
            self.on_data(packet, frame.sender)

    def overhear(self, frame: Frame):
        """非目的地的单播帧不上交"""

    # ------------------------------------------------------------ Interest 管线

    def on_interest(self, interest: InterestPacket, ep: int, via_broadcast: bool = False):
        """
        Interest 处理：CS 命中回复；PIT 重复丢弃/聚合停止；本地生产者回复；否则交给策略转发
        """
        now = self.sim.now
        self.counters['interest_in'] += 1

        cached = self.cs.lookup(interest.name)
        if cached is not None:
            self.counters['cs_hit'] += 1
            announce = interest.name.prefix if self._announces(interest, via_broadcast) else None
            reply = replace(cached, announced_prefix=announce, hc_from_source=0)
            self._reply(reply, ep)
            return

        result = self.pit.process_interest(interest, ep, now)
        if result is PitResult.DUPLICATE_NONCE:
            self.counters['duplicate_nonce'] += 1
            self._answer_shorter_copy(interest, ep, via_broadcast, now)
            return
        if result is PitResult.AGGREGATED:
            self.counters['aggregated'] += 1
            return

        producer = self.producers.get(interest.name.prefix)
        if producer is not None:
            expiry = now + self.dead_nonce_lifetime
            self._answered[(interest.name, interest.nonce)] = (interest.hop_count, expiry)
            data = producer.make_data(interest.name)
            if self._announces(interest, via_broadcast):
                data = replace(data, announced_prefix=interest.name.prefix)
            self._dispatch(data, self.pit.satisfy(data, now), cache=True)
            return

        self._forward_interest(interest, ep)

    def _answer_shorter_copy(self, interest: InterestPacket, ep: int, via_broadcast: bool, now: float):
        """
        生产者对同一 nonce 经更短路径到达的副本再回答一次，让下游学到更短的下一跳

        只比较已回答副本的 hop_count，严格更小才回答；回答不经过 PIT。
        """
        key = (interest.name, interest.nonce)
        answered = self._answered.get(key)
        producer = self.producers.get(interest.name.prefix)
        if not self.answers_shorter_copies or answered is None or producer is None or ep == LOCAL_FACE:
            return
        if interest.hop_count >= answered[0] or answered[1] <= now:
            return
        self._answered[key] = (interest.hop_count, answered[1])
        self.counters['shorter_copy_answered'] += 1
        data = producer.make_data(interest.name)
        if self._announces(interest, via_broadcast):
            data = replace(data, announced_prefix=interest.name.prefix)
        self._reply(data, ep)

    def _announces(self, interest: InterestPacket, via_broadcast: bool) -> bool:
        return via_broadcast

    def _transmit_interest(self, interest: InterestPacket, ep: int, nexthop: Optional[int]):
        out = interest if ep == LOCAL_FACE else interest.forwarded()
        self.link.send(out, nexthop)
        self.pit.record_forward(interest.name, self.sim.now)
        self.counters['interest_unicast' if nexthop is not None else 'interest_broadcast'] += 1

    def _forward_interest(self, interest: InterestPacket, ep: int):
        raise NotImplementedError

    # ------------------------------------------------------------ Data 管线

    def on_data(self, data: DataPacket, sender: int):
        """
        Data 处理：策略学习（FIB） -> 更新 CS -> PIT 匹配 -> 下游发送
        """
        now = self.sim.now
        self.counters['data_in'] += 1
        self._learn(data, sender, now)
        self.cs.insert(data, now)
        satisfaction = self.pit.satisfy(data, now)
        if satisfaction.decision is Downstream.NO_ENTRY:
            self.counters['data_unsolicited'] += 1
            return
        self._dispatch(data.forwarded(), satisfaction, cache=False)

    def _dispatch(self, data: DataPacket, satisfaction: PitSatisfaction, cache: bool):
        """data 已带本节点发出时的 hc；本地应用的跳数等于该值"""
        if cache:
            self.cs.insert(data, self.sim.now)
        if satisfaction.local and self.app_sink is not None:
            self.app_sink(data, data.hc_from_source)
        if satisfaction.downstreams:
            self._send_downstream(data, satisfaction)

    def _reply(self, data: DataPacket, ep: int):
        if ep == LOCAL_FACE:
            if self.app_sink is not None:
                self.app_sink(data, 0)
            return
        self.link.send(data, ep)

    def _learn(self, data: DataPacket, sender: int, now: float):
        """默认不学习"""

    def _send_downstream(self, data: DataPacket, satisfaction: PitSatisfaction):
        raise NotImplementedError

    def _on_nexthop_expired(self, hop: FibNextHop):
        self.counters['fib_timer_expired'] += 1
        logger.debug(f"Node {self.node_id}: next-hop {hop.nh} for {hop.prefix} expired at t={self.sim.now:.3f}")


class DafStrategy(NdnForwarder):
    """
    DAF：FIB 命中 -> 单播给 hc 最小的下一跳并启动寿命计时器；未命中 -> 广播发现

    Data 到达时按本地测得的 RTT 更新下一跳；PIT 有多个下游时以一次广播代替多次单播。
    """

    scheme = 'daf'
    purges_fib = True

    def _forward_interest(self, interest: InterestPacket, ep: int):
        hop = self._lookup_excluding(interest.name, ep)
        if hop is None:
            self._transmit_interest(interest, ep, None)
            return
        self._transmit_interest(interest, ep, hop.nh)
        self.fib.arm_nexthop_timer(hop, self.sim)

    def _lookup_excluding(self, name: Name, ep: int) -> Optional[FibNextHop]:
        """
        FIB 查找，但不把 Interest 送回给它的来源

        唯一的下一跳恰好是来源 ep 时按未命中处理（广播发现），计入 fib_miss_ep_only。
        """
        hop = self.fib.lookup(name, self.sim.now)
        if hop is None or hop.nh != ep:
            return hop
        entry = self.fib.entry(hop.prefix)
        candidates = [h for h in entry.nexthops.values() if h.nh != ep] if entry else []
        if not candidates:
            self.counters['fib_miss_ep_only'] += 1
            return None
        best = min(candidates, key=lambda h: (h.hc, -h.t_data, h.nh))
        best.last_use = self.sim.now
        return best

    def _learn(self, data: DataPacket, sender: int, now: float):
        entry = self.pit.get(data.name, now)
        rtt = None
        if entry is not None and entry.out_time is not None and now > entry.out_time:
            rtt = now - entry.out_time
        hop = self.fib.update(data.producer_prefix, sender, data.hc_from_source + 1, now, rtt)
        self.fib.cancel_timer(hop, self.sim)

    def overhear(self, frame: Frame):
        """
        旁听发给别的节点的 Data：若经发送者到生产者的跳数严格小于现有最优下一跳，则学习该捷径

        只在已有该前缀的 FIB 条目时学习，不带 RTT 样本。
        """
        data = frame.payload
        if not isinstance(data, DataPacket):
            return
        entry = self.fib.entry(data.producer_prefix)
        if entry is None or not entry.nexthops:
            return
        hc = data.hc_from_source + 1
        if hc >= min(hop.hc for hop in entry.nexthops.values()):
            return
        self.fib.update(data.producer_prefix, frame.sender, hc, self.sim.now)
        self.counters['fib_shortcut_overheard'] += 1

    def _send_downstream(self, data: DataPacket, satisfaction: PitSatisfaction):
        if satisfaction.decision is Downstream.UNICAST:
            self.link.send(data, satisfaction.ep)
        else:
            self.link.send(data, None)


class FloodingStrategy(NdnForwarder):
    """洪泛：存活的 Interest 一律广播，Data 一律广播；不使用 FIB"""

    scheme = 'flooding'
    answers_shorter_copies = False

    def _forward_interest(self, interest: InterestPacket, ep: int):
        self._transmit_interest(interest, ep, None)

    def _reply(self, data: DataPacket, ep: int):
        if ep == LOCAL_FACE:
            super()._reply(data, ep)
            return
        self.link.send(data, None)

    def _send_downstream(self, data: DataPacket, satisfaction: PitSatisfaction):
        self.link.send(data, None)


class SelfLearningStrategy(NdnForwarder):
    """
    自学习：只有消费者发起发现（广播）Interest；中继对非发现 Interest 在 FIB 未命中时丢弃

    Data 沿 PIT 逐跳单播回送，携带前缀通告时沿途节点学习 FIB；没有网内反馈计时器。
    """

    scheme = 'self-learning'

    def _announces(self, interest: InterestPacket, via_broadcast: bool) -> bool:
        return interest.discovery or via_broadcast

    def _forward_interest(self, interest: InterestPacket, ep: int):
        now = self.sim.now
        if ep == LOCAL_FACE and not interest.discovery and self.fib.lookup(interest.name, now) is None:
            interest = replace(interest, discovery=True)

        if interest.discovery:
            self._transmit_interest(interest, ep, None)
            return

        hop = self.fib.lookup(interest.name, now)
        if hop is None or hop.nh == ep:
            # MANET 中不发 NACK，静默丢弃
            self.pit.erase(interest.name, now)
            self.counters['interest_dropped_fib_miss'] += 1
            return
        self._transmit_interest(interest, ep, hop.nh)

    def _learn(self, data: DataPacket, sender: int, now: float):
        prefix = data.producer_prefix
        hc = data.hc_from_source + 1
        if data.announced_prefix is not None:
            self.fib.replace(prefix, sender, hc, now, self.sim)
        elif self.fib.nexthop(prefix, sender) is not None:
            self.fib.update(prefix, sender, hc, now)

    def _send_downstream(self, data: DataPacket, satisfaction: PitSatisfaction):
        for ep in satisfaction.downstreams:
            self.link.send(data, ep)


STRATEGIES = {
    DafStrategy.scheme: DafStrategy,
    FloodingStrategy.scheme: FloodingStrategy,
    SelfLearningStrategy.scheme: SelfLearningStrategy,
}
