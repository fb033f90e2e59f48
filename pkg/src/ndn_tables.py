"""
NDN 有状态转发平面
内容仓库（LRU）、待定兴趣表（nonce 去环与聚合）、转发信息表（逐下一跳 RTT 估计与寿命）
"""
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterator, List, Optional, Tuple

from .kernel import Event, Simulator
from .packets import DataPacket, InterestPacket, Name

# RTT 估计参数
ALPHA = 7 / 8
BETA = 3 / 4
K = 4

# 本地应用面的 ep 标识（链路地址都是非负整数）
LOCAL_FACE = -1


# ---------------------------------------------------------------- 内容仓库

@dataclass
class CsEntry:
    name: Name
    data: DataPacket
    inserted_at: float


class ContentStore:
    """按完整名字精确匹配的 LRU 缓存，容量以报文个数计"""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError(f"Negative CS capacity {capacity}")
        self.capacity = capacity
        self._entries: 'OrderedDict[Name, CsEntry]' = OrderedDict()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: Name) -> bool:
        return name in self._entries

    def names(self) -> List[Name]:
        """从最久未使用到最近使用"""
        return list(self._entries)

    def lookup(self, name: Name) -> Optional[DataPacket]:
        """命中时刷新最近使用位置"""
        entry = self._entries.get(name)
        if entry is None:
            self.misses += 1
            return None
        self._entries.move_to_end(name)
        self.hits += 1
        return entry.data

    def insert(self, data: DataPacket, now: float = 0.0) -> Optional[Name]:
        """
        缓存 Data（包括未请求的 Data）

        Returns:
            被淘汰的名字；未淘汰为 None
        """
        if self.capacity == 0:
            return None

        if data.name in self._entries:
            self._entries.move_to_end(data.name)
            self._entries[data.name] = CsEntry(data.name, data, now)
            return None

        self._entries[data.name] = CsEntry(data.name, data, now)
        if len(self._entries) > self.capacity:
            evicted, _ = self._entries.popitem(last=False)
            return evicted
        return None


# ---------------------------------------------------------------- 待定兴趣表

class PitResult(str, Enum):
    NEW = 'new'
    AGGREGATED = 'aggregated'
    DUPLICATE_NONCE = 'duplicate_nonce'


class Downstream(str, Enum):
    UNICAST = 'unicast'
    BROADCAST = 'broadcast'
    LOCAL_ONLY = 'local_only'
    NO_ENTRY = 'no_entry'


@dataclass
class PitRecord:
    nonce: int
    ep: int
    t_request: float


@dataclass
class PitEntry:
    name: Name
    records: List[PitRecord]
    lifetime_expiry: float
    # 向上游转发的时刻 T(R_i)
    out_time: Optional[float] = None

    @property
    def eps(self) -> List[int]:
        seen: List[int] = []
        for record in self.records:
            if record.ep not in seen:
                seen.append(record.ep)
        return seen


@dataclass
class PitSatisfaction:
    decision: Downstream
    downstreams: Tuple[int, ...] = ()
    local: bool = False
    entry: Optional[PitEntry] = None

    @property
    def ep(self) -> Optional[int]:
        return self.downstreams[0] if self.decision is Downstream.UNICAST else None


class DeadNonceList:
    """已满足或已过期条目的 (name, nonce) 记忆，用于抑制迟到的环回副本"""

    def __init__(self, lifetime: float = 6.0):
        self.lifetime = lifetime
        self._expiry: Dict[Tuple[Name, int], float] = {}

    def __len__(self) -> int:
        return len(self._expiry)

    def add(self, name: Name, nonce: int, now: float):
        self._expiry[(name, nonce)] = now + self.lifetime

    def contains(self, name: Name, nonce: int, now: float) -> bool:
        expiry = self._expiry.get((name, nonce))
        if expiry is None:
            return False
        if expiry <= now:
            del self._expiry[(name, nonce)]
            return False
        return True

    def purge(self, now: float):
        expired = [key for key, expiry in self._expiry.items() if expiry <= now]
        for key in expired:
            del self._expiry[key]


class Pit:
    """每个完整名字至多一个条目；条目过期后静默删除"""

    def __init__(self, interest_lifetime: float = 2.0, dead_nonce_lifetime: float = 6.0):
        self.interest_lifetime = interest_lifetime
        self.dead_nonces = DeadNonceList(dead_nonce_lifetime)
        self._entries: Dict[Name, PitEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[PitEntry]:
        return iter(list(self._entries.values()))

    def _retire(self, entry: PitEntry, now: float):
        self._entries.pop(entry.name, None)
        for record in entry.records:
            self.dead_nonces.add(entry.name, record.nonce, now)

    def get(self, name: Name, now: float) -> Optional[PitEntry]:
        """取条目；已过期的条目视为不存在并被删除"""
        entry = self._entries.get(name)
        if entry is not None and entry.lifetime_expiry <= now:
            self._retire(entry, now)
            return None
        return entry

    def process_interest(self, interest: InterestPacket, ep: int, now: float) -> PitResult:
        """
        把 Interest 记入 PIT

        Args:
            interest: 收到的 Interest
            ep: 上一跳标识（本地应用为 LOCAL_FACE）
            now: 当前时间

        Returns:
            NEW（需要继续转发）、AGGREGATED（已追加记录，不转发）、DUPLICATE_NONCE（丢弃）
        """
        name, nonce = interest.name, interest.nonce
        entry = self.get(name, now)

        if self.dead_nonces.contains(name, nonce, now):
            return PitResult.DUPLICATE_NONCE

        expiry = now + interest.lifetime
        if entry is None:
            self._entries[name] = PitEntry(name, [PitRecord(nonce, ep, now)], expiry)
            return PitResult.NEW

        if any(record.nonce == nonce for record in entry.records):
            return PitResult.DUPLICATE_NONCE

        entry.lifetime_expiry = max(entry.lifetime_expiry, expiry)
        for record in entry.records:
            if record.ep == ep:
                # 同一下游换新 nonce：视为重传，再次转发
                self.dead_nonces.add(name, record.nonce, now)
                record.nonce = nonce
                record.t_request = now
                return PitResult.NEW

        entry.records.append(PitRecord(nonce, ep, now))
        return PitResult.AGGREGATED

    def record_forward(self, name: Name, now: float):
        """记录 Interest 的上游发送时刻 T(R_i)"""
        entry = self._entries.get(name)
        if entry is not None:
            entry.out_time = now

    def satisfy(self, data: DataPacket, now: float) -> PitSatisfaction:
        """
        用 Data 消费匹配的条目

        Returns:
            一个远端下游 -> UNICAST；两个及以上 -> BROADCAST；
            只有本地应用 -> LOCAL_ONLY；没有条目 -> NO_ENTRY
        """
        entry = self.get(data.name, now)
        if entry is None:
            return PitSatisfaction(Downstream.NO_ENTRY)

        self._retire(entry, now)
        eps = entry.eps
        local = LOCAL_FACE in eps
        remote = tuple(ep for ep in eps if ep != LOCAL_FACE)

        if len(remote) == 1:
            decision = Downstream.UNICAST
        elif len(remote) >= 2:
            decision = Downstream.BROADCAST
        else:
            decision = Downstream.LOCAL_ONLY
        return PitSatisfaction(decision, remote, local, entry)

    def erase(self, name: Name, now: float = 0.0):
        entry = self._entries.get(name)
        if entry is not None:
            self._retire(entry, now)

    def purge_expired(self, now: float) -> int:
        expired = [entry for entry in self._entries.values() if entry.lifetime_expiry <= now]
        for entry in expired:
            self._retire(entry, now)
        self.dead_nonces.purge(now)
        return len(expired)


# ---------------------------------------------------------------- RTT 估计

def estimator_update(srtt: Optional[float], rttv: Optional[float], rtt_i: float) -> Tuple[float, float]:
    """
    平滑 RTT 与 RTT 变化量的更新

    首个样本：srtt = rtt_i，rttv = rtt_i / 2。
    之后：先用旧 srtt 更新 rttv，再更新 srtt。

    Args:
        srtt: 旧的平滑 RTT；None 表示新条目
        rttv: 旧的 RTT 变化量
        rtt_i: 本地测得的样本 T(D_i) - T(R_i)

    Returns:
        (srtt, rttv)

    Raises:
        ValueError: 样本不为正
    """
    if not rtt_i > 0:
        raise ValueError(f"RTT sample must be positive, got {rtt_i}")

    if srtt is None or rttv is None:
        return rtt_i, rtt_i / 2

    new_rttv = BETA * rttv + (1 - BETA) * abs(rtt_i - srtt)
    new_srtt = ALPHA * srtt + (1 - ALPHA) * rtt_i
    return new_srtt, new_rttv


def nexthop_timeout(srtt: float, rttv: float) -> float:
    """下一跳在 FIB 中的寿命：SRTT + 4·RTTV"""
    return srtt + K * rttv


# ---------------------------------------------------------------- 转发信息表

@dataclass
class FibNextHop:
    prefix: Name
    nh: int
    hc: int
    t_data: float
    rtt: Optional[float] = None
    srtt: Optional[float] = None
    rttv: Optional[float] = None
    pending_timer: Optional[Event] = None
    last_use: float = float('-inf')

    def apply_sample(self, rtt_i: float):
        self.srtt, self.rttv = estimator_update(self.srtt, self.rttv, rtt_i)
        self.rtt = rtt_i

    def timeout(self, initial_timeout: float = 1.0) -> float:
        if self.srtt is None or self.rttv is None:
            return initial_timeout
        return nexthop_timeout(self.srtt, self.rttv)


@dataclass
class FibEntry:
    prefix: Name
    nexthops: Dict[int, FibNextHop] = field(default_factory=dict)


class Fib:
    """前缀 -> 下一跳集合；每个 (前缀, 邻居) 至多一个下一跳"""

    def __init__(self, initial_timeout: float = 1.0,
                 on_expire: Optional[Callable[[FibNextHop], None]] = None):
        self.initial_timeout = initial_timeout
        self.on_expire = on_expire
        self._entries: Dict[Name, FibEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, prefix: Name) -> Optional[FibEntry]:
        return self._entries.get(prefix)

    def nexthop(self, prefix: Name, nh: int) -> Optional[FibNextHop]:
        entry = self._entries.get(prefix)
        return entry.nexthops.get(nh) if entry else None

    def nexthops(self) -> List[FibNextHop]:
        return [hop for entry in self._entries.values() for hop in entry.nexthops.values()]

    def lookup(self, name: Name, now: float) -> Optional[FibNextHop]:
        """
        最长前缀匹配，取 hc 最小的下一跳；hc 相同取最近 T(D_i)

        命中时记录 last_use。
        """
        for prefix in name.prefixes():
            entry = self._entries.get(prefix)
            if entry is None or not entry.nexthops:
                continue
            best = min(entry.nexthops.values(), key=lambda hop: (hop.hc, -hop.t_data, hop.nh))
            best.last_use = now
            return best
        return None

    def update(self, prefix: Name, nh: int, hc: int, now: float,
               rtt_i: Optional[float] = None) -> FibNextHop:
        """
        收到经 nh 的 Data 后创建或更新下一跳 <nh, hc, T(D_i), RTT_i, SRTT, RTTV>
        """
        entry = self._entries.setdefault(prefix, FibEntry(prefix))
        hop = entry.nexthops.get(nh)
        if hop is None:
            hop = FibNextHop(prefix=prefix, nh=nh, hc=hc, t_data=now)
            entry.nexthops[nh] = hop
        else:
            hop.hc = hc
            hop.t_data = now
        if rtt_i is not None and rtt_i > 0:
            hop.apply_sample(rtt_i)
        return hop

    def replace(self, prefix: Name, nh: int, hc: int, now: float, sim: Optional[Simulator] = None) -> FibNextHop:
        """用单个下一跳替换该前缀的全部下一跳"""
        entry = self._entries.get(prefix)
        if entry is not None:
            for hop in list(entry.nexthops.values()):
                if hop.nh != nh:
                    self._drop(hop, sim)
        return self.update(prefix, nh, hc, now)

    def _drop(self, hop: FibNextHop, sim: Optional[Simulator] = None):
        if sim is not None and hop.pending_timer is not None:
            sim.cancel(hop.pending_timer)
        hop.pending_timer = None
        entry = self._entries.get(hop.prefix)
        if entry is None:
            return
        if entry.nexthops.get(hop.nh) is hop:
            del entry.nexthops[hop.nh]
        if not entry.nexthops:
            del self._entries[hop.prefix]

    def arm_nexthop_timer(self, hop: FibNextHop, sim: Simulator) -> Event:
        """
        经 hop 单播 Interest 后启动寿命计时器（SRTT + 4·RTTV）

        已有计时器在等待时保留原计时器（最早的截止时间生效）。
        到期只删除该下一跳，不发送任何报文。
        """
        if hop.pending_timer is not None and hop.pending_timer.pending:
            return hop.pending_timer
        hop.pending_timer = sim.schedule_in(hop.timeout(self.initial_timeout), self._expire, hop,
                                            target='fib')
        return hop.pending_timer

    def cancel_timer(self, hop: FibNextHop, sim: Simulator) -> bool:
        """经 hop 收到 Data：正反馈，撤销计时器"""
        cancelled = sim.cancel(hop.pending_timer)
        hop.pending_timer = None
        return cancelled

    def _expire(self, hop: FibNextHop):
        hop.pending_timer = None
        self._drop(hop)
        if self.on_expire is not None:
            self.on_expire(hop)

    def purge_stale(self, now: float, stale_lifetime: float = 1.0) -> List[FibNextHop]:
        """
        删除没有等待中计时器、且 now - max(T(D_i), last_use) > stale_lifetime 的下一跳
        """
        removed: List[FibNextHop] = []
        for hop in self.nexthops():
            if hop.pending_timer is not None and hop.pending_timer.pending:
                continue
            if now - max(hop.t_data, hop.last_use) > stale_lifetime:
                self._drop(hop)
                removed.append(hop)
        return removed
