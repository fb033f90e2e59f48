"""
离散事件仿真内核
虚拟时钟、事件队列、按用途划分的可复现随机数流
"""
import heapq
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .utils import ScheduleError, stable_hash


@dataclass(order=True)
class Event:
    """
    队列中的事件，同时作为取消用的句柄

    按 (fire_time, sequence) 排序；相同时间按插入顺序出队。
    """
    fire_time: float
    sequence: int
    target: Any = field(compare=False, default=None)
    action: Optional[Callable[..., Any]] = field(compare=False, default=None)
    args: Tuple[Any, ...] = field(compare=False, default=())
    cancelled: bool = field(compare=False, default=False)
    fired: bool = field(compare=False, default=False)

    @property
    def pending(self) -> bool:
        return not (self.cancelled or self.fired)


@dataclass
class RunResult:
    """run() 的返回值"""
    final_clock: float
    events_processed: int


class Simulator:
    """单线程确定性离散事件引擎"""

    def __init__(self, start_time: float = 0.0, trace: bool = False):
        """
        初始化仿真器

        Args:
            start_time: 初始虚拟时钟（秒）
            trace: 是否记录每个已处理事件的 (time, target, action) 三元组
        """
        self.now = start_time
        self._queue: List[Event] = []
        self._sequence = 0
        self._stopped = False
        self.events_processed = 0
        self.trace: Optional[List[Tuple[float, Any, str]]] = [] if trace else None

    def schedule(self, fire_time: float, action: Callable[..., Any], *args: Any, target: Any = None) -> Event:
        """
        在绝对时间 fire_time 调度一个动作

        Args:
            fire_time: 触发时间（秒，虚拟时间）
            action: 触发时调用的函数
            *args: 调用参数
            target: 事件归属（节点编号或 'medium'），仅用于追踪

        Returns:
            事件句柄，可传给 cancel()

        Raises:
            ScheduleError: fire_time 早于当前时钟
        """
        if fire_time < self.now:
            raise ScheduleError(f"Cannot schedule event at t={fire_time} before clock t={self.now}")

        event = Event(fire_time, self._sequence, target, action, args)
        self._sequence += 1
        heapq.heappush(self._queue, event)
        return event

    def schedule_in(self, delay: float, action: Callable[..., Any], *args: Any, target: Any = None) -> Event:
        """相对当前时钟 delay 秒后调度"""
        if delay < 0:
            raise ScheduleError(f"Negative delay {delay}")
        return self.schedule(self.now + delay, action, *args, target=target)

    def cancel(self, handle: Optional[Event]) -> bool:
        """
        取消尚未触发的事件（惰性删除）

        Returns:
            事件原本处于等待状态并已被移除则为 True；已触发或已取消则为 False
        """
        if handle is None or not handle.pending:
            return False
        handle.cancelled = True
        return True

    def stop(self):
        """请求在当前事件处理完成后结束 run()"""
        self._stopped = True

    @property
    def pending_count(self) -> int:
        return sum(1 for event in self._queue if event.pending)

    def run(self, until: Optional[float] = None) -> RunResult:
        """
        处理事件直到停止条件满足

        Args:
            until: 结束时间；None 表示运行到静止（队列为空或调用了 stop()）

        Returns:
            RunResult(final_clock, events_processed)
        """
        self._stopped = False
        processed = 0

        while self._queue and not self._stopped:
            event = self._queue[0]
            if event.cancelled:
                heapq.heappop(self._queue)
                continue
            if until is not None and event.fire_time > until:
                break

            heapq.heappop(self._queue)
            self.now = event.fire_time
            event.fired = True
            processed += 1

            if self.trace is not None:
                name = getattr(event.action, '__qualname__', repr(event.action))
                self.trace.append((event.fire_time, event.target, name))

            event.action(*event.args)

        if until is not None and not self._stopped and until > self.now:
            # 时间上限模式下，时钟推进到上限
            self.now = until

        self.events_processed += processed
        return RunResult(final_clock=self.now, events_processed=processed)


class RandomStreams:
    """
    按 (master_seed, stream_id) 派生的独立随机数流

    新增一个流不会扰动已有流的抽样序列。
    """

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self._streams: Dict[str, np.random.Generator] = {}

    def stream(self, stream_id: str) -> np.random.Generator:
        """获取（必要时创建）指定用途的随机数发生器"""
        generator = self._streams.get(stream_id)
        if generator is None:
            seed_seq = np.random.SeedSequence([self.master_seed, stable_hash(stream_id)])
            generator = np.random.default_rng(seed_seq)
            self._streams[stream_id] = generator
        return generator

    def draw_uniform(self, stream_id: str, lo: float, hi: float) -> float:
        """
        从指定流抽取 [lo, hi) 上的均匀分布值

        Raises:
            ValueError: lo > hi
        """
        if lo > hi:
            raise ValueError(f"Invalid interval: lo={lo} > hi={hi}")
        if lo == hi:
            return float(lo)
        return float(self.stream(stream_id).uniform(lo, hi))
