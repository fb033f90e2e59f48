"""
运行日志与指标计算模块
"""
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

EVENT_COLUMNS = ['time', 'node', 'event', 'name', 'size', 'hops', 'latency']

# 事件类型
ISSUE = 'issue'
TX = 'tx'
RETRIEVE = 'retrieve'
DUPLICATE = 'duplicate'
ANOMALY = 'anomaly'

EventRow = Tuple[float, int, str, str, Optional[int], Optional[int], Optional[float]]


class RunLog:
    """
    一次运行的原始记录

    计数器总是维护；keep_events 为 True 时另外保留逐条事件，供写出 CSV 后离线重算。
    """

    def __init__(self, consumer_count: int, requests_per_consumer: int = 500, keep_events: bool = False):
        self.consumer_count = consumer_count
        self.requests_per_consumer = requests_per_consumer
        self.keep_events = keep_events

        self.issued = 0
        self.total_tx = 0
        self.total_tx_bytes = 0
        self.tx_by_kind: Counter = Counter()
        self.latencies: List[float] = []
        self.hops: List[int] = []
        self.duplicates_ignored = 0
        self.anomalies = 0
        self.events: List[EventRow] = []

    @property
    def retrieved(self) -> int:
        return len(self.latencies)

    def record_issue(self, time: float, node: int, name: str):
        self.issued += 1
        if self.keep_events:
            self.events.append((time, node, ISSUE, name, None, None, None))

    def record_tx(self, frame):
        """信道每开始一次发送调用一次（任意节点、任意报文类型）"""
        self.record_tx_values(frame.tx_start, frame.sender, frame.kind, frame.size)

    def record_tx_values(self, time: float, node: int, kind: str, size: int):
        self.total_tx += 1
        self.total_tx_bytes += size
        self.tx_by_kind[kind] += 1
        if self.keep_events:
            self.events.append((time, node, TX, kind, size, None, None))

    def record_retrieve(self, time: float, node: int, name: str, hops: int, latency: float):
        self.latencies.append(latency)
        self.hops.append(hops)
        if self.keep_events:
            self.events.append((time, node, RETRIEVE, name, None, hops, latency))

    def record_duplicate(self, time: float, node: int, name: str):
        self.duplicates_ignored += 1
        if self.keep_events:
            self.events.append((time, node, DUPLICATE, name, None, None, None))

    def record_anomaly(self, time: float, node: int, name: str):
        self.anomalies += 1
        if self.keep_events:
            self.events.append((time, node, ANOMALY, name, None, None, None))


@dataclass
class RunMetrics:
    """单次运行的四项指标与原始计数；没有取回任何数据时比值为 None"""
    esr: float
    latency_s: Optional[float]
    tx_events_per_data: Optional[float]
    avg_hops: Optional[float]
    tx_bytes_per_data: Optional[float]
    total_tx: int
    total_tx_bytes: int
    total_retrieved: int
    total_issued: int
    consumers: int
    duplicates_ignored: int = 0
    anomalies: int = 0
    tx_by_kind: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return asdict(self)


def _mean(values: List[float]) -> Optional[float]:
    if not values:
        return None
    return float(np.mean(np.asarray(values, dtype=float)))


def compute_metrics(log: RunLog) -> RunMetrics:
    """
    由运行日志计算指标（纯函数）

    Args:
        log: 运行日志

    Returns:
        RunMetrics
    """
    expected = log.requests_per_consumer * log.consumer_count
    retrieved = log.retrieved
    esr = 100.0 * retrieved / expected if expected else 0.0

    return RunMetrics(
        esr=esr,
        latency_s=_mean(log.latencies),
        tx_events_per_data=log.total_tx / retrieved if retrieved else None,
        avg_hops=_mean([float(h) for h in log.hops]),
        tx_bytes_per_data=log.total_tx_bytes / retrieved if retrieved else None,
        total_tx=log.total_tx,
        total_tx_bytes=log.total_tx_bytes,
        total_retrieved=retrieved,
        total_issued=log.issued,
        consumers=log.consumer_count,
        duplicates_ignored=log.duplicates_ignored,
        anomalies=log.anomalies,
        tx_by_kind=dict(sorted(log.tx_by_kind.items())),
    )


def write_run_log(log: RunLog, path: Union[str, Path]) -> Path:
    """
    把逐条事件写成 CSV（time,node,event,name,size,hops,latency）

    Raises:
        ValueError: 日志未保留逐条事件
    """
    if not log.keep_events:
        raise ValueError("RunLog was created without keep_events; nothing to persist")
    return write_events(log.events, path)


def write_events(events: List[EventRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    frame = pd.DataFrame(events, columns=EVENT_COLUMNS)
    frame['size'] = pd.to_numeric(frame['size']).astype('Int64')
    frame['hops'] = pd.to_numeric(frame['hops']).astype('Int64')
    # 浮点数按 repr 写出，读回后逐位相等
    frame['time'] = frame['time'].map(lambda v: repr(float(v)))
    frame['latency'] = frame['latency'].map(lambda v: '' if v is None or pd.isna(v) else repr(float(v)))
    frame.to_csv(path, index=False)
    logger.debug(f"Wrote {len(frame)} events to {path}")
    return path


def load_run_log(path: Union[str, Path], consumer_count: int, requests_per_consumer: int = 500) -> RunLog:
    """
    从事件 CSV 重建 RunLog，使 compute_metrics 与运行中的结果逐位一致

    Args:
        path: write_run_log 写出的文件
        consumer_count: 该运行的消费者数
        requests_per_consumer: 每个消费者的唯一请求数

    Returns:
        RunLog（keep_events=True）
    """
    frame = pd.read_csv(path, float_precision='round_trip', keep_default_na=False,
                        dtype={'name': str, 'event': str})
    log = RunLog(consumer_count, requests_per_consumer, keep_events=True)

    for row in frame.itertuples(index=False):
        time, node, event, name = float(row.time), int(row.node), row.event, row.name
        if event == ISSUE:
            log.record_issue(time, node, name)
        elif event == TX:
            log.record_tx_values(time, node, name, int(row.size))
        elif event == RETRIEVE:
            log.record_retrieve(time, node, name, int(row.hops), float(row.latency))
        elif event == DUPLICATE:
            log.record_duplicate(time, node, name)
        elif event == ANOMALY:
            log.record_anomaly(time, node, name)
        else:
            raise ValueError(f"Unknown event type {event!r} in {path}")
    return log
