"""
单次运行装配模块
按场景创建节点、信道、协议栈与应用，运行到所有消费者结束或达到时长上限
"""
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
from loguru import logger

from .aodv import AodvRouter
from .kernel import RandomStreams, Simulator
from .metrics import EventRow, RunLog, RunMetrics, compute_metrics
from .radio import (
    LEG_DURATION_S,
    LinkLayer,
    Medium,
    MobilityManager,
    NodePosition,
    Topology,
    place_grid,
)
from .strategies import STRATEGIES, NdnForwarder
from .traffic import Consumer, IpRequester, IpResponder, Producer, RequestApp, summarize_apps
from .utils import ScenarioError, derive_run_seed

if TYPE_CHECKING:
    from .harness import ScenarioConfig

ONE_TO_ONE = 'one-to-one'
MANY_TO_MANY = 'many-to-many'
MANY_TO_ONE = 'many-to-one'
PATTERNS = (ONE_TO_ONE, MANY_TO_MANY, MANY_TO_ONE)

Stack = Union[NdnForwarder, AodvRouter]


def producer_count(pattern: str, consumers: int) -> int:
    """通信模式需要的生产者（响应者）个数"""
    if pattern == MANY_TO_ONE:
        return 2
    return consumers


@dataclass(frozen=True)
class RoleAssignment:
    """consumer_targets[i] = (前缀, 响应者序号)"""
    consumer_nodes: Tuple[int, ...]
    producer_nodes: Tuple[int, ...]
    consumer_targets: Tuple[Tuple[str, int], ...]
    producer_prefixes: Tuple[str, ...]


def assign_roles(pattern: str, node_ids: Sequence[int], consumers: int) -> RoleAssignment:
    """
    按通信模式划分角色

    一对一：每个消费者配一个前缀唯一的生产者（P0, P1, ...）；
    多对多：生产者前一半服务 /A、后一半服务 /B，消费者同样对半划分；
    多对一：恰好两个生产者 /A 与 /B，消费者对半划分。

    Args:
        pattern: 通信模式
        node_ids: 已随机排列的节点编号，前面的依次作为消费者、生产者
        consumers: 消费者数

    Returns:
        RoleAssignment

    Raises:
        ScenarioError: 未知模式或节点不足
    """
    if pattern not in PATTERNS:
        raise ScenarioError(f"Unknown pattern {pattern!r}")
    producers = producer_count(pattern, consumers)
    if consumers + producers > len(node_ids):
        raise ScenarioError(f"{consumers} consumers and {producers} producers need more than {len(node_ids)} nodes")

    consumer_nodes = tuple(node_ids[:consumers])
    producer_nodes = tuple(node_ids[consumers:consumers + producers])
    half = math.ceil(consumers / 2)

    if pattern == ONE_TO_ONE:
        producer_prefixes = tuple(f"P{i}" for i in range(producers))
        targets = tuple((f"P{i}", i) for i in range(consumers))
    elif pattern == MANY_TO_MANY:
        producer_prefixes = tuple('A' if i < half else 'B' for i in range(producers))
        targets = tuple((producer_prefixes[i], i) for i in range(consumers))
    else:
        producer_prefixes = ('A', 'B')
        targets = tuple(('A', 0) if i < half else ('B', 1) for i in range(consumers))

    return RoleAssignment(consumer_nodes, producer_nodes, targets, producer_prefixes)


def connectivity_graph(topology: Topology, t: float = 0.0) -> nx.Graph:
    """t 时刻的单位圆盘连通图"""
    graph = nx.Graph()
    graph.add_nodes_from(range(topology.size))
    for node in range(topology.size):
        for other in topology.neighbors(node, t):
            if other > node:
                graph.add_edge(node, other)
    return graph


@dataclass
class RunOutcome:
    """单次运行结果（可在进程间传递）"""
    run_index: int
    seed: int
    metrics: RunMetrics
    final_clock: float
    events_processed: int
    capped: bool
    events: List[EventRow] = field(default_factory=list)
    positions: List[Tuple[float, int, float, float]] = field(default_factory=list)


class NetworkSimulation:
    """
    一次运行的完整网络

    随机流：'placement'（布点）、'app-placement'（角色）、'mobility/<i>'、'mac-backoff/<i>'、
    'nonce/<i>'、'app-start/<i>'、'aodv-hello/<i>'。
    """

    def __init__(self, scenario: 'ScenarioConfig', config: Optional[Dict] = None, run_index: int = 0,
                 seed: Optional[int] = None, positions: Optional[Sequence[NodePosition]] = None):
        """
        初始化一次运行

        Args:
            scenario: 场景配置
            config: 应用配置字典
            run_index: 运行序号
            seed: 运行种子；默认由 master_seed 与 run_index 派生
            positions: 显式给定的初始位置（测试用），默认网格随机布点
        """
        self.scenario = scenario
        self.config = config or {}
        self.run_index = run_index
        self.seed = seed if seed is not None else derive_run_seed(scenario.master_seed, run_index)
        self.sim = Simulator()
        self.streams = RandomStreams(self.seed)
        self.area = scenario.area_spec

        if positions is not None and len(positions) != scenario.nodes:
            raise ScenarioError(f"Got {len(positions)} positions for {scenario.nodes} nodes")
        self.initial_positions = list(positions) if positions is not None else self._initial_positions()
        self.topology = Topology(self.area, self.initial_positions)
        self.mobility = MobilityManager(self.sim, self.topology, self.streams, self.initial_positions)

        self.log = RunLog(scenario.consumers, scenario.requests_per_consumer, keep_events=scenario.event_log)
        self.medium = Medium(self.sim, self.topology, self.config, tx_listener=self.log.record_tx)
        self.links = [LinkLayer(i, self.sim, self.medium, self.streams, self.config)
                      for i in range(scenario.nodes)]
        self.stacks: List[Stack] = []
        for i, link in enumerate(self.links):
            stack = self._make_stack(i, link)
            self.stacks.append(stack)
            self.medium.attach(i, stack)

        order = [int(i) for i in self.streams.stream('app-placement').permutation(scenario.nodes)]
        self.roles = assign_roles(scenario.pattern, order, scenario.consumers)
        self.apps: List[RequestApp] = []
        self.servers: List[Union[Producer, IpResponder]] = []
        self._install_apps()

        self.position_rows: List[Tuple[float, int, float, float]] = []
        self._finished = 0

    # ------------------------------------------------------------ 装配

    def _initial_positions(self) -> List[NodePosition]:
        positions = place_grid(self.scenario.nodes, self.area, self.streams.stream('placement'))
        if self.scenario.speed <= 0:
            return positions
        moving = []
        for pos in positions:
            heading = float(self.streams.stream(f"mobility/{pos.node}").uniform(0.0, 2.0 * math.pi))
            moving.append(replace(pos, heading=heading, speed=float(self.scenario.speed),
                                  leg_end=LEG_DURATION_S))
        return moving

    def _make_stack(self, node_id: int, link: LinkLayer) -> Stack:
        scheme = self.scenario.scheme
        if scheme == AodvRouter.scheme:
            return AodvRouter(node_id, self.sim, link, self.streams, self.config)
        strategy = STRATEGIES.get(scheme)
        if strategy is None:
            raise ScenarioError(f"Unknown scheme {scheme!r}")
        return strategy(node_id, self.sim, link, self.streams, self.config,
                        cs_capacity=self.scenario.cache_capacity)

    def _install_apps(self):
        scenario = self.scenario
        roles = self.roles
        app_kwargs = dict(
            rate=scenario.request_rate,
            total=scenario.requests_per_consumer,
            rtx_max=scenario.rtx_max,
            on_finished=self._on_app_finished,
        )

        if scenario.scheme == AodvRouter.scheme:
            for node, _ in zip(roles.producer_nodes, roles.producer_prefixes):
                self.servers.append(IpResponder(node, self.stacks[node]))
            for node, (_, responder) in zip(roles.consumer_nodes, roles.consumer_targets):
                self.apps.append(IpRequester(node, roles.producer_nodes[responder], self.stacks[node],
                                             self.sim, self.streams, self.log, self.config, **app_kwargs))
            return

        for node, prefix in zip(roles.producer_nodes, roles.producer_prefixes):
            producer = Producer(node, prefix)
            producer.attach(self.stacks[node])
            self.servers.append(producer)
        discovery_on_retransmission = scenario.scheme == 'self-learning'
        for node, (prefix, _) in zip(roles.consumer_nodes, roles.consumer_targets):
            self.apps.append(Consumer(node, prefix, self.stacks[node], self.sim, self.streams, self.log,
                                      self.config, discovery_on_retransmission=discovery_on_retransmission,
                                      **app_kwargs))

    # ------------------------------------------------------------ 运行

    def _on_app_finished(self, app: RequestApp):
        self._finished += 1
        if self._finished == len(self.apps):
            self.sim.stop()

    def _sample_positions(self, period: float):
        now = self.sim.now
        xs, ys = self.topology.positions_at(now)
        for node in range(self.topology.size):
            self.position_rows.append((now, node, float(xs[node]), float(ys[node])))
        self.sim.schedule_in(period, self._sample_positions, period, target='trace')

    def run(self) -> RunOutcome:
        """
        运行到所有消费者结束（收齐或放弃最后一个请求），或到达 duration_cap

        Returns:
            RunOutcome
        """
        scenario = self.scenario
        self.mobility.start()
        for stack in self.stacks:
            stack.start()
        for app in self.apps:
            app.start()
        if scenario.position_trace:
            period = float(self.config.get('simulation', {}).get('position_sample_period', 1.0))
            self.sim.schedule(0.0, self._sample_positions, period, target='trace')

        result = self.sim.run(until=scenario.duration_cap)
        capped = self._finished < len(self.apps)
        if capped:
            logger.warning(f"Run {self.run_index}: duration cap {scenario.duration_cap}s reached with "
                           f"{len(self.apps) - self._finished} consumers unfinished")

        metrics = compute_metrics(self.log)
        if metrics.total_retrieved == 0:
            logger.warning(f"Run {self.run_index}: no data retrieved")
        logger.debug(f"Run {self.run_index}: apps {summarize_apps(self.apps)}, "
                     f"MAC retransmissions {sum(link.retransmissions for link in self.links)}, "
                     f"unicast failures {sum(link.unicast_failures for link in self.links)}")

        return RunOutcome(
            run_index=self.run_index,
            seed=self.seed,
            metrics=metrics,
            final_clock=result.final_clock,
            events_processed=result.events_processed,
            capped=capped,
            events=list(self.log.events),
            positions=list(self.position_rows),
        )


def run_single(scenario: 'ScenarioConfig', config: Optional[Dict] = None, run_index: int = 0) -> RunOutcome:
    """进程池工作函数：构建并运行第 run_index 次仿真"""
    return NetworkSimulation(scenario, config, run_index).run()
