"""
测试单次运行装配：角色划分、连通图、最短路跳数、可复现性
"""
import copy
from collections import Counter

import networkx as nx
import numpy as np
import pytest

from src.harness import ScenarioConfig
from src.packets import InterestPacket, Name
from src.radio import PRESET_50, Topology
from src.simulation import (
    MANY_TO_MANY,
    MANY_TO_ONE,
    ONE_TO_ONE,
    NetworkSimulation,
    assign_roles,
    connectivity_graph,
    producer_count,
    run_single,
)
from src.utils import ScenarioError
from tests.conftest import lattice_positions, line_positions, random_lattice_loop, random_lattice_tree

LATTICE_AREA = {'grid_cols': 10, 'grid_rows': 10, 'area_w': 1000.0, 'area_h': 1000.0}


def _small_scenario(**overrides) -> ScenarioConfig:
    values = dict(scheme='daf', nodes=50, consumers=3, requests_per_consumer=20, runs=1,
                  master_seed=3, duration_cap=120.0)
    values.update(overrides)
    return ScenarioConfig(**values)


class TestRoles:
    """测试通信模式的角色划分"""

    @pytest.mark.unit
    def test_producer_count(self):
        """多对一恰好两个生产者，其余与消费者数相同"""
        assert producer_count(MANY_TO_ONE, 10) == 2
        assert producer_count(ONE_TO_ONE, 10) == 10
        assert producer_count(MANY_TO_MANY, 10) == 10

    @pytest.mark.unit
    def test_one_to_one(self):
        """每个消费者一个独立前缀"""
        roles = assign_roles(ONE_TO_ONE, list(range(10)), 3)
        assert roles.consumer_nodes == (0, 1, 2)
        assert roles.producer_nodes == (3, 4, 5)
        assert roles.consumer_targets == (('P0', 0), ('P1', 1), ('P2', 2))
        assert roles.producer_prefixes == ('P0', 'P1', 'P2')

    @pytest.mark.unit
    def test_many_to_many(self):
        """生产者与消费者各自对半分到 /A 与 /B"""
        roles = assign_roles(MANY_TO_MANY, list(range(10)), 4)
        assert roles.producer_prefixes == ('A', 'A', 'B', 'B')
        assert [prefix for prefix, _ in roles.consumer_targets] == ['A', 'A', 'B', 'B']

    @pytest.mark.unit
    def test_many_to_one_odd(self):
        """奇数个消费者时多出的一个分到 /A"""
        roles = assign_roles(MANY_TO_ONE, list(range(10)), 3)
        assert roles.producer_prefixes == ('A', 'B')
        assert roles.consumer_targets == (('A', 0), ('A', 0), ('B', 1))

    @pytest.mark.unit
    def test_errors(self):
        """未知模式与节点不足"""
        with pytest.raises(ScenarioError):
            assign_roles('broadcast', list(range(10)), 2)
        with pytest.raises(ScenarioError):
            assign_roles(ONE_TO_ONE, list(range(5)), 3)


class TestConnectivity:
    """测试连通图"""

    @pytest.mark.unit
    def test_line_graph(self):
        """等距直线上的节点构成路径图"""
        graph = connectivity_graph(Topology(PRESET_50, line_positions(5)))
        assert sorted(graph.edges) == [(0, 1), (1, 2), (2, 3), (3, 4)]

    @pytest.mark.unit
    def test_lattice_tree_is_tree(self):
        """生成的格点树在 125 米射程下恰好是一棵树"""
        points = random_lattice_tree(np.random.default_rng(4), 15)
        area = ScenarioConfig(scheme='daf', nodes=15, consumers=1, area=LATTICE_AREA).area_spec
        graph = connectivity_graph(Topology(area, lattice_positions(points)))
        assert nx.is_tree(graph)


class TestNetworkSimulation:
    """测试完整运行"""

    @pytest.mark.integration
    @pytest.mark.parametrize('scheme', ['daf', 'self-learning', 'aodv'])
    @pytest.mark.parametrize('tree_seed', [1, 2, 3])
    def test_hops_equal_tree_distance(self, scheme, tree_seed, mock_config):
        """静止树形拓扑上每个取回样本的跳数等于消费者到生产者的最短路长度（单播 Data 的方案）"""
        points = random_lattice_tree(np.random.default_rng(tree_seed), 12)
        scenario = ScenarioConfig(scheme=scheme, nodes=12, consumers=1, requests_per_consumer=10,
                                  runs=1, master_seed=tree_seed, duration_cap=60.0, area=LATTICE_AREA)
        network = NetworkSimulation(scenario, mock_config, positions=lattice_positions(points))
        outcome = network.run()

        graph = connectivity_graph(network.topology)
        consumer = network.roles.consumer_nodes[0]
        producer = network.roles.producer_nodes[0]
        distance = nx.shortest_path_length(graph, consumer, producer)
        assert outcome.metrics.total_retrieved > 0
        assert set(network.log.hops) == {distance}

    @pytest.mark.integration
    def test_flooding_hops_on_line(self, mock_config):
        """洪泛在直线拓扑上的跳数等于两端的距离"""
        scenario = ScenarioConfig(scheme='flooding', nodes=5, consumers=1, requests_per_consumer=10,
                                  runs=1, master_seed=2, duration_cap=60.0, area=LATTICE_AREA)
        network = NetworkSimulation(scenario, mock_config, positions=line_positions(5))
        outcome = network.run()
        consumer = network.roles.consumer_nodes[0]
        producer = network.roles.producer_nodes[0]
        assert outcome.metrics.total_retrieved > 0
        assert set(network.log.hops) == {abs(consumer - producer)}

    @pytest.mark.integration
    @pytest.mark.parametrize('scheme', ['daf', 'aodv'])
    @pytest.mark.parametrize('loop_seed', [1, 2, 3])
    def test_warm_hops_equal_loop_distance(self, scheme, loop_seed, mock_config):
        """静止环形拓扑有两条路径，预热后的跳数等于较短的一条"""
        points = random_lattice_loop(np.random.default_rng(loop_seed))
        scenario = ScenarioConfig(scheme=scheme, nodes=len(points), consumers=1, requests_per_consumer=20,
                                  runs=1, master_seed=loop_seed, duration_cap=60.0, area=LATTICE_AREA)
        network = NetworkSimulation(scenario, mock_config, positions=lattice_positions(points))
        network.run()

        graph = connectivity_graph(network.topology)
        assert nx.cycle_basis(graph)
        distance = nx.shortest_path_length(graph, network.roles.consumer_nodes[0],
                                           network.roles.producer_nodes[0])
        hops = network.log.hops
        assert len(hops) >= 5
        assert min(hops) >= distance
        assert set(hops[-5:]) == {distance}

    @pytest.mark.integration
    def test_daf_recovers_shortcut_on_square(self, mock_config):
        """消费者先被引向绕行的两跳路径，旁听到生产者的 Data 后改走直连的一跳"""
        config = copy.deepcopy(mock_config)
        config['ndn']['stale_lifetime'] = 100.0
        scenario = ScenarioConfig(scheme='daf', nodes=4, consumers=1, requests_per_consumer=10,
                                  runs=1, master_seed=1, duration_cap=60.0, area=LATTICE_AREA)
        # 角色只取决于种子，与位置无关
        roles = NetworkSimulation(scenario, config).roles
        consumer, producer = roles.consumer_nodes[0], roles.producer_nodes[0]
        detour, corner = [node for node in range(4) if node not in (consumer, producer)]
        cells = {consumer: (0, 0), producer: (1, 0), detour: (0, 1), corner: (1, 1)}
        network = NetworkSimulation(scenario, config, positions=lattice_positions([cells[i] for i in range(4)]))
        stack = network.stacks[consumer]
        stack.fib.update(Name.parse(roles.producer_prefixes[0]), nh=detour, hc=2, now=0.0)

        outcome = network.run()
        assert outcome.metrics.total_retrieved > 0
        assert network.log.hops[0] == 3
        assert network.log.hops[-1] == 1
        assert stack.counters['fib_shortcut_overheard'] >= 1
        assert stack.fib.lookup(Name.of(roles.producer_prefixes[0], 1), network.sim.now).nh == producer

    @pytest.mark.integration
    def test_deterministic(self, mock_config):
        """相同场景与种子逐事件一致"""
        scenario = _small_scenario(speed=4.0, event_log=True)
        first = NetworkSimulation(scenario, mock_config).run()
        second = NetworkSimulation(scenario, mock_config).run()
        assert first.metrics == second.metrics
        assert first.events == second.events
        assert first.final_clock == second.final_clock

    @pytest.mark.integration
    def test_finishes_before_cap(self, mock_config):
        """所有消费者结束后提前停止"""
        outcome = run_single(_small_scenario(), mock_config, run_index=0)
        assert not outcome.capped
        assert outcome.final_clock < 120.0
        assert outcome.metrics.total_issued == 60
        assert 0.0 < outcome.metrics.esr <= 100.0

    @pytest.mark.integration
    def test_duration_cap(self, mock_config):
        """达到时长上限时标记 capped"""
        outcome = run_single(_small_scenario(duration_cap=2.0), mock_config)
        assert outcome.capped
        assert outcome.final_clock == 2.0

    @pytest.mark.integration
    def test_position_trace(self, mock_config):
        """按周期采样所有节点的位置"""
        network = NetworkSimulation(_small_scenario(speed=4.0, position_trace=True, duration_cap=3.0), mock_config)
        outcome = network.run()
        times = sorted({row[0] for row in outcome.positions})
        assert times[:3] == [0.0, 1.0, 2.0]
        assert len(outcome.positions) == 50 * len(times)

    @pytest.mark.integration
    def test_runs_use_distinct_seeds(self, mock_config):
        """不同运行序号使用不同种子和布点"""
        scenario = _small_scenario()
        a = NetworkSimulation(scenario, mock_config, run_index=0)
        b = NetworkSimulation(scenario, mock_config, run_index=1)
        assert a.seed != b.seed
        assert a.initial_positions != b.initial_positions

    @pytest.mark.unit
    def test_position_count_mismatch(self, mock_config):
        """显式位置数与节点数不符时报错"""
        with pytest.raises(ScenarioError):
            NetworkSimulation(_small_scenario(), mock_config, positions=line_positions(3))

    @pytest.mark.integration
    def test_aodv_has_no_cache(self, mock_config):
        """aodv 运行不创建内容仓库"""
        network = NetworkSimulation(_small_scenario(scheme='aodv'), mock_config)
        assert all(not hasattr(stack, 'cs') for stack in network.stacks)
        assert network.scenario.cache_capacity == 0


def _full_grid_scenario(scheme: str, **overrides) -> ScenarioConfig:
    values = dict(scheme=scheme, nodes=12, consumers=2, requests_per_consumer=20, runs=1,
                  master_seed=4, duration_cap=60.0, area=LATTICE_AREA)
    values.update(overrides)
    return ScenarioConfig(**values)


FULL_GRID_4X3 = [(col, row) for row in range(3) for col in range(4)]


class TestRunInvariants:
    """测试整次运行上的不变量"""

    @pytest.mark.integration
    @pytest.mark.parametrize('scheme', ['daf', 'flooding', 'self-learning'])
    def test_one_interest_per_name_nonce(self, scheme, mock_config):
        """移动场景下每个节点对同一 (名字, nonce) 至多发出一次 Interest"""
        network = NetworkSimulation(_small_scenario(scheme=scheme, speed=4.0, rtx_max=2), mock_config)
        sent_interests = Counter()
        for link in network.links:
            def record(packet, dest=None, _node=link.node_id, _send=link.send):
                if isinstance(packet, InterestPacket):
                    sent_interests[(_node, packet.name, packet.nonce)] += 1
                return _send(packet, dest)
            link.send = record
        network.run()
        assert sent_interests
        assert max(sent_interests.values()) == 1

    @pytest.mark.integration
    def test_aodv_routes_loop_free(self, mock_config):
        """静止网络运行结束时，可用路由没有自环，也没有两节点互指的环"""
        network = NetworkSimulation(_small_scenario(scheme='aodv'), mock_config)
        network.run()
        now = network.sim.now
        checked = 0
        for router in network.stacks:
            for dest, route in router.routes.items():
                if not route.usable(now):
                    continue
                checked += 1
                assert route.next_hop != router.node_id
                back = network.stacks[route.next_hop].routes.get(dest)
                if dest != route.next_hop and back is not None and back.usable(now):
                    assert back.next_hop != router.node_id
        assert checked > 0

    @pytest.mark.integration
    def test_rerr_has_cause(self, mock_config):
        """每个 RERR 都发生在检测到链路断开、收到 RERR 或无路由丢弃数据的处理过程中"""
        network = NetworkSimulation(_small_scenario(scheme='aodv', speed=8.0, consumers=5,
                                                    requests_per_consumer=100), mock_config)
        inside = set()
        uncaused = []

        def within(router, name):
            original = getattr(router, name)

            def wrapped(*args, **kwargs):
                inside.add(router.node_id)
                try:
                    return original(*args, **kwargs)
                finally:
                    inside.discard(router.node_id)
            setattr(router, name, wrapped)

        for router in network.stacks:
            for name in ('detect_link_break', 'handle_rerr', 'on_ip'):
                within(router, name)

            def send_rerr(unreachable, _router=router, _send=router._send_rerr):
                if _router.node_id not in inside:
                    uncaused.append((_router.node_id, network.sim.now))
                return _send(unreachable)
            router._send_rerr = send_rerr

        network.run()
        assert sum(router.counters['rerr_sent'] for router in network.stacks) > 0
        assert uncaused == []

    @pytest.mark.integration
    def test_flooding_costs_more_per_data(self, mock_config):
        """静止 12 节点满格网上洪泛每个 Data 的发送次数高于 DAF"""
        positions = lattice_positions(FULL_GRID_4X3)
        daf = NetworkSimulation(_full_grid_scenario('daf'), mock_config, positions=positions).run()
        flooding = NetworkSimulation(_full_grid_scenario('flooding'), mock_config, positions=positions).run()
        assert daf.metrics.tx_events_per_data is not None
        assert flooding.metrics.tx_events_per_data is not None
        assert flooding.metrics.tx_events_per_data > daf.metrics.tx_events_per_data
