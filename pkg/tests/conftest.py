"""
pytest 配置和共享fixtures
"""
import tempfile
from typing import List, Sequence, Tuple

import pytest
from unittest.mock import Mock

from src.kernel import RandomStreams, Simulator
from src.radio import NodePosition


@pytest.fixture
def temp_dir():
    """创建临时目录用于测试"""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield tmpdir


@pytest.fixture
def mock_config():
    """模拟配置字典（与 config/config.yaml 的默认值一致）"""
    return {
        'logging': {
            'level': 'WARNING',
            'log_file': 'logs/test.log',
        },
        'output': {'dir': 'results'},
        'simulation': {'workers': 1, 'position_sample_period': 1.0},
        'mac': {
            'data_rate_bps': 11e6,
            'overhead_s': 192e-6,
            'difs_s': 50e-6,
            'slot_s': 20e-6,
            'cw_min': 31,
            'max_backoff_stages': 3,
            'unicast_attempts': 3,
            'queue_capacity': 200,
        },
        'ndn': {
            'interest_lifetime': 2.0,
            'checker_period': 1.0,
            'stale_lifetime': 1.0,
            'initial_timeout': 1.0,
            'dead_nonce_lifetime': 6.0,
        },
        'aodv': {
            'hello_interval': 1.0,
            'allowed_hello_loss': 2,
            'active_route_timeout': 3.0,
            'rreq_retries': 2,
            'node_traversal_time': 0.04,
            'net_diameter': 35,
            'rreq_id_cache': 6.0,
            'buffer_capacity': 64,
            'rreq_jitter': 0.01,
        },
        'traffic': {'app_timeout': 2.0, 'start_window': [1.0, 3.0]},
    }


@pytest.fixture
def sim():
    return Simulator()


@pytest.fixture
def streams():
    return RandomStreams(42)


@pytest.fixture
def mock_link():
    """记录 send(packet, dest) 调用的链路层替身"""
    link = Mock()
    link.send.return_value = True
    link.last_tx_time = float('-inf')
    return link


def sent(link: Mock) -> List[Tuple[object, object]]:
    """mock_link 上的 (packet, dest) 列表"""
    calls = []
    for call in link.send.call_args_list:
        packet = call.args[0]
        dest = call.args[1] if len(call.args) > 1 else call.kwargs.get('dest')
        calls.append((packet, dest))
    return calls


def line_positions(count: int, spacing: float = 100.0) -> List[NodePosition]:
    """沿 x 轴等距排开的静止节点"""
    return [NodePosition(node=i, x=i * spacing, y=0.0) for i in range(count)]


def lattice_positions(points: Sequence[Tuple[int, int]], spacing: float = 100.0) -> List[NodePosition]:
    return [NodePosition(node=i, x=col * spacing, y=row * spacing) for i, (col, row) in enumerate(points)]


def random_lattice_tree(rng, size: int, grid: int = 10) -> List[Tuple[int, int]]:
    """
    在 grid x grid 格点上生长一棵树：每个新点恰好与一个已有点四邻接

    格点间距 100、半径 125 时单位圆盘图就是这棵树（对角 141 超出射程），路径唯一。
    """
    points = [(grid // 2, grid // 2)]
    occupied = set(points)
    while len(points) < size:
        col, row = points[int(rng.integers(0, len(points)))]
        dc, dr = [(1, 0), (-1, 0), (0, 1), (0, -1)][int(rng.integers(0, 4))]
        candidate = (col + dc, row + dr)
        if candidate in occupied or not (0 <= candidate[0] < grid and 0 <= candidate[1] < grid):
            continue
        adjacent = sum((candidate[0] + a, candidate[1] + b) in occupied
                       for a, b in [(1, 0), (-1, 0), (0, 1), (0, -1)])
        if adjacent != 1:
            continue
        points.append(candidate)
        occupied.add(candidate)
    return points


def random_lattice_loop(rng, grid: int = 10) -> List[Tuple[int, int]]:
    """
    grid x grid 格点上随机矩形的边界，按环的顺序给出

    边长 2 到 4 格，单位圆盘图恰好是一个环：任意两点之间有两条长度不同（或相等）的路径。
    """
    width, height = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    col0 = int(rng.integers(0, grid - width))
    row0 = int(rng.integers(0, grid - height))
    ring = ([(col0 + i, row0) for i in range(width)]
            + [(col0 + width, row0 + j) for j in range(height)]
            + [(col0 + width - i, row0 + height) for i in range(width)]
            + [(col0, row0 + height - j) for j in range(height)])
    return ring
