"""
测试 NDN 转发策略
"""
import pytest
from unittest.mock import Mock

from src.ndn_tables import LOCAL_FACE
from src.packets import DataPacket, InterestPacket, Name
from src.radio import Frame
from src.strategies import STRATEGIES, DafStrategy, FloodingStrategy, SelfLearningStrategy
from tests.conftest import sent

A = Name.parse('/A')


def _interest(seq=1, nonce=100, discovery=False, hop_count=0):
    return InterestPacket(Name.of('A', seq), nonce=nonce, discovery=discovery, hop_count=hop_count)


def _data(seq=1, hc=0, announced=None):
    return DataPacket(Name.of('A', seq), announced_prefix=announced, hc_from_source=hc)


@pytest.fixture
def make(sim, streams, mock_link, mock_config):
    def factory(cls, node_id=5, cs_capacity=10):
        forwarder = cls(node_id, sim, mock_link, streams, mock_config, cs_capacity=cs_capacity)
        forwarder.app_sink = Mock()
        return forwarder
    return factory


class TestRegistry:
    """测试策略注册表"""

    @pytest.mark.unit
    def test_names(self):
        """三种 NDN 方案"""
        assert set(STRATEGIES) == {'daf', 'flooding', 'self-learning'}


class TestDaf:
    """测试 DAF 策略"""

    @pytest.mark.unit
    def test_local_miss_broadcasts(self, make, mock_link):
        """本地 Interest 未命中 FIB 时广播，跳数不变"""
        daf = make(DafStrategy)
        daf.express_interest(_interest())
        [(packet, dest)] = sent(mock_link)
        assert dest is None
        assert packet.hop_count == 0
        assert daf.counters['interest_broadcast'] == 1

    @pytest.mark.unit
    def test_relay_miss_broadcasts_incremented(self, make, mock_link):
        """中继广播时跳数加一"""
        daf = make(DafStrategy)
        daf.on_interest(_interest(hop_count=2), ep=3, via_broadcast=True)
        [(packet, dest)] = sent(mock_link)
        assert dest is None
        assert packet.hop_count == 3

    @pytest.mark.unit
    def test_hit_unicasts_and_arms_timer(self, make, mock_link, sim):
        """FIB 命中单播给 hc 最小的下一跳并启动计时器"""
        daf = make(DafStrategy)
        daf.fib.update(A, nh=7, hc=3, now=0.0)
        best = daf.fib.update(A, nh=8, hc=2, now=0.0)
        daf.on_interest(_interest(), ep=3)
        [(_, dest)] = sent(mock_link)
        assert dest == 8
        assert best.pending_timer is not None and best.pending_timer.pending

    @pytest.mark.unit
    def test_never_sends_back_to_ep(self, make, mock_link):
        """唯一下一跳是来源时改为广播"""
        daf = make(DafStrategy)
        daf.fib.update(A, nh=3, hc=1, now=0.0)
        daf.on_interest(_interest(), ep=3)
        [(_, dest)] = sent(mock_link)
        assert dest is None
        assert daf.counters['fib_miss_ep_only'] == 1

    @pytest.mark.unit
    def test_alternative_nexthop_when_best_is_ep(self, make, mock_link):
        """最佳下一跳是来源时选次优"""
        daf = make(DafStrategy)
        daf.fib.update(A, nh=3, hc=1, now=0.0)
        daf.fib.update(A, nh=9, hc=4, now=0.0)
        daf.on_interest(_interest(), ep=3)
        [(_, dest)] = sent(mock_link)
        assert dest == 9

    @pytest.mark.unit
    def test_data_return_learns_fib(self, make, sim):
        """Data 返回：交给本地应用、学习 FIB、写入 CS"""
        daf = make(DafStrategy)
        daf.express_interest(_interest())
        sim.schedule(0.1, daf.on_data, _data(hc=0), 7)
        sim.run()
        data, hops = daf.app_sink.call_args.args
        assert hops == 1
        assert data.hc_from_source == 1
        hop = daf.fib.nexthop(A, 7)
        assert hop.hc == 1
        assert hop.srtt == pytest.approx(0.1)
        assert hop.pending_timer is None
        assert Name.of('A', 1) in daf.cs

    @pytest.mark.unit
    def test_data_feedback_cancels_timer(self, make, sim):
        """经同一下一跳收到 Data 撤销寿命计时器"""
        daf = make(DafStrategy)
        daf.fib.update(A, nh=7, hc=1, now=0.0, rtt_i=0.05)
        daf.on_interest(_interest(), ep=3)
        sim.schedule(0.02, daf.on_data, _data(), 7)
        sim.run()
        assert daf.fib.nexthop(A, 7) is not None
        assert daf.counters['fib_timer_expired'] == 0

    @pytest.mark.unit
    def test_timer_expiry_removes_nexthop(self, make, sim):
        """无 Data 返回时下一跳到期被删除"""
        daf = make(DafStrategy)
        daf.fib.update(A, nh=7, hc=1, now=0.0, rtt_i=0.05)
        daf.on_interest(_interest(), ep=3)
        sim.run()
        assert daf.fib.nexthop(A, 7) is None
        assert daf.counters['fib_timer_expired'] == 1

    @pytest.mark.unit
    def test_downstream_unicast_and_broadcast(self, make, mock_link):
        """一个下游单播，多个下游广播一次"""
        daf = make(DafStrategy)
        daf.on_interest(_interest(seq=1, nonce=1), ep=3)
        daf.on_interest(_interest(seq=2, nonce=2), ep=3)
        daf.on_interest(_interest(seq=2, nonce=3), ep=4)
        mock_link.send.reset_mock()

        daf.on_data(_data(seq=1, hc=2), 7)
        daf.on_data(_data(seq=2, hc=2), 7)
        (first, dest1), (second, dest2) = sent(mock_link)
        assert (dest1, first.hc_from_source) == (3, 3)
        assert (dest2, second.hc_from_source) == (None, 3)

    @pytest.mark.unit
    def test_unsolicited_data_cached(self, make, mock_link):
        """未请求的 Data 进入 CS 但不转发"""
        daf = make(DafStrategy)
        daf.on_data(_data(), 7)
        assert daf.counters['data_unsolicited'] == 1
        assert Name.of('A', 1) in daf.cs
        mock_link.send.assert_not_called()

    @pytest.mark.unit
    def test_cs_hit_replies(self, make, mock_link):
        """CS 命中直接回复，hc 从 0 开始"""
        daf = make(DafStrategy)
        daf.cs.insert(_data(hc=4))
        daf.on_interest(_interest(), ep=3, via_broadcast=True)
        [(packet, dest)] = sent(mock_link)
        assert dest == 3
        assert packet.hc_from_source == 0
        assert packet.announced_prefix == A
        assert len(daf.pit) == 0

    @pytest.mark.unit
    def test_cs_hit_local(self, make):
        """本地 Interest 命中 CS，跳数为 0"""
        daf = make(DafStrategy)
        daf.cs.insert(_data())
        daf.express_interest(_interest())
        assert daf.app_sink.call_args.args[1] == 0

    @pytest.mark.unit
    def test_producer_answers(self, make, mock_link):
        """本地生产者应答，广播收到的 Interest 带前缀通告"""
        daf = make(DafStrategy)
        source = Mock()
        source.make_data.side_effect = lambda name: DataPacket(name)
        daf.register_producer(A, source)
        daf.receive(Frame(3, None, _interest(), 40))
        [(packet, dest)] = sent(mock_link)
        assert dest == 3
        assert packet.hc_from_source == 0
        assert packet.announced_prefix == A
        assert Name.of('A', 1) in daf.cs

    @pytest.mark.unit
    def test_duplicate_nonce_dropped(self, make, mock_link):
        """重复 nonce 丢弃"""
        daf = make(DafStrategy)
        daf.on_interest(_interest(nonce=9), ep=3)
        daf.on_interest(_interest(nonce=9), ep=4)
        assert mock_link.send.call_count == 1
        assert daf.counters['duplicate_nonce'] == 1

    @pytest.mark.unit
    def test_producer_answers_shorter_copy(self, make, mock_link):
        """生产者对同一 nonce 更短路径的副本再回答一次，更长的副本不回答"""
        daf = make(DafStrategy, cs_capacity=0)
        source = Mock()
        source.make_data.side_effect = lambda name: DataPacket(name)
        daf.register_producer(A, source)
        daf.on_interest(_interest(nonce=9, hop_count=3), ep=3, via_broadcast=True)
        daf.on_interest(_interest(nonce=9, hop_count=1), ep=4, via_broadcast=True)
        daf.on_interest(_interest(nonce=9, hop_count=2), ep=6, via_broadcast=True)
        assert [dest for _, dest in sent(mock_link)] == [3, 4]
        assert all(packet.hc_from_source == 0 for packet, _ in sent(mock_link))
        assert daf.counters['shorter_copy_answered'] == 1
        assert daf.counters['duplicate_nonce'] == 2

    @pytest.mark.unit
    def test_relay_ignores_shorter_copy(self, make, mock_link):
        """非生产者对重复 nonce 一律丢弃"""
        daf = make(DafStrategy, cs_capacity=0)
        daf.on_interest(_interest(nonce=9, hop_count=3), ep=3, via_broadcast=True)
        daf.on_interest(_interest(nonce=9, hop_count=1), ep=4, via_broadcast=True)
        assert mock_link.send.call_count == 1
        assert daf.counters['shorter_copy_answered'] == 0

    @pytest.mark.unit
    def test_overhear_learns_shorter_path(self, make):
        """旁听到更短路径的 Data 时学习该下一跳"""
        daf = make(DafStrategy)
        daf.fib.update(A, nh=7, hc=3, now=0.0)
        daf.overhear(Frame(2, 9, _data(hc=0), 600))
        assert daf.fib.nexthop(A, 2).hc == 1
        assert daf.fib.lookup(Name.of('A', 5), 0.0).nh == 2
        assert daf.counters['fib_shortcut_overheard'] == 1

    @pytest.mark.unit
    def test_overhear_ignores_longer_or_unknown(self, make):
        """不更短的路径、没有 FIB 条目的前缀、旁听到的 Interest 都不学习"""
        daf = make(DafStrategy)
        daf.overhear(Frame(2, 9, _data(hc=0), 600))
        assert len(daf.fib) == 0
        daf.fib.update(A, nh=7, hc=2, now=0.0)
        daf.overhear(Frame(4, 9, _data(hc=1), 600))
        daf.overhear(Frame(6, 9, _interest(), 40))
        assert daf.fib.nexthop(A, 4) is None
        assert daf.fib.nexthop(A, 6) is None
        assert daf.counters['fib_shortcut_overheard'] == 0

    @pytest.mark.unit
    def test_housekeeping_purges_stale(self, make, sim):
        """周期性清理陈旧下一跳"""
        daf = make(DafStrategy)
        daf.fib.update(A, nh=7, hc=1, now=0.0)
        daf.start()
        sim.run(until=2.5)
        assert daf.fib.nexthop(A, 7) is None
        assert daf.counters['fib_stale_removed'] == 1


class TestFlooding:
    """测试洪泛策略"""

    @pytest.mark.unit
    def test_everything_broadcast(self, make, mock_link):
        """Interest 与 Data 都广播"""
        flood = make(FloodingStrategy)
        flood.fib.update(A, nh=7, hc=1, now=0.0)
        flood.on_interest(_interest(), ep=3)
        flood.on_data(_data(), 7)
        assert [dest for _, dest in sent(mock_link)] == [None, None]

    @pytest.mark.unit
    def test_cs_reply_broadcast(self, make, mock_link):
        """CS 命中的回复也广播"""
        flood = make(FloodingStrategy)
        flood.cs.insert(_data())
        flood.on_interest(_interest(), ep=3)
        [(_, dest)] = sent(mock_link)
        assert dest is None

    @pytest.mark.unit
    def test_no_fib_learning(self, make):
        """不学习 FIB"""
        flood = make(FloodingStrategy)
        flood.express_interest(_interest())
        flood.on_data(_data(), 7)
        assert len(flood.fib) == 0
        flood.app_sink.assert_called_once()

    @pytest.mark.unit
    def test_producer_ignores_shorter_copy(self, make, mock_link):
        """洪泛生产者不对重复 nonce 再回答"""
        flood = make(FloodingStrategy, cs_capacity=0)
        source = Mock()
        source.make_data.side_effect = lambda name: DataPacket(name)
        flood.register_producer(A, source)
        flood.on_interest(_interest(nonce=9, hop_count=3), ep=3, via_broadcast=True)
        flood.on_interest(_interest(nonce=9, hop_count=1), ep=4, via_broadcast=True)
        assert mock_link.send.call_count == 1


class TestSelfLearning:
    """测试自学习策略"""

    @pytest.mark.unit
    def test_local_miss_becomes_discovery(self, make, mock_link):
        """FIB 未命中的本地 Interest 变为发现 Interest 广播"""
        sl = make(SelfLearningStrategy)
        sl.express_interest(_interest())
        [(packet, dest)] = sent(mock_link)
        assert dest is None
        assert packet.discovery is True

    @pytest.mark.unit
    def test_relay_drops_plain_interest_on_miss(self, make, mock_link):
        """中继对非发现 Interest 未命中时丢弃并删除 PIT 条目"""
        sl = make(SelfLearningStrategy)
        sl.on_interest(_interest(), ep=3)
        mock_link.send.assert_not_called()
        assert len(sl.pit) == 0
        assert sl.counters['interest_dropped_fib_miss'] == 1

    @pytest.mark.unit
    def test_relay_unicasts_on_hit(self, make, mock_link):
        """FIB 命中单播"""
        sl = make(SelfLearningStrategy)
        sl.fib.update(A, nh=7, hc=2, now=0.0)
        sl.on_interest(_interest(), ep=3)
        [(packet, dest)] = sent(mock_link)
        assert dest == 7
        assert packet.discovery is False

    @pytest.mark.unit
    def test_discovery_relayed_as_broadcast(self, make, mock_link):
        """发现 Interest 由中继继续广播"""
        sl = make(SelfLearningStrategy)
        sl.fib.update(A, nh=7, hc=2, now=0.0)
        sl.on_interest(_interest(discovery=True), ep=3, via_broadcast=True)
        [(_, dest)] = sent(mock_link)
        assert dest is None

    @pytest.mark.unit
    def test_announcement_replaces_fib(self, make, mock_link):
        """带前缀通告的 Data 替换 FIB 下一跳，并逐下游单播"""
        sl = make(SelfLearningStrategy)
        sl.fib.update(A, nh=9, hc=1, now=0.0)
        sl.on_interest(_interest(nonce=1, discovery=True), ep=3, via_broadcast=True)
        sl.on_interest(_interest(nonce=2, discovery=True), ep=4, via_broadcast=True)
        mock_link.send.reset_mock()

        sl.on_data(_data(hc=1, announced=A), 7)
        assert [hop.nh for hop in sl.fib.nexthops()] == [7]
        assert sl.fib.nexthop(A, 7).hc == 2
        assert [dest for _, dest in sent(mock_link)] == [3, 4]

    @pytest.mark.unit
    def test_plain_data_does_not_create_entry(self, make):
        """无通告的 Data 不新建下一跳"""
        sl = make(SelfLearningStrategy)
        sl.on_data(_data(), 7)
        assert len(sl.fib) == 0

    @pytest.mark.unit
    def test_producer_announces_on_discovery(self, make, mock_link):
        """生产者对发现 Interest 的回复带前缀通告"""
        sl = make(SelfLearningStrategy)
        source = Mock()
        source.make_data.side_effect = lambda name: DataPacket(name)
        sl.register_producer(A, source)
        sl.on_interest(_interest(discovery=True), ep=3)
        [(packet, dest)] = sent(mock_link)
        assert dest == 3
        assert packet.announced_prefix == A

    @pytest.mark.unit
    def test_local_face_constant(self):
        """本地面标识与链路地址不冲突"""
        assert LOCAL_FACE < 0
