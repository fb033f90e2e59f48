"""
实验编排模块
场景配置、多次运行与聚合、参数扫描、结果 CSV 与汇总报告
"""
import itertools
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
import yaml
from loguru import logger

from .metrics import write_events
from .radio import PRESETS, AreaSpec
from .simulation import PATTERNS, ONE_TO_ONE, RunOutcome, producer_count, run_single
from .utils import RunFailure, ScenarioError, ensure_dir, format_seconds

NDN_SCHEMES = ('daf', 'flooding', 'self-learning')
SCHEMES = NDN_SCHEMES + ('aodv',)

CONFIG_COLUMNS = ['scheme', 'nodes', 'speed', 'pattern', 'cs', 'rtx', 'rate']
METRIC_COLUMNS = ['esr', 'latency_s', 'tx_events_per_data', 'avg_hops', 'tx_bytes_per_data',
                  'total_tx', 'total_retrieved']
RUN_COLUMNS = CONFIG_COLUMNS + ['run'] + METRIC_COLUMNS
AGGREGATE_COLUMNS = CONFIG_COLUMNS + ['runs'] + [f"{metric}_{stat}" for metric in METRIC_COLUMNS
                                                 for stat in ('mean', 'std')]
POSITION_COLUMNS = ['time', 'node', 'x', 'y']
FLOAT_FORMAT = '%.10g'

SWEEPABLE_AXES = ('speed', 'nodes', 'cs_capacity', 'rtx_max', 'request_rate', 'scheme', 'pattern')
AXIS_ALIASES = {'cs': 'cs_capacity', 'rtx': 'rtx_max', 'rate': 'request_rate'}

_INT_KEYS = {'nodes', 'cs_capacity', 'rtx_max', 'runs', 'master_seed', 'requests_per_consumer', 'consumers'}
_FLOAT_KEYS = {'speed', 'request_rate', 'duration_cap'}
_BOOL_KEYS = {'allow_aodv_cache', 'event_log', 'position_trace'}


@dataclass(frozen=True)
class ScenarioConfig:
    """
    一组实验参数

    cs_capacity 为 None 时取默认值：NDN 方案 200，aodv 为 0。
    """
    scheme: str
    nodes: int = 50
    speed: float = 0.0
    pattern: str = ONE_TO_ONE
    cs_capacity: Optional[int] = None
    rtx_max: int = 0
    request_rate: float = 5.0
    runs: int = 10
    master_seed: int = 1
    duration_cap: float = 600.0
    requests_per_consumer: int = 500
    consumers: int = 10
    area: Optional[Dict[str, Any]] = None
    allow_aodv_cache: bool = False
    event_log: bool = False
    position_trace: bool = False

    def __post_init__(self):
        self.validate()

    @property
    def cache_capacity(self) -> int:
        if self.cs_capacity is not None:
            return self.cs_capacity
        return 0 if self.scheme == 'aodv' else 200

    @property
    def area_spec(self) -> AreaSpec:
        if self.area is not None:
            try:
                return AreaSpec.from_dict(self.area)
            except (KeyError, TypeError, ValueError) as e:
                raise ScenarioError(f"Invalid area specification {self.area}: {e}") from e
        preset = PRESETS.get(self.nodes)
        if preset is None:
            raise ScenarioError(f"No area preset for {self.nodes} nodes; provide 'area'")
        return preset

    def validate(self):
        """
        校验取值范围与组合规则

        Raises:
            ScenarioError: 任一取值非法
        """
        if self.scheme not in SCHEMES:
            raise ScenarioError(f"Unknown scheme {self.scheme!r}; expected one of {', '.join(SCHEMES)}")
        if self.pattern not in PATTERNS:
            raise ScenarioError(f"Unknown pattern {self.pattern!r}; expected one of {', '.join(PATTERNS)}")

        checks = [
            (self.nodes >= 2, f"nodes must be >= 2, got {self.nodes}"),
            (self.speed >= 0, f"speed must be >= 0, got {self.speed}"),
            (self.cs_capacity is None or self.cs_capacity >= 0, f"cs_capacity must be >= 0, got {self.cs_capacity}"),
            (self.rtx_max >= 0, f"rtx_max must be >= 0, got {self.rtx_max}"),
            (self.request_rate > 0, f"request_rate must be > 0, got {self.request_rate}"),
            (self.runs >= 1, f"runs must be >= 1, got {self.runs}"),
            (self.duration_cap > 0, f"duration_cap must be > 0, got {self.duration_cap}"),
            (self.requests_per_consumer >= 1, f"requests_per_consumer must be >= 1, got {self.requests_per_consumer}"),
            (self.consumers >= 1, f"consumers must be >= 1, got {self.consumers}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ScenarioError(message)

        if self.scheme == 'aodv' and self.cache_capacity != 0 and not self.allow_aodv_cache:
            raise ScenarioError("cs_capacity applies only to NDN schemes; set allow_aodv_cache to override")

        area = self.area_spec
        if self.nodes > area.capacity:
            raise ScenarioError(f"{self.nodes} nodes exceed the {area.capacity}-slot placement grid")
        needed = self.consumers + producer_count(self.pattern, self.consumers)
        if needed > self.nodes:
            raise ScenarioError(f"Pattern {self.pattern} with {self.consumers} consumers needs {needed} nodes")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScenarioConfig':
        """
        从键值对构建场景，补全默认值

        Raises:
            ScenarioError: 缺少 scheme、存在未知键或取值非法
        """
        if not isinstance(data, dict):
            raise ScenarioError(f"Scenario must be a mapping, got {type(data).__name__}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ScenarioError(f"Unknown scenario keys: {', '.join(unknown)}")
        if 'scheme' not in data:
            raise ScenarioError("Missing required key 'scheme'")
        return cls(**{key: coerce_value(key, value) for key, value in data.items()})

    def with_values(self, values: Dict[str, Any]) -> 'ScenarioConfig':
        changes = {resolve_axis(key, sweep_only=False): value for key, value in values.items()}
        return replace(self, **{key: coerce_value(key, value) for key, value in changes.items()})

    def echo(self) -> Dict[str, Any]:
        """CSV 中回显的配置列"""
        return {
            'scheme': self.scheme,
            'nodes': self.nodes,
            'speed': self.speed,
            'pattern': self.pattern,
            'cs': self.cache_capacity,
            'rtx': self.rtx_max,
            'rate': self.request_rate,
        }


def resolve_axis(axis: str, sweep_only: bool = True) -> str:
    """
    把轴名（含别名 cs/rtx/rate）映射为场景键

    Raises:
        ScenarioError: 未知轴
    """
    key = AXIS_ALIASES.get(axis, axis)
    allowed = SWEEPABLE_AXES if sweep_only else tuple(f.name for f in fields(ScenarioConfig))
    if key not in allowed:
        raise ScenarioError(f"Unknown axis {axis!r}; sweepable axes: {', '.join(SWEEPABLE_AXES)}")
    return key


def coerce_value(key: str, value: Any) -> Any:
    """按场景键的类型转换取值（CLI 传入的是字符串）"""
    if value is None:
        return None
    try:
        if key in _INT_KEYS:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if key in _FLOAT_KEYS:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if key in _BOOL_KEYS:
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ('true', 'false'):
                return value.lower() == 'true'
            raise ValueError(value)
        if key == 'area':
            if not isinstance(value, dict):
                raise ValueError(value)
            return dict(value)
        return str(value)
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"Invalid value {value!r} for {key}") from e


def parse_axis_values(axis: str, raw: str) -> List[Any]:
    """'0,2,4' -> [0.0, 2.0, 4.0]（按轴的类型）"""
    key = resolve_axis(axis)
    values = [part.strip() for part in raw.split(',') if part.strip()]
    if not values:
        raise ScenarioError(f"No values given for axis {axis!r}")
    return [coerce_value(key, value) for value in values]


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """
    读取场景文件（JSON 兼容的键值文本）

    Args:
        path: 场景文件路径

    Returns:
        校验过的 ScenarioConfig

    Raises:
        FileNotFoundError: 文件不存在
        ScenarioError: 内容非法
    """
    scenario_file = Path(path)
    if not scenario_file.exists():
        raise FileNotFoundError(f"Scenario file not found: {scenario_file}")
    with open(scenario_file, 'r', encoding='utf-8') as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ScenarioError(f"Cannot parse {scenario_file}: {e}") from e
    return ScenarioConfig.from_dict(data)


# ---------------------------------------------------------------- 运行与聚合

@dataclass
class ExperimentResult:
    scenario: ScenarioConfig
    outcomes: List[RunOutcome]
    runs: pd.DataFrame
    aggregate: pd.DataFrame


def run_rows(scenario: ScenarioConfig, outcomes: Sequence[RunOutcome]) -> pd.DataFrame:
    rows = []
    for outcome in outcomes:
        metrics = outcome.metrics
        row = scenario.echo()
        row['run'] = outcome.run_index
        row.update({column: getattr(metrics, column) for column in METRIC_COLUMNS})
        rows.append(row)
    return pd.DataFrame(rows, columns=RUN_COLUMNS)


def aggregate_runs(scenario: ScenarioConfig, runs: pd.DataFrame) -> pd.DataFrame:
    """
    每项指标的均值与样本标准差（ddof=1）；只有一次运行时标准差为 0，缺失值不参与计算
    """
    row: Dict[str, Any] = scenario.echo()
    row['runs'] = len(runs)
    for metric in METRIC_COLUMNS:
        values = pd.to_numeric(runs[metric], errors='coerce').dropna()
        if values.empty:
            row[f"{metric}_mean"] = None
            row[f"{metric}_std"] = None
            continue
        row[f"{metric}_mean"] = float(values.mean())
        row[f"{metric}_std"] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return pd.DataFrame([row], columns=AGGREGATE_COLUMNS)


def _execute_runs(scenario: ScenarioConfig, config: Dict, workers: int) -> List[RunOutcome]:
    if workers <= 1 or scenario.runs == 1:
        outcomes = []
        for index in range(scenario.runs):
            try:
                outcome = run_single(scenario, config, index)
            except Exception as e:
                logger.error(f"Run {index} failed: {e}", exc_info=True)
                raise RunFailure(index, e) from e
            logger.info(f"Run {index}: ESR {outcome.metrics.esr:.2f}%, "
                        f"latency {format_seconds(outcome.metrics.latency_s)}, "
                        f"{outcome.metrics.total_tx} Tx, t={outcome.final_clock:.1f}s")
            outcomes.append(outcome)
        return outcomes

    results: Dict[int, RunOutcome] = {}
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(run_single, scenario, config, index): index for index in range(scenario.runs)}
        for future in as_completed(futures):
            index = futures[future]
            try:
                results[index] = future.result()
            except Exception as e:
                logger.error(f"Run {index} failed: {e}", exc_info=True)
                raise RunFailure(index, e) from e
            logger.info(f"Run {index}: ESR {results[index].metrics.esr:.2f}%, "
                        f"latency {format_seconds(results[index].metrics.latency_s)}")
    return [results[index] for index in range(scenario.runs)]


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def run_experiment(scenario: ScenarioConfig, config: Optional[Dict] = None,
                   out_dir: Optional[Union[str, Path]] = None, workers: Optional[int] = None) -> ExperimentResult:
    """
    执行 runs 次独立运行（第 i 次的种子由 master_seed 与 i 派生）并聚合

    Args:
        scenario: 场景
        config: 应用配置字典
        out_dir: 输出目录；None 时不写文件
        workers: 并行进程数；默认读取 simulation.workers

    Returns:
        ExperimentResult

    Raises:
        RunFailure: 某次运行抛出异常
    """
    config = config or {}
    if workers is None:
        workers = int(config.get('simulation', {}).get('workers', 1))

    logger.info(f"Running {scenario.runs} x {scenario.scheme} ({scenario.nodes} nodes, {scenario.speed} m/s, "
                f"{scenario.pattern}, cs={scenario.cache_capacity}, rtx={scenario.rtx_max}, "
                f"rate={scenario.request_rate})")
    outcomes = _execute_runs(scenario, config, workers)
    runs = run_rows(scenario, outcomes)
    aggregate = aggregate_runs(scenario, runs)

    if out_dir is not None:
        target = ensure_dir(out_dir)
        write_csv(runs, target / 'runs.csv')
        write_csv(aggregate, target / 'aggregate.csv')
        for outcome in outcomes:
            if scenario.event_log:
                write_events(outcome.events, target / f"events_run{outcome.run_index}.csv")
            if scenario.position_trace:
                positions = pd.DataFrame(outcome.positions, columns=POSITION_COLUMNS)
                write_csv(positions, target / f"positions_run{outcome.run_index}.csv")
        logger.info(f"Results written to {target}")

    return ExperimentResult(scenario, outcomes, runs, aggregate)


def sweep(base: ScenarioConfig, axes: Sequence[Tuple[str, Sequence[Any]]], config: Optional[Dict] = None,
          out_dir: Optional[Union[str, Path]] = None, workers: Optional[int] = None) -> pd.DataFrame:
    """
    对若干轴的取值做笛卡尔积，每个组合一行聚合结果

    Args:
        base: 基础场景
        axes: [(轴名, 取值列表), ...]，按嵌套顺序展开
        config: 应用配置字典
        out_dir: 输出目录；写出 sweep.csv
        workers: 并行进程数

    Returns:
        聚合结果表

    Raises:
        ScenarioError: 未知轴或某个组合不合法（在任何运行开始前检查）
    """
    if not axes:
        raise ScenarioError("Sweep needs at least one axis")
    keys = [resolve_axis(axis) for axis, _ in axes]
    value_lists = [[coerce_value(key, value) for value in values] for key, (_, values) in zip(keys, axes)]

    scenarios = [base.with_values(dict(zip(keys, combo))) for combo in itertools.product(*value_lists)]
    logger.info(f"Sweep over {' x '.join(keys)}: {len(scenarios)} combinations")

    rows = [run_experiment(scenario, config, workers=workers).aggregate for scenario in scenarios]
    table = pd.concat(rows, ignore_index=True)

    if out_dir is not None:
        path = write_csv(table, ensure_dir(out_dir) / 'sweep.csv')
        logger.info(f"Sweep table written to {path}")
    return table


def report(in_dir: Union[str, Path]) -> pd.DataFrame:
    """
    汇总目录下所有 aggregate.csv 与 sweep.csv，写出 report.csv

    Raises:
        FileNotFoundError: 目录中没有结果文件
    """
    root = Path(in_dir)
    sources = sorted(root.rglob('aggregate.csv')) + sorted(root.rglob('sweep.csv'))
    if not sources:
        raise FileNotFoundError(f"No aggregate.csv or sweep.csv under {root}")

    tables = []
    for source in sources:
        table = pd.read_csv(source)
        table.insert(0, 'source', str(source.relative_to(root)))
        tables.append(table)
    combined = pd.concat(tables, ignore_index=True)
    write_csv(combined, root / 'report.csv')
    logger.info(f"Report over {len(sources)} files written to {root / 'report.csv'}")
    return combined


def run_family(name: str, config: Dict, out_dir: Optional[Union[str, Path]] = None,
               workers: Optional[int] = None) -> pd.DataFrame:
    """
    运行 config.yaml 中 families 段定义的一组实验

    Raises:
        ScenarioError: 未知实验组
    """
    families = config.get('families', {})
    family = families.get(name)
    if family is None:
        raise ScenarioError(f"Unknown family {name!r}; available: {', '.join(sorted(families))}")

    scenario_path = Path(family['scenario'])
    if not scenario_path.is_absolute():
        scenario_path = Path(__file__).parent.parent / scenario_path
    base = load_scenario(scenario_path)
    if family.get('overrides'):
        base = base.with_values(family['overrides'])
    axes = [(axis['axis'], axis['values']) for axis in family.get('axes', [])]
    return sweep(base, axes, config, out_dir=out_dir, workers=workers)
