"""遍历性证书工具命令行入口

子命令:
    certify            计算 Λ 并给出 FINITE / INFINITE / INCONCLUSIVE 结论
    lyapunov           由证书构造 Lyapunov 函数并抽样检验漂移不等式
    simulate           Euler–Maruyama 路径系综统计
    tv                 起点网格上的一致 TV 衰减曲线与指数拟合
    subordinate        从属过程 X(S(t)) 的 TV 曲线
    hitting            进入概率的 Monte Carlo 估计与逃逸概率界对照
    check-assumptions  (A1)-(A5) 的抽样证伪检验
    report             汇总运行目录

退出码: 0 成功 / FINITE / PASS，2 INFINITE，3 INCONCLUSIVE，4 假设被证伪，
5 漂移检验未通过，1 错误。结构化结果只写入 --out 目录，stdout 只给人看。
"""

import argparse
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import (
    ConfigurationException,
    FitRefused,
    PreconditionError,
    ValidationException,
    handle_exceptions,
    validate_dimension,
)
from app.core.logging import cli_logger as logger
from app.core.logging import setup_logging
from app.core.streams import resolve_workers
from app.schemas.assumption import FALSIFICATION_BANNER
from app.schemas.certificate import Certificate, Verdict
from app.schemas.radial import SphereOptConfig
from app.schemas.simulation import SimConfig, SubordinatorSpec
from app.services.catalog import catalog, catalog_names
from app.services.certify import certify_model, lyapunov_constants
from app.services.checks import check_all
from app.services.coeff_dsl import ModelSpec, load_model
from app.services.lyapunov import build_lyapunov, drift_check, escape_bound
from app.services.output import RunRecorder, read_json
from app.services.radial import build_profile, extend_profile
from app.services.report import build_report
from app.services.simulate import em_ensemble, ensemble_stats, hitting_mc
from app.services.subordinator import subordinate_tv
from app.services.tv import fit_exponential, uniform_tv_curve

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFINITE = 2
EXIT_INCONCLUSIVE = 3
EXIT_VIOLATED = 4
EXIT_DRIFT_FAIL = 5

_VERDICT_EXIT = {
    Verdict.FINITE: EXIT_OK,
    Verdict.INFINITE: EXIT_INFINITE,
    Verdict.INCONCLUSIVE: EXIT_INCONCLUSIVE,
}


# ---------------------------------------------------------------------------
# 参数解析辅助
# ---------------------------------------------------------------------------

def parse_params(items: Optional[Sequence[str]]) -> Dict[str, float]:
    """--param k=v 列表转为参数字典"""
    params: Dict[str, float] = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ValidationException(f"参数格式应为 k=v: {item!r}", "param")
        try:
            params[key.strip()] = float(value)
        except ValueError:
            raise ValidationException(f"参数 {key} 的值不是数值: {value!r}", "param")
    return params


def parse_point(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationException(f"无法解析坐标: {text!r}", "point")


def parse_points(text: str) -> List[List[float]]:
    """"a,b;c,d" 形式的点列表"""
    return [parse_point(chunk) for chunk in text.split(";") if chunk.strip()]


def parse_times(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationException(f"无法解析时刻列表: {text!r}", "checkpoints")


def load_run_config(path: Optional[str], command: str) -> Dict[str, Any]:
    """读取 --config 运行文件；顶层键对所有命令生效，同名子对象只对该命令生效"""
    if not path:
        return {}
    try:
        raw = read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationException(f"无法读取运行配置 {path}: {exc}", "config")
    if not isinstance(raw, dict):
        raise ConfigurationException("运行配置必须是 JSON 对象", "config")
    merged = {k: v for k, v in raw.items() if not isinstance(v, dict) or k == "param"}
    scoped = raw.get(command, {})
    if not isinstance(scoped, dict):
        raise ConfigurationException(f"运行配置中的 {command} 必须是 JSON 对象", command)
    merged.update(scoped)
    return merged


def merge_options(args: argparse.Namespace, file_config: Dict[str, Any]) -> Dict[str, Any]:
    """命令行参数 > --config 文件；未给出的项保持 None，由 Settings 补默认值"""
    options = dict(file_config)
    for key, value in vars(args).items():
        if key in ("func", "command", "config"):
            continue
        if value is not None:
            options[key] = value
    file_params = file_config.get("param") or {}
    if isinstance(file_params, dict):
        params = {k: float(v) for k, v in file_params.items()}
    else:
        params = parse_params(file_params)
    params.update(parse_params(args.param) if getattr(args, "param", None) else {})
    options["param"] = params
    return options


def resolve_model(options: Dict[str, Any]) -> ModelSpec:
    model_path = options.get("model")
    name = options.get("catalog")
    if bool(model_path) == bool(name):
        raise ValidationException("必须且只能指定 --model 或 --catalog 之一", "model")
    if name:
        return catalog(name, options.get("param"))
    if options.get("param"):
        raise ValidationException("--param 只能用于目录模型", "param")
    try:
        return load_model(model_path)
    except OSError as exc:
        raise ValidationException(f"无法读取模型文件 {model_path}: {exc}", "model")
    except ValidationError as exc:
        raise ValidationException(f"模型文件格式错误: {exc.errors()[0]['msg']}", "model")


def _seed(options: Dict[str, Any]) -> int:
    return int(options["seed"]) if options.get("seed") is not None else settings.SEED


def _e1(m: ModelSpec) -> np.ndarray:
    e = np.zeros(m.d)
    e[0] = 1.0
    return e


def default_starts(m: ModelSpec) -> List[List[float]]:
    """x0 ± {1, 3, 6}·r0·e1"""
    e = _e1(m)
    return [list(m.center + s * k * m.r0 * e) for k in (1.0, 3.0, 6.0) for s in (1.0, -1.0)]


def default_exterior_starts(m: ModelSpec) -> List[List[float]]:
    e = _e1(m)
    return [list(m.center + k * m.r0 * e) for k in (2.0, 3.0, 6.0)]


def resolve_points(m: ModelSpec, text: Optional[str], default: List[List[float]], field: str) -> List[List[float]]:
    points = parse_points(text) if text else default
    if not points:
        raise ValidationException(f"{field} 不能为空", field)
    return [validate_dimension(p, m.d, field) for p in points]


def sim_config(options: Dict[str, Any]) -> SimConfig:
    T = float(options.get("t") or 4.0)
    if options.get("checkpoints"):
        checkpoints = parse_times(options["checkpoints"]) if isinstance(options["checkpoints"], str) \
            else [float(v) for v in options["checkpoints"]]
    else:
        checkpoints = [T * k / 8.0 for k in range(1, 9)]
    try:
        return SimConfig(
            dt=float(options.get("dt") or 1e-3),
            T=T,
            checkpoints=checkpoints,
            n_paths=int(options.get("paths") or 10000),
            seed=_seed(options),
        )
    except ValidationError as exc:
        raise ValidationException(f"模拟配置无效: {exc.errors()[0]['msg']}", "simulation")


def _recorder(options: Dict[str, Any], command: str, m: ModelSpec) -> RunRecorder:
    out = options.get("out") or settings.OUTPUT_DIR
    rec = RunRecorder(out, command, settings.VERSION)
    rec.manifest.model_name = m.name
    rec.manifest.model_checksum = m.checksum()
    rec.manifest.seeds[command] = _seed(options)
    return rec


def _echo(options: Dict[str, Any], **extra) -> Dict[str, Any]:
    config = {k: v for k, v in options.items() if v is not None and k != "param"}
    config["param"] = options.get("param", {})
    config.update(extra)
    return config


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

@handle_exceptions
def cmd_certify(options: Dict[str, Any]) -> int:
    """计算证书，退出码 0 / 2 / 3 对应 FINITE / INFINITE / INCONCLUSIVE"""
    m = resolve_model(options)
    rec = _recorder(options, "certify", m)
    workers = resolve_workers(options.get("workers"))
    cfg = SphereOptConfig(seed=_seed(options))
    with rec.stage("certificate"):
        cert, p = certify_model(
            m,
            tol=options.get("tol"),
            max_doublings=options.get("rmax_doublings"),
            nodes=options.get("nodes"),
            cfg=cfg,
            workers=workers,
            r1=options.get("r1"),
        )
    rec.json("certificate.json", cert)
    rec.csv("profile.csv", p.to_frame())
    code = _VERDICT_EXIT[cert.verdict]
    rec.finish(code, _echo(options, **cert.config))

    print(f"模型 {m.name}: {cert.verdict.value}")
    if cert.lambda_est is not None:
        print(f"  Λ ≈ {cert.lambda_est:.10g}（相对变化 {cert.rel_err_est}）")
    if cert.verdict == Verdict.FINITE:
        print(f"  c1 = {cert.c1:.10g}, c2 = {cert.c2:.10g}, r1 = {cert.r1:.6g}")
    print(f"  Rmax = {cert.Rmax:.6g}，加倍 {cert.doublings} 次，输出目录 {rec.out_dir}")
    return code


def rebuild_profile(m: ModelSpec, cert: Certificate, workers: Optional[int] = None):
    """按证书记录的配置重建最终剖面"""
    config = cert.config or {}
    nodes = int(config.get("nodes", settings.RADIAL_NODES))
    factor = float(config.get("rmax_initial_factor", settings.RMAX_INITIAL_FACTOR))
    cfg = SphereOptConfig(**config["sphere"]) if "sphere" in config else SphereOptConfig()
    p = build_profile(m, factor * m.r0, nodes, cfg, workers=workers)
    p = extend_profile(p, m, cert.Rmax * (1 - 1e-12), cfg, workers)
    if cert.profile_checksum and p.checksum() != cert.profile_checksum:
        logger.warning("重建剖面的校验和与证书不一致")
    return p, cfg


@handle_exceptions
def cmd_lyapunov(options: Dict[str, Any]) -> int:
    """构造 Lyapunov 函数并检验漂移不等式，PASS 返回 0，FAIL 返回 5"""
    m = resolve_model(options)
    rec = _recorder(options, "lyapunov", m)
    cert_path = Path(options.get("cert") or rec.path("certificate.json"))
    if not cert_path.exists():
        raise PreconditionError(f"证书文件不存在: {cert_path}，请先运行 certify", "cert")
    cert = Certificate.model_validate(read_json(cert_path))
    if cert.model_checksum != m.checksum():
        raise PreconditionError("证书与模型校验和不一致", "cert",
                                {"certificate": cert.model_checksum, "model": m.checksum()})
    workers = resolve_workers(options.get("workers"))

    with rec.stage("profile"):
        p, cfg = rebuild_profile(m, cert, workers)
    r1 = options.get("r1") or cert.r1
    with rec.stage("lyapunov"):
        L = build_lyapunov(p, cert, r1)
        if cert.c1 is None or cert.c2 is None or r1 != cert.r1 or cert.lyapunov_offset != L.offset:
            c1, c2, _ = lyapunov_constants(cert, m, L, L.r1, options.get("c2_samples"), cfg.seed)
        else:
            c1, c2 = cert.c1, cert.c2
    with rec.stage("drift_check"):
        report = drift_check(m, L, c1, c2, L.r1, options.get("n"), options.get("r_test"), _seed(options))

    rec.csv("lyapunov.csv", L.to_frame())
    rec.json("lyapunov.json", {
        "r0": L.r0, "r1": L.r1, "Rmax": L.Rmax, "offset": L.offset,
        "blend": {"a0": L.blend[0], "a4": L.blend[1], "a5": L.blend[2]},
        "lambda_est": L.lambda_est, "c1": c1, "c2": c2,
        "profile_checksum": p.checksum(),
    })
    rec.json("drift_check.json", report)
    code = EXIT_OK if report.passed else EXIT_DRIFT_FAIL
    rec.finish(code, _echo(options, r1=L.r1, c1=c1, c2=c2))

    print(f"漂移不等式 𝒢L ≤ -c1 L + c2 𝟙_C: {'PASS' if report.passed else 'FAIL'}")
    print(f"  c1 = {c1:.10g}, c2 = {c2:.10g}, r1 = {L.r1:.6g}")
    print(f"  最大违背 {report.max_violation:.6g}，见证点 {report.witness_x}，样本 {report.n_samples}")
    return code


@handle_exceptions
def cmd_simulate(options: Dict[str, Any]) -> int:
    """各起点的系综均值、方差和标准误差"""
    m = resolve_model(options)
    rec = _recorder(options, "simulate", m)
    cfg = sim_config(options)
    starts = resolve_points(m, options.get("starts"), default_starts(m), "starts")
    workers = resolve_workers(options.get("workers"))
    frames = []
    dropped = 0
    with rec.stage("simulate"):
        for i, x in enumerate(starts):
            ens = em_ensemble(m, x, cfg, stream_id=i + 1, workers=workers)
            df = ensemble_stats(ens)
            df.insert(0, "start_index", i)
            frames.append(df)
            dropped += ens.n_dropped
    rec.csv("ensemble_stats.csv", pd.concat(frames, ignore_index=True))
    rec.finish(EXIT_OK, _echo(options, simulation=cfg.model_dump(), starts=starts))
    print(f"模型 {m.name}: {len(starts)} 个起点 × {cfg.n_paths} 条路径，T = {cfg.T:g}，丢弃 {dropped} 条")
    return EXIT_OK


def _fit_payload(curve) -> Dict[str, Any]:
    try:
        fit = fit_exponential(curve)
        curve.fit = fit
        payload: Dict[str, Any] = {"refused": False, **fit.model_dump()}
    except FitRefused as exc:
        payload = {"refused": True, "reason": exc.message, "n_usable": exc.details.get("n_usable")}
    payload["monotone_excess"] = curve.monotone_excess()
    payload["metadata"] = curve.metadata
    return payload


def _print_curve(title: str, curve, payload: Dict[str, Any]):
    print(title)
    for t, v, f in zip(curve.times, curve.sup_tv, curve.noise_floor):
        print(f"  t = {t:<8.4g} sup_tv = {v:.4f}（噪声下限 {f:.4f}）")
    if payload["refused"]:
        print(f"  指数拟合被拒绝: {payload['reason']}")
    else:
        print(f"  拟合 B̂ = {payload['B_hat']:.4g}, β̂ = {payload['beta_hat']:.4g}")


@handle_exceptions
def cmd_tv(options: Dict[str, Any]) -> int:
    """一致 TV 曲线（起点网格上的代理）和指数拟合"""
    m = resolve_model(options)
    rec = _recorder(options, "tv", m)
    cfg = sim_config(options)
    starts = resolve_points(m, options.get("starts"), default_starts(m), "starts")
    x_ref = resolve_points(m, options.get("ref"), [list(m.center)], "ref")[0]
    with rec.stage("tv"):
        curve = uniform_tv_curve(m, starts, x_ref, cfg, options.get("bins"), resolve_workers(options.get("workers")))
    payload = _fit_payload(curve)
    per_start, sup = curve.to_frames()
    rec.csv("tv_curve.csv", per_start)
    rec.csv("sup_tv.csv", sup)
    rec.json("tv_fit.json", payload)
    rec.finish(EXIT_OK, _echo(options, simulation=cfg.model_dump(), starts=starts, ref=x_ref))
    _print_curve(f"模型 {m.name} 的 TV 衰减（有限起点网格代理）", curve, payload)
    return EXIT_OK


@handle_exceptions
def cmd_subordinate(options: Dict[str, Any]) -> int:
    """从属过程 X(S(t)) 的 TV 曲线"""
    m = resolve_model(options)
    rec = _recorder(options, "subordinate", m)
    cfg = sim_config(options)
    try:
        spec = SubordinatorSpec.parse(options.get("subordinator") or "stable:0.5")
    except (ValidationError, ValueError, IndexError) as exc:
        raise ValidationException(f"从属子描述无效: {exc}", "subordinator")
    starts = resolve_points(m, options.get("starts"), default_starts(m), "starts")
    x_ref = resolve_points(m, options.get("ref"), [list(m.center)], "ref")[0]
    with rec.stage("subordinate"):
        curve = subordinate_tv(m, spec, starts, x_ref, cfg, options.get("bins"),
                               resolve_workers(options.get("workers")))
    payload = _fit_payload(curve)
    per_start, sup = curve.to_frames()
    rec.csv("subordinate_tv.csv", per_start)
    rec.csv("subordinate_sup.csv", sup)
    rec.json("subordinate_fit.json", payload)
    rec.finish(EXIT_OK, _echo(options, simulation=cfg.model_dump(), subordinator=spec.model_dump(),
                              starts=starts, ref=x_ref))
    _print_curve(f"模型 {m.name} 经 {spec.kind} 从属后的 TV 衰减", curve, payload)
    return EXIT_OK


@handle_exceptions
def cmd_hitting(options: Dict[str, Any]) -> int:
    """进入 B_{r0}(x0) 的 Monte Carlo 概率与逃逸概率界并列"""
    m = resolve_model(options)
    rec = _recorder(options, "hitting", m)
    cfg = sim_config(options)
    starts = resolve_points(m, options.get("starts"), default_exterior_starts(m), "starts")
    workers = resolve_workers(options.get("workers"))
    rows = []
    with rec.stage("hitting"):
        for i, x in enumerate(starts):
            est = hitting_mc(m, x, cfg.T, cfg, stream_id=i + 1, workers=workers)
            est.escape_bound = escape_bound(m, x, options.get("eps"), options.get("rcap"))
            row = est.model_dump()
            # 到 T 为止未进入的概率不小于永不进入的概率，T 足够长时两者应可比
            row["consistent"] = bool(1.0 - est.ci_high <= est.escape_bound + 1e-12)
            rows.append(row)
    rec.json("hitting.json", rows)
    rec.finish(EXIT_OK, _echo(options, simulation=cfg.model_dump(), starts=starts))
    print(f"模型 {m.name}: 到 T = {cfg.T:g} 为止进入 B_r0(x0) 的概率")
    for row in rows:
        print(f"  x = {row['x']}: p̂ = {row['p_hat']:.4f} [{row['ci_low']:.4f}, {row['ci_high']:.4f}]，"
              f"逃逸界 {row['escape_bound']:.4g}")
    return EXIT_OK


@handle_exceptions
def cmd_check_assumptions(options: Dict[str, Any]) -> int:
    """(A1)-(A5) 抽样证伪；任一被证伪返回 4"""
    m = resolve_model(options)
    rec = _recorder(options, "check-assumptions", m)
    with rec.stage("checks"):
        reports = check_all(m, options.get("n"), _seed(options), resolve_workers(options.get("workers")))
    rec.json("assumptions.json", reports)
    violated = [r for r in reports if r.violated]
    code = EXIT_VIOLATED if violated else EXIT_OK
    rec.finish(code, _echo(options, n=options.get("n") or settings.CHECK_SAMPLES))
    print(FALSIFICATION_BANNER)
    for r in reports:
        print(f"  {r.assumption}: {r.status.value}" + (f"（{r.message}）" if r.message else ""))
    return code


@handle_exceptions
def cmd_report(options: Dict[str, Any]) -> int:
    """汇总运行目录，写出 report.md"""
    out = Path(options.get("out") or settings.OUTPUT_DIR)
    text = build_report(out)
    rec = RunRecorder(out, "report", settings.VERSION)
    rec.text("report.md", text)
    rec.finish(EXIT_OK, {"out": str(out)})
    print(f"报告已写入 {rec.path('report.md')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# 参数定义
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser, with_model: bool = True):
    if with_model:
        parser.add_argument("--model", help="模型 JSON 文件")
        parser.add_argument("--catalog", choices=catalog_names(), help="内置目录模型名称")
        parser.add_argument("--param", action="append", metavar="K=V", help="目录模型参数，可重复")
        parser.add_argument("--seed", type=int, help=f"主随机种子（默认：{settings.SEED}）")
        parser.add_argument("--workers", type=int, help="并行线程数，0 表示全部 CPU 核")
    parser.add_argument("--config", help="JSON 运行配置文件，命令行参数优先")
    parser.add_argument("--out", help=f"输出目录（默认：{settings.OUTPUT_DIR}）")


def _add_simulation(parser: argparse.ArgumentParser, with_starts: bool = True):
    parser.add_argument("--dt", type=float, help="Euler–Maruyama 步长（默认：1e-3）")
    parser.add_argument("--t", type=float, help="时间范围 T（默认：4）")
    parser.add_argument("--paths", type=int, help="每个起点的路径数（默认：10000）")
    parser.add_argument("--checkpoints", help="记录时刻，逗号分隔，如 0.5,1,2,4（默认：T/8 的整数倍）")
    if with_starts:
        parser.add_argument("--starts", help="起点网格，如 \"1,0;3,0\"（默认：x0 ± {1,3,6}·r0·e1）")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergocert",
        description="Itô 扩散一致遍历性证书与模拟工具",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例:
  %(prog)s certify --catalog polynomial_drift --param K=1 --param kappa=2 --out runs/ex1
  %(prog)s lyapunov --catalog polynomial_drift --param K=1 --param kappa=2 --out runs/ex1
  %(prog)s tv --catalog polynomial_drift --t 4 --paths 20000 --out runs/ex1
  %(prog)s subordinate --catalog polynomial_drift --subordinator stable:0.5 --out runs/ex1
  %(prog)s check-assumptions --model model.json --out runs/m
  %(prog)s report --out runs/ex1
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="命令")

    p = sub.add_parser("certify", help="计算 Λ 与一致遍历性结论")
    _add_common(p)
    p.add_argument("--tol", type=float, help=f"Λ 相对容差（默认：{settings.CERT_TOL}）")
    p.add_argument("--rmax-doublings", type=int, help=f"最多加倍次数（默认：{settings.RMAX_DOUBLINGS}）")
    p.add_argument("--nodes", type=int, help=f"初始区间的网格节点数（默认：{settings.RADIAL_NODES}）")
    p.add_argument("--r1", type=float, help=f"小集半径（默认：{settings.R1_FACTOR}·r0）")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("lyapunov", help="构造 Lyapunov 函数并检验漂移不等式")
    _add_common(p)
    p.add_argument("--cert", help="证书文件（默认：<out>/certificate.json）")
    p.add_argument("--r1", type=float, help="小集半径（默认：证书中的 r1）")
    p.add_argument("--n", type=int, help=f"漂移检验采样点数（默认：{settings.DRIFT_CHECK_SAMPLES}）")
    p.add_argument("--r-test", type=float, help="漂移检验最大半径")
    p.add_argument("--c2-samples", type=int, help=f"重新估计 c2 的采样点数（默认：{settings.C2_SAMPLES}）")
    p.set_defaults(func=cmd_lyapunov)

    p = sub.add_parser("simulate", help="Euler–Maruyama 系综统计")
    _add_common(p)
    _add_simulation(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tv", help="一致 TV 衰减曲线")
    _add_common(p)
    _add_simulation(p)
    p.add_argument("--ref", help="参考起点（默认：x0）")
    p.add_argument("--bins", type=int, help="每维直方图箱数（默认：Freedman–Diaconis）")
    p.set_defaults(func=cmd_tv)

    p = sub.add_parser("subordinate", help="从属过程的 TV 衰减曲线")
    _add_common(p)
    _add_simulation(p)
    p.add_argument("--ref", help="参考起点（默认：x0）")
    p.add_argument("--bins", type=int, help="每维直方图箱数（默认：Freedman–Diaconis）")
    p.add_argument("--subordinator", help="stable:α / compound_poisson:λ,m / drift_compound:θ,λ,m（默认：stable:0.5）")
    p.set_defaults(func=cmd_subordinate)

    p = sub.add_parser("hitting", help="进入概率与逃逸概率界")
    _add_common(p)
    _add_simulation(p)
    p.add_argument("--eps", type=float, help=f"逃逸界的 ε（默认：{settings.ESCAPE_EPS_FRACTION}·r0）")
    p.add_argument("--rcap", type=float, help="逃逸界的积分上限")
    p.set_defaults(func=cmd_hitting)

    p = sub.add_parser("check-assumptions", help="(A1)-(A5) 抽样证伪")
    _add_common(p)
    p.add_argument("--n", type=int, help=f"每个检验的采样点数（默认：{settings.CHECK_SAMPLES}）")
    p.set_defaults(func=cmd_check_assumptions)

    p = sub.add_parser("report", help="汇总运行目录")
    _add_common(p, with_model=False)
    p.set_defaults(func=cmd_report)
    return parser


@handle_exceptions
def dispatch(args: argparse.Namespace) -> int:
    """合并 --config 与命令行参数后执行子命令"""
    options = merge_options(args, load_run_config(args.config, args.command))
    logger.info(f"执行命令 {args.command}")
    return args.func(options)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """命令行主函数，返回退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging()
    try:
        return dispatch(args)
    except KeyboardInterrupt:
        logger.info("用户中断")
        return EXIT_ERROR
