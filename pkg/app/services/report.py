"""运行目录汇总报告

把同一输出目录中的证书、漂移检验、TV 拟合、进入概率对照和假设检验结果
汇总成一份 Markdown 报告，CSV 以相对路径引用。
"""

from pathlib import Path
from typing import Any, Dict, List, Optional

from app.core.exceptions import PreconditionError
from app.core.logging import cli_logger as logger
from app.services.output import MANIFEST_NAME, read_json


def _load(run_dir: Path, name: str) -> Optional[Any]:
    path = run_dir / name
    return read_json(path) if path.exists() else None


def _fmt(value, digits: int = 6) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}g}"
    return str(value)


def _certificate_section(cert: Dict[str, Any]) -> List[str]:
    lines = [
        "## 一致遍历性证书",
        "",
        f"- 模型: `{cert.get('model_name')}`（校验和 `{cert.get('model_checksum', '')[:16]}…`）",
        f"- 结论: **{cert.get('verdict')}**",
        f"- Λ 估计: {_fmt(cert.get('lambda_est'), 10)}，相对误差估计 {_fmt(cert.get('rel_err_est'))}",
        f"- 截断半径 Rmax: {_fmt(cert.get('Rmax'))}，加倍次数 {cert.get('doublings')}，节点数 {cert.get('n_nodes')}",
    ]
    for key, label in (("tail_inner", "内层尾部"), ("tail_outer", "外层尾部")):
        tail = cert.get(key)
        if tail:
            lines.append(
                f"- {label}: {tail.get('kind')}，斜率 {_fmt(tail.get('slope'))}，速率 {_fmt(tail.get('rate'))}，"
                f"{'发散' if tail.get('divergent') else '收敛'}"
            )
    if cert.get("verdict") == "FINITE":
        lines.append(
            f"- Lyapunov 常数: c1 = {_fmt(cert.get('c1'), 10)}，c2 = {_fmt(cert.get('c2'), 10)}"
            f"（{cert.get('c2_samples')} 个采样点），petite 集半径 r1 = {_fmt(cert.get('r1'))}，"
            f"偏移量 {_fmt(cert.get('lyapunov_offset'))}"
        )
    lines.extend(["", "剖面数据: [profile.csv](profile.csv)", ""])
    return lines


def _drift_section(drift: Dict[str, Any]) -> List[str]:
    return [
        "## 漂移不等式检验",
        "",
        f"- 结果: **{'PASS' if drift.get('pass') else 'FAIL'}**",
        f"- 最大违背量: {_fmt(drift.get('max_violation'))}，见证点 {drift.get('witness_x')}",
        f"- 采样点数: {drift.get('n_samples')}（其中 C 内 {drift.get('n_inside')}），检验半径 {_fmt(drift.get('r_test'))}",
        f"- 外部 𝒢L 最大值: {_fmt(drift.get('max_exterior_generator'))}（应不超过 -0.5）",
        "",
        "Lyapunov 表: [lyapunov.csv](lyapunov.csv)",
        "",
    ]


def _fit_lines(fit: Dict[str, Any]) -> List[str]:
    if fit.get("refused"):
        return [f"- 指数拟合被拒绝: {fit.get('reason')}"]
    return [
        f"- 拟合: sup_tv ≈ {_fmt(fit.get('B_hat'))}·exp(-{_fmt(fit.get('beta_hat'))}·t)，"
        f"log 残差 {_fmt(fit.get('residual'))}，使用 {fit.get('n_points')} 个点"
        + ("，**未见衰减**" if fit.get("non_decaying") else "")
    ]


def _tv_section(title: str, fit: Dict[str, Any], curve_csv: str, sup_csv: str) -> List[str]:
    lines = [f"## {title}", ""]
    lines.extend(_fit_lines(fit))
    lines.extend([
        "- sup_tv 只是有限起点网格上的代理，不是对所有起点的上确界",
        "",
        f"逐起点曲线: [{curve_csv}]({curve_csv})，上确界曲线: [{sup_csv}]({sup_csv})",
        "",
    ])
    return lines


def _hitting_section(rows: List[Dict[str, Any]]) -> List[str]:
    lines = [
        "## 进入概率与逃逸界",
        "",
        "| 起点 | 进入概率 | 95% 置信区间 | 逃逸界 | 一致 |",
        "|---|---|---|---|---|",
    ]
    for row in rows:
        lines.append(
            f"| {row.get('x')} | {_fmt(row.get('p_hat'), 4)} | [{_fmt(row.get('ci_low'), 4)}, "
            f"{_fmt(row.get('ci_high'), 4)}] | {_fmt(row.get('escape_bound'), 4)} | "
            f"{'是' if row.get('consistent') else '否'} |"
        )
    lines.append("")
    return lines


def _assumption_section(reports: List[Dict[str, Any]]) -> List[str]:
    lines = ["## 假设检验（只能证伪）", "", "| 假设 | 状态 | 样本数 | 说明 |", "|---|---|---|---|"]
    for rep in reports:
        lines.append(
            f"| {rep.get('assumption')} | {rep.get('status')} | {rep.get('n_samples')} | {rep.get('message') or ''} |"
        )
    lines.append("")
    return lines


def build_report(run_dir) -> str:
    """汇总运行目录中已有的结果，缺少的部分跳过"""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise PreconditionError(f"运行目录不存在: {run_dir}", "run_dir")

    sections: List[str] = ["# 一致遍历性运行报告", ""]
    manifest = _load(run_dir, MANIFEST_NAME)
    if manifest:
        sections.extend([
            f"工具 {manifest.get('tool')} {manifest.get('version')}，命令: {', '.join(manifest.get('commands', []))}",
            "",
        ])

    found = 0
    cert = _load(run_dir, "certificate.json")
    if cert:
        sections.extend(_certificate_section(cert))
        found += 1
    drift = _load(run_dir, "drift_check.json")
    if drift:
        sections.extend(_drift_section(drift))
        found += 1
    tv_fit = _load(run_dir, "tv_fit.json")
    if tv_fit:
        sections.extend(_tv_section("全变差衰减", tv_fit, "tv_curve.csv", "sup_tv.csv"))
        found += 1
    sub_fit = _load(run_dir, "subordinate_fit.json")
    if sub_fit:
        sections.extend(_tv_section("从属过程全变差衰减", sub_fit, "subordinate_tv.csv", "subordinate_sup.csv"))
        found += 1
    hitting = _load(run_dir, "hitting.json")
    if hitting:
        sections.extend(_hitting_section(hitting))
        found += 1
    assumptions = _load(run_dir, "assumptions.json")
    if assumptions:
        sections.extend(_assumption_section(assumptions))
        found += 1

    if not found:
        raise PreconditionError(f"运行目录 {run_dir} 中没有可汇总的结果", "run_dir")
    logger.info(f"报告包含 {found} 个部分")
    return "\n".join(sections)
