import csv
import io
import json
import logging
import math
from typing import Dict

from flow.ricci import FlowDiagnostics
from metrics.weights import WeightField
from models.manifest import RunManifest

logger = logging.getLogger(__name__)

DIAGNOSTIC_COLUMNS = ['t', 'sup_u', 'min_c_over_r', 'iso_defect', 'psi_ss',
                      'residual_raw', 'residual_rescaled']


class Exporter:
    """实验产物导出器"""

    @staticmethod
    def export_json(data: Dict, output_path: str):
        """
        导出为JSON格式（键排序，输出确定）

        Args:
            data: 可序列化的字典
            output_path: 输出文件路径
        """
        with open(output_path, 'w', encoding='utf-8') as f:
            json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
        logger.info("[导出] 已导出JSON: %s", output_path)

    @staticmethod
    def export_manifest(manifest: RunManifest, output_path: str = 'manifest.json'):
        Exporter.export_json(manifest.to_dict(), output_path)

    @staticmethod
    def render_diagnostics_csv(diagnostics: FlowDiagnostics) -> str:
        """
        把流的诊断时间序列渲染成CSV文本

        浮点数用 repr 写出（17 位有效数字），同样的输入逐字节相同。

        Args:
            diagnostics: FlowDiagnostics

        Returns:
            CSV 文本
        """
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(DIAGNOSTIC_COLUMNS)
        for row in diagnostics.rows():
            writer.writerow([repr(float(v)) for v in row])
        return buffer.getvalue()

    @staticmethod
    def export_diagnostics(diagnostics: FlowDiagnostics, output_path: str = 'diagnostics.csv'):
        """
        导出为CSV格式

        Args:
            diagnostics: FlowDiagnostics
            output_path: 输出文件路径
        """
        with open(output_path, 'w', encoding='utf-8', newline='') as f:
            f.write(Exporter.render_diagnostics_csv(diagnostics))
        logger.info("[导出] 已导出CSV: %s (%d 行)", output_path, len(diagnostics.times))

    @staticmethod
    def save_weight(weight: WeightField, output_path: str):
        """权重快照（原始 φ，从不写 e^{−φ}）"""
        Exporter.export_json(weight.to_dict(), output_path)

    @staticmethod
    def load_weight(input_path: str) -> WeightField:
        with open(input_path, 'r', encoding='utf-8') as f:
            return WeightField.from_dict(json.load(f))

    @staticmethod
    def render_text(manifest: RunManifest) -> str:
        """
        Markdown 表格形式的摘要，失败项在前

        Args:
            manifest: 已 finalize 的 manifest

        Returns:
            文本
        """
        checks = manifest.ordered_checks()
        failed = sum(1 for c in checks if not c.passed)
        lines = [
            f"# {manifest.scenario}\n",
            f"**开始时间**: {manifest.started_at}  ",
            f"**结束时间**: {manifest.finished_at}  ",
            f"**结果**: {'PASS' if manifest.passed else 'FAIL'}"
            f"（{len(checks) - failed}/{len(checks)} 通过）\n",
            "| # | 检查 | 结果 | 测量值 | 容差 | 说明 |",
            "|---|------|------|--------|------|------|",
        ]
        for i, check in enumerate(checks, 1):
            status = "PASS" if check.passed else "FAIL"
            lines.append(f"| {i} | {check.name} | {status} | {_number(check.measured)} | "
                         f"{_number(check.tolerance)} | {check.detail} |")
        return '\n'.join(lines) + '\n'

    @staticmethod
    def emit_report(manifest: RunManifest, fmt: str = 'text') -> str:
        """text 或 json；只依赖 manifest 的内容"""
        if fmt == 'json':
            return json.dumps(manifest.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + '\n'
        if fmt != 'text':
            raise ValueError(f"未知的报告格式 {fmt!r}")
        return Exporter.render_text(manifest)

    @staticmethod
    def export_all(manifest: RunManifest, manifest_path: str = 'manifest.json',
                   report_path: str = 'report.txt'):
        """
        导出 manifest 与文本报告

        Args:
            manifest: 已 finalize 的 manifest
            manifest_path: JSON文件路径
            report_path: 文本报告路径
        """
        Exporter.export_manifest(manifest, manifest_path)
        with open(report_path, 'w', encoding='utf-8') as f:
            f.write(Exporter.render_text(manifest))
        logger.info("[导出] 已导出报告: %s", report_path)


def _number(value: float) -> str:
    value = float(value)
    if not math.isfinite(value):
        return repr(value)
    return f"{value:.3e}"
