"""
Report Generation Module
Creates PDF reports of calibration and drift evaluation runs, and cumulative error plots
"""
import io
import logging
import math
import os
from datetime import datetime

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Image as RLImage
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

import config

logger = logging.getLogger(__name__)

METRIC_LABELS = {
    'e_align': 'alignment error e_align',
    'e_rmse': 'joint RMSE e_rmse',
    'e_s_sym': "scale multiplier e'_s",
    'e_r': 'rotation drift e_r (deg)',
    'e_t': 'translation drift e_t',
}


def _fmt(value):
    return 'inf' if math.isinf(value) else f"{value:.6g}"


def _median(dist):
    """Error reached by half of all runs; inf when fewer than half are finite"""
    half = math.ceil(dist.total / 2)
    if not dist.counts.size or dist.counts[-1] < half:
        return math.inf
    return float(dist.thresholds[np.searchsorted(dist.counts, half)])


def _figure_flowable(fig, width=6 * inch):
    buf = io.BytesIO()
    fig.savefig(buf, format='png', dpi=150, bbox_inches='tight')
    plt.close(fig)
    buf.seek(0)
    w, h = fig.get_size_inches()
    return RLImage(buf, width=width, height=width * h / w)


def plot_cumulative(distributions, path=None):
    """Cumulative error curves, one per metric; returns the figure when no path is given"""
    fig, axes = plt.subplots(1, len(distributions), figsize=(4.5 * len(distributions), 3.5), squeeze=False)
    for ax, (metric, dist) in zip(axes[0], distributions.items()):
        if dist.thresholds.size:
            ax.step(dist.thresholds, dist.counts, where='post')
        ax.set_xscale('log' if dist.thresholds.size and dist.thresholds.min() > 0 else 'linear')
        ax.set_ylim(0, max(dist.total, 1))
        ax.set_xlabel(METRIC_LABELS.get(metric, metric))
        ax.set_ylabel('number of runs')
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    if path is None:
        return fig
    fig.savefig(path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    logger.info(f"Cumulative plot written: {path}")
    return path


class ReportGenerator:
    """Generates PDF reports of calibration and evaluation runs"""

    def __init__(self, report_folder=None):
        self.report_folder = report_folder or config.REPORT_FOLDER
        os.makedirs(self.report_folder, exist_ok=True)
        styles = getSampleStyleSheet()
        self.styles = styles
        self.title_style = ParagraphStyle(
            'CustomTitle',
            parent=styles['Heading1'],
            fontSize=22,
            textColor=colors.HexColor('#1a1a1a'),
            spaceAfter=24,
            alignment=TA_CENTER
        )
        self.heading_style = ParagraphStyle(
            'CustomHeading',
            parent=styles['Heading2'],
            fontSize=15,
            textColor=colors.HexColor('#2c3e50'),
            spaceAfter=12,
            spaceBefore=12
        )

    def _path(self, kind, report_path):
        if report_path:
            return report_path
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        return os.path.join(self.report_folder, f"{kind}_report_{timestamp}.{config.REPORT_FORMAT}")

    def _table(self, rows, font_size=10):
        table = Table(rows, colWidths=[2.5 * inch, 3.5 * inch])
        table.setStyle(TableStyle([
            ('BACKGROUND', (0, 0), (0, -1), colors.HexColor('#ecf0f1')),
            ('ALIGN', (0, 0), (-1, -1), 'LEFT'),
            ('FONTNAME', (0, 0), (0, -1), 'Helvetica-Bold'),
            ('FONTSIZE', (0, 0), (-1, -1), font_size),
            ('BOTTOMPADDING', (0, 0), (-1, -1), 6),
            ('GRID', (0, 0), (-1, -1), 0.5, colors.grey)
        ]))
        return table

    def _header(self, title, subject):
        return [
            Paragraph(title, self.title_style),
            self._table([
                ['Report Date:', datetime.now().strftime("%Y-%m-%d %H:%M:%S")],
                ['Subject:', subject],
                ['Toolkit:', f"{config.APP_NAME} v{config.VERSION}"],
            ]),
            Spacer(1, 0.3 * inch),
        ]

    def _build(self, path, elements):
        doc = SimpleDocTemplate(path, pagesize=letter, topMargin=0.75 * inch, bottomMargin=0.75 * inch)
        doc.build(elements)
        logger.info(f"Report generated: {path}")
        return path

    def _energy_figure(self, energies):
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.semilogy(np.arange(len(energies)), np.maximum(energies, 1e-300), marker='o', ms=3)
        ax.set_xlabel('iteration')
        ax.set_ylabel('energy')
        ax.grid(True, alpha=0.3)
        return _figure_flowable(fig)

    def generate_drift_report(self, report, name='', traj=None, gt=None, report_path=None):
        """Loop-closure metrics of one sequence, with a top-down trajectory plot"""
        path = self._path('drift', report_path)
        elements = self._header("LOOP-CLOSURE DRIFT REPORT", name or 'sequence')

        elements.append(Paragraph("DRIFT METRICS", self.heading_style))
        rows = [[METRIC_LABELS.get(k, k), _fmt(v)] for k, v in report.to_dict().items()]
        elements.append(self._table(rows))
        if report.note:
            elements.append(Spacer(1, 0.1 * inch))
            elements.append(Paragraph(f"<b>Note:</b> {report.note}", self.styles['Normal']))

        if traj is not None and report.T_s is not None:
            elements.append(Paragraph("ALIGNED TRAJECTORY", self.heading_style))
            fig, ax = plt.subplots(figsize=(6, 5))
            start = report.T_s.apply(traj.positions)
            ax.plot(start[:, 0], start[:, 1], label='aligned to start segment')
            if report.T_e is not None:
                end = report.T_e.apply(traj.positions)
                ax.plot(end[:, 0], end[:, 1], label='aligned to end segment')
            if gt is not None:
                for tag, marker in (('S', 'o'), ('E', 's')):
                    pts = gt.positions[gt.segments == tag]
                    ax.scatter(pts[:, 0], pts[:, 1], s=6, marker=marker, label=f'ground truth {tag}')
            ax.set_aspect('equal', adjustable='datalim')
            ax.legend(fontsize=7)
            elements.append(_figure_flowable(fig))

        return self._build(path, elements)

    def generate_cumulative_report(self, distributions, source='', report_path=None):
        path = self._path('cumulative', report_path)
        elements = self._header("CUMULATIVE ERROR REPORT", source or 'drift reports')
        elements.append(Paragraph("SUMMARY", self.heading_style))
        rows = []
        for metric, dist in distributions.items():
            median = _median(dist)
            rows.append([METRIC_LABELS.get(metric, metric),
                         f"{dist.counts[-1] if dist.counts.size else 0}/{dist.total} finite, median {_fmt(median)}"])
        elements.append(self._table(rows))
        elements.append(Paragraph("CUMULATIVE DISTRIBUTIONS", self.heading_style))
        elements.append(_figure_flowable(plot_cumulative(distributions), width=6.5 * inch))
        return self._build(path, elements)

    def generate_calibration_report(self, result, kind, truth=None, report_path=None):
        """Response or vignette calibration summary with the estimate and its energy trace"""
        path = self._path(kind, report_path)
        elements = self._header(f"{kind.upper()} CALIBRATION REPORT", kind)

        elements.append(Paragraph("CONVERGENCE", self.heading_style))
        rows = [
            ['Iterations:', str(result.iterations)],
            ['Converged:', 'yes' if result.converged else 'no'],
            ['Final energy:', _fmt(result.energies[-1])],
        ]
        if kind == 'response':
            rows.append(['Unobserved ranges:', ', '.join(f"{lo}-{hi}" for lo, hi in result.unobserved_ranges) or 'none'])
            rows.append(['Monotonicity repaired:', 'yes' if result.monotonicity_repaired else 'no'])
        else:
            rows.append(['Residual graph components:', str(result.n_components)])
        if truth:
            rows.extend([[f"{k.replace('_', ' ').title()}:", _fmt(v)] for k, v in truth.items()])
        elements.append(self._table(rows))
        elements.append(self._energy_figure(result.energies))

        elements.append(Paragraph("ESTIMATE", self.heading_style))
        fig, ax = plt.subplots(figsize=(6, 4))
        if kind == 'response':
            ax.plot(np.arange(256), result.lut.values)
            ax.set_xlabel('pixel value I')
            ax.set_ylabel('U(I)')
            ax.grid(True, alpha=0.3)
        else:
            shown = np.where(result.vignette.valid, result.vignette.values, np.nan)
            im = ax.imshow(shown, cmap='viridis', vmin=0, vmax=1)
            fig.colorbar(im, ax=ax)
        elements.append(_figure_flowable(fig))
        return self._build(path, elements)
