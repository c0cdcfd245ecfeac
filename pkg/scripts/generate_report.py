#!/usr/bin/env python3
"""
Evaluation Report Generator

Renders one or more EvalReport JSON files as an aligned text table, a
Markdown document and a styled HTML page. With several reports the first
one is the baseline and every other run gets a per-structure MRR delta row
(the usual "model vs. model + TEMP" comparison). Loss curves written by
training can be charted alongside.
"""

import argparse
import sys
from pathlib import Path

import markdown
import matplotlib
import pandas as pd

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

sys.path.append(str(Path(__file__).parent.parent))
from tools.temp_cqa.errors import ConfigurationError  # noqa: E402
from tools.temp_cqa.evaluate import METRICS, EvalReport  # noqa: E402
from tools.temp_cqa.querydag import STRUCTURES  # noqa: E402

HTML_STYLE = """
    body { font-family: Arial, sans-serif; max-width: 1200px; margin: 0 auto; padding: 20px; line-height: 1.6; }
    h1 { color: #2c3e50; border-bottom: 3px solid #3498db; padding-bottom: 10px; }
    h2 { color: #34495e; border-bottom: 2px solid #ecf0f1; padding-bottom: 5px; }
    table { border-collapse: collapse; width: 100%; margin: 20px 0; }
    th, td { border: 1px solid #ddd; padding: 6px 10px; text-align: right; }
    th { background-color: #f2f2f2; }
"""


def markdown_table(frame):
    """Pipe table with the index as first column."""
    header = [''] + [str(c) for c in frame.columns]
    lines = ['| ' + ' | '.join(header) + ' |', '|' + '---|' * len(header)]
    for index, row in frame.iterrows():
        cells = [str(index)] + ['' if pd.isna(v) else f"{v:g}" for v in row]
        lines.append('| ' + ' | '.join(cells) + ' |')
    return '\n'.join(lines)


class ReportGenerator:
    """Turns EvalReports (and optional loss curves) into human-readable reports."""

    def __init__(self, report_paths, output_dir="reports", labels=None):
        self.report_paths = [Path(p) for p in report_paths]
        self.output_dir = Path(output_dir)
        self.labels = list(labels) if labels else [p.stem for p in self.report_paths]
        if len(self.labels) != len(self.report_paths):
            raise ConfigurationError("need exactly one label per report")
        self.reports = [EvalReport.load(p) for p in self.report_paths]

    def comparison_table(self, metric='mrr'):
        """Rows per run, columns per structure and average; deltas against the first run."""
        rows = {}
        for label, report in zip(self.labels, self.reports):
            row = {s: report.per_structure[s][metric] for s in STRUCTURES if s in report.per_structure}
            for group, values in report.averages.items():
                row[f"avg_{group}"] = values[metric]
            rows[label] = row
        frame = pd.DataFrame.from_dict(rows, orient='index') * 100

        baseline = frame.iloc[0]
        for label in self.labels[1:]:
            frame.loc[f"delta {label}"] = frame.loc[label] - baseline
        return frame.round(1)

    def text(self):
        sections = [report.text_table() for report in self.reports]
        if len(self.reports) > 1:
            sections.append("MRR comparison (baseline: %s)\n%s"
                            % (self.labels[0], self.comparison_table().to_string()))
        return '\n\n'.join(sections) + '\n'

    def markdown(self, loss_chart=None):
        lines = ["# Complex Query Answering Evaluation", ""]
        for label, report in zip(self.labels, self.reports):
            lines += [f"## {label}", "",
                      f"Regime: **{report.regime}**, split: **{report.split}**", ""]
            frame = report.table().loc[list(METRICS)] * 100
            lines += [markdown_table(frame.round(1)), ""]
            model = report.config.get('model', {})
            if model:
                settings = ', '.join(f"{key}={model[key]}" for key in sorted(model))
                lines += [f"Model: `{settings}`", ""]
        if len(self.reports) > 1:
            lines += ["## MRR comparison", "", markdown_table(self.comparison_table()), ""]
        if loss_chart is not None:
            lines += ["## Training loss", "", f"![loss curve]({loss_chart.name})", ""]
        return '\n'.join(lines)

    def html(self, markdown_content):
        body = markdown.markdown(markdown_content, extensions=['tables', 'fenced_code'])
        return (f"<!DOCTYPE html>\n<html>\n<head>\n<title>Evaluation Report</title>\n"
                f"<style>{HTML_STYLE}</style>\n</head>\n<body>\n{body}\n</body>\n</html>\n")

    def loss_chart(self, curve_paths, filename="loss_curve.png"):
        plt.figure(figsize=(10, 6))
        for path in curve_paths:
            curve = pd.read_csv(path)
            smoothed = curve['loss'].rolling(window=max(1, len(curve) // 50), min_periods=1).mean()
            plt.plot(curve['step'], smoothed, label=Path(path).parent.name)
        plt.xlabel('Step')
        plt.ylabel('Margin loss')
        plt.title('Training loss')
        plt.legend()
        plt.tight_layout()
        self.output_dir.mkdir(parents=True, exist_ok=True)
        chart = self.output_dir / filename
        plt.savefig(chart, dpi=150, bbox_inches='tight')
        plt.close()
        return chart

    def generate_all_formats(self, loss_curves=(), formats=('text', 'markdown', 'html')):
        self.output_dir.mkdir(parents=True, exist_ok=True)
        chart = self.loss_chart(loss_curves) if loss_curves else None
        written = {}
        if 'text' in formats:
            written['text'] = self.output_dir / "report.txt"
            written['text'].write_text(self.text(), encoding='utf-8')
        content = self.markdown(chart)
        if 'markdown' in formats:
            written['markdown'] = self.output_dir / "report.md"
            written['markdown'].write_text(content, encoding='utf-8')
        if 'html' in formats:
            written['html'] = self.output_dir / "report.html"
            written['html'].write_text(self.html(content), encoding='utf-8')
        if chart is not None:
            written['chart'] = chart
        return written


def main(argv=None):
    parser = argparse.ArgumentParser(description='Render evaluation reports as tables, Markdown and HTML')
    parser.add_argument('reports', nargs='+', help='EvalReport JSON files (first one is the baseline)')
    parser.add_argument('-o', '--output', default='reports',
                        help='Output directory for rendered reports (default: reports)')
    parser.add_argument('-l', '--labels', nargs='+', help='Run labels, one per report')
    parser.add_argument('--loss-curves', nargs='+', default=[], help='loss_curve.csv files to chart')
    parser.add_argument('-f', '--format', choices=['text', 'markdown', 'html', 'all'], default='all',
                        help='Output format (default: all)')
    args = parser.parse_args(argv)

    generator = ReportGenerator(args.reports, args.output, args.labels)
    formats = ('text', 'markdown', 'html') if args.format == 'all' else (args.format,)
    written = generator.generate_all_formats(args.loss_curves, formats)
    print(generator.text())
    for kind, path in written.items():
        print(f"{kind} saved: {path}")


if __name__ == "__main__":
    main()
