"""
Excel export of Monte-Carlo results using openpyxl.
"""

import logging
from io import BytesIO
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd
from openpyxl import Workbook
from openpyxl.worksheet.worksheet import Worksheet

from slat_bp.colors import HEADER_STYLE, CellIndex, CellStyle, summary_styles
from slat_bp.monte_carlo import MonteCarloResult

logger = logging.getLogger(__name__)


def _write_sheet(
    ws: Worksheet,
    headers: Sequence[str],
    data_rows: List[Dict[str, Any]],
    cell_styles: Optional[Dict[CellIndex, CellStyle]] = None,
) -> None:
    """
    Write a header row and data rows.

    Args:
        ws: Target worksheet
        headers: Column headers in column order
        data_rows: Dictionaries mapping header names to values; NaN becomes an empty cell
        cell_styles: Styles keyed by (row, col), both 1-indexed
    """
    for col_idx, header in enumerate(headers, start=1):
        HEADER_STYLE.apply(ws.cell(row=1, column=col_idx, value=header))

    for row_idx, row_data in enumerate(data_rows, start=2):
        for col_idx, header in enumerate(headers, start=1):
            value = row_data.get(header)
            if isinstance(value, float) and value != value:
                value = None
            cell = ws.cell(row=row_idx, column=col_idx, value=value)
            style = None if cell_styles is None else cell_styles.get((row_idx, col_idx))
            if style is not None:
                style.apply(cell)


def _frame_rows(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    return frame.to_dict(orient='records')


def build_results_workbook(result: MonteCarloResult) -> Workbook:
    """
    Workbook with ``Summary``, ``RMSE`` and ``CDF`` sheets.

    On the summary sheet the best mode of each ranked metric is highlighted, as are
    collapses.
    """
    wb = Workbook()
    summary_ws = wb.active
    summary_ws.title = "Summary"

    summary_rows = [s.model_dump(mode='json') for s in result.summary.modes]
    summary_headers = list(summary_rows[0]) if summary_rows else ['mode']
    _write_sheet(
        summary_ws, summary_headers, summary_rows, summary_styles(summary_headers, summary_rows)
    )
    _write_sheet(wb.create_sheet("RMSE"), list(result.rmse.columns), _frame_rows(result.rmse))
    _write_sheet(wb.create_sheet("CDF"), list(result.cdf.columns), _frame_rows(result.cdf))
    return wb


def write_results_workbook(result: MonteCarloResult, file_path: Union[str, Path]) -> None:
    """Save ``build_results_workbook(result)`` to ``file_path``."""
    build_results_workbook(result).save(file_path)
    logger.info("Wrote results workbook to %s", file_path)


def results_workbook_bytes(result: MonteCarloResult) -> bytes:
    """Results workbook as ``.xlsx`` bytes."""
    output = BytesIO()
    build_results_workbook(result).save(output)
    output.seek(0)
    return output.getvalue()
