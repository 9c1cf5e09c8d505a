"""
Highlighting of result workbook cells.

The summary sheet compares engine modes row by row. The best mode of every ranked
metric is filled green and nonzero collapse counts orange. Modes without a surviving
run are greyed out.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

from openpyxl.cell import Cell
from openpyxl.styles import Font, PatternFill

# ranked summary columns
LOWER_IS_BETTER = (
    'mean_target_rmse',
    'mean_sensor_rmse',
    'final_sensor_rmse',
    'p95_target_error',
    'operations',
)
HIGHER_IS_BETTER = ('correct_cell_rate',)

# (row, col), both 1-indexed with the header in row 1
CellIndex = Tuple[int, int]


class Colors:
    """Fill and font colors in HEX format."""

    BEST = "90EE90"  # light green
    HEADER = "D9D9D9"  # light gray
    COLLAPSED = "FFA500"  # orange
    FONT_MUTED = "808080"


@dataclass(frozen=True)
class CellStyle:
    """
    Fill and font of one workbook cell.

    Args:
        fill_color: Background color, None keeps the cell's
        font_color: Font color, None keeps the default
        font_bold: Whether the font is bold
    """

    fill_color: Optional[str] = None
    font_color: Optional[str] = None
    font_bold: bool = False

    def apply(self, cell: Cell) -> None:
        if self.fill_color is not None:
            cell.fill = PatternFill(
                start_color=self.fill_color,
                end_color=self.fill_color,
                fill_type="solid",
            )
        if self.font_color is not None or self.font_bold:
            cell.font = Font(color=self.font_color, bold=self.font_bold)


HEADER_STYLE = CellStyle(fill_color=Colors.HEADER, font_bold=True)
BEST_STYLE = CellStyle(fill_color=Colors.BEST, font_bold=True)
COLLAPSED_STYLE = CellStyle(fill_color=Colors.COLLAPSED)
NO_RUNS_STYLE = CellStyle(font_color=Colors.FONT_MUTED)


def _best_value(header: str, values: List[Any]) -> Optional[Any]:
    if header in LOWER_IS_BETTER:
        pick = min
    elif header in HIGHER_IS_BETTER:
        pick = max
    else:
        return None
    present = [v for v in values if v is not None]
    # ranked across two or more modes only
    return pick(present) if len(present) >= 2 else None


def summary_styles(
    headers: Sequence[str], rows: Sequence[Dict[str, Any]]
) -> Dict[CellIndex, CellStyle]:
    """
    Styles of the summary sheet cells, keyed by (row, col).

    Args:
        headers: Column headers in column order
        rows: One summary dictionary per mode, in sheet order

    Returns:
        Styles of the highlighted cells only
    """
    styles: Dict[CellIndex, CellStyle] = {}
    for row_idx, row in enumerate(rows, start=2):
        if row.get('runs') == 0:
            for col_idx in range(1, len(headers) + 1):
                styles[(row_idx, col_idx)] = NO_RUNS_STYLE

    for col_idx, header in enumerate(headers, start=1):
        values = [row.get(header) for row in rows]
        if header == 'collapses':
            for row_idx, value in enumerate(values, start=2):
                if value:
                    styles[(row_idx, col_idx)] = COLLAPSED_STYLE
            continue
        best = _best_value(header, values)
        if best is None:
            continue
        for row_idx, value in enumerate(values, start=2):
            if value == best:
                styles[(row_idx, col_idx)] = BEST_STYLE
    return styles
