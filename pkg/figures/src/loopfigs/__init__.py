"""Figure renderer for rfloop sweep CSVs."""

__version__ = "0.1.0"

from .render import (
    EXPECTED_COLUMNS,
    FIGURE_KINDS,
    FigureSpec,
    SchemaError,
    SelectionError,
    build_figure,
    fit_loglog_slope,
    load_rows,
    render,
)
