"""Deterministic figures for reshuffle-opt experiment outputs."""

from .cli import cli_main, main
from .figures import (
    FIGURE_KINDS,
    SUPPORTED_SCHEMA,
    FigureSpec,
    PlotError,
    build_figure,
    first_epoch_at_or_below,
    parse_spec_text,
    render,
)
