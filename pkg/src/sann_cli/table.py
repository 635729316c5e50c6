"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.
"""
from collections import OrderedDict

from prettytable import PrettyTable


def _format(value, precision):
    if value is None:
        return "-"
    if isinstance(value, float):
        return round(value, precision)
    return value


def reports_to_pt(reports, columns=None, precision=4, align=None):
    """Convert a list of reports to a PrettyTable.

    Parameters:
    - reports (list): Reports sharing one schema (BaseReport rows).
    - columns (list, optional): Columns to show. Defaults to the reports' COLUMNS.
    - precision (int, optional): Decimals kept for float values. Defaults to 4.
    - align (str, optional): The alignment of columns. Defaults to None.

    Returns:
    PrettyTable: A PrettyTable containing the converted data.
    """
    columns = list(columns or (reports[0].COLUMNS if reports else []))
    data = [{column: _format(report.attr(column), precision) for column in columns} for report in reports]
    return dicts_to_pt(data, align=align)


def dicts_to_pt(data, align=None):
    """Convert a list of dictionaries to a PrettyTable, numbering the rows."""
    all_keys = sum([list(x.keys()) for x in data], [])
    columns = list(OrderedDict.fromkeys(all_keys))
    columns, data = add_numbers_column(columns, data)
    return generate_table(columns, data=data, align=align)


def dict_to_pt(data, precision=4, align=None):
    """Convert a dict to a key / value PrettyTable."""
    list_of_dicts = [{"key": k, "value": _format(v, precision)} for k, v in data.items()]
    return dicts_to_pt(list_of_dicts, align)


def add_numbers_column(columns, items):
    """Add a column with line numbers to the list of columns and items.

    Parameters:
    - columns (list): The list of column names.
    - items (list): The list of items (dictionaries) to be numbered.

    Returns:
    tuple: A tuple containing the modified columns and items.
    """
    columns.insert(0, "#")
    for line_number, item in enumerate(items, start=1):
        item["#"] = line_number
    return columns, items


def generate_table(cols, data, align=None):
    """Generate a PrettyTable from a list of columns and data."""
    pt = PrettyTable(cols)
    for row_data in data:
        pt.add_row([row_data.get(column, "-") for column in cols])
    pt.align = align if align else pt.align
    return pt
