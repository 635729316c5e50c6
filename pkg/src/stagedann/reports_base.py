"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

This module define base class of stagedann reports.
"""

import json
import logging
from typing import Any, Dict, List, Optional

import numpy as np

logger = logging.getLogger(__name__)


class ReportJSONEncoder(json.JSONEncoder):
    """JSON encoder class for handling custom serialization of Report objects.

    Handle reports nested in reports and numpy scalars / arrays.
    """

    def default(self, o: object) -> Any:
        """Override the default method of the JSONEncoder class.

        Serializes objects with a 'to_dict' method using 'to_dict' and numpy values as Python values.
        Falls back to the super class's default method for other objects.
        """
        if hasattr(o, "to_dict"):
            return o.to_dict()
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, set):
            return sorted(o)
        return super().default(o)


class BaseReport:
    """
    Base class for experiment reports and report rows.

    Attributes:
        Meta (class): Meta class for BaseReport.
    """

    class Meta:
        """Meta class for BaseReport."""

        abstract = True

    # Stable CSV column order of a row; empty for non-row reports.
    COLUMNS: List[str] = []

    def __str__(self):
        """Return a string representation of the BaseReport object."""
        return self.__repr__()

    def __repr__(self):
        """Return a string representation of the BaseReport object."""
        main_field = getattr(self.Meta, "main_field", "")
        main_field_value = f" {getattr(self, main_field)}" if main_field else ""
        return f"<{self.__class__.__name__}{main_field_value}>"

    def fields(self) -> Dict[str, Any]:
        """Return a dictionary of public attributes and their values."""
        return {k: v for k, v in vars(self).items() if not k.startswith("_")}

    def attr(self, key: str, default=None, precision: Optional[int] = None):
        """Get an attribute, converting numpy scalars and optionally rounding floats.

        Args:
            key (str): The name of the attribute to retrieve.
            default: The default value to return if the attribute is not found.
            precision (int): Number of decimals kept for float values.
        """
        value = getattr(self, key, default)
        if value is None:
            return default
        if isinstance(value, np.generic):
            value = value.item()
        if precision is not None and isinstance(value, float):
            value = round(value, precision)
        return value

    def to_dict(self, ignore_none: bool = False) -> Dict[str, Any]:
        """Convert the BaseReport object to a dictionary.

        Args:
            ignore_none (bool): Whether to exclude attributes with None values.
        """
        fields_data = {}
        for field in self.fields():
            try:
                fields_data[field] = self.attr(field)
            except Exception as ex:
                logger.warning(f"Failed to get value for {field}: {ex}")
        if ignore_none:
            fields_data = {k: v for k, v in fields_data.items() if v is not None}
        return fields_data

    def to_row(self) -> List[Any]:
        """Values in COLUMNS order, for CSV emission."""
        return [self.attr(column) for column in self.COLUMNS]

    def to_json(self) -> str:
        """Convert the object to a JSON-formatted string."""
        return json.dumps(self.to_dict(), cls=ReportJSONEncoder)
