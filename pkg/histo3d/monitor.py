"""

.. currentmodule:: histo3d.monitor

:synopsis: The histo3d monitoring module

This module holds the logging functionality of histo3d. It supports
logging the messages and their case run contexts

.. contents:: Contents
    :local:
    :backlinks: top

Functions
----------------
* :func:`get_logger` - Get the Histo3dLogger.
* :func:`configure` - Configure logging in histo3d

"""
from histo3d.core.monitor import configure, get_logger

__all__ = ['configure', 'get_logger']
