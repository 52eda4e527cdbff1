"""

.. currentmodule:: histo3d.core.monitor

:synopsis: The histo3d monitoring module

This module holds the logging functionality of histo3d. Every record
carries the identifier of the case run that produced it and the place
in the pipeline (e.g. ``planes.3`` or ``fusion.icp``) it came from.

.. contents:: Contents
    :local:
    :backlinks: top

"""
import contextvars
import logging
import os
import uuid
from functools import wraps
from logging import config
from typing import Any, Callable, Dict, List, Optional, Union

import yaml

from histo3d.core.schema.enum import MessageLevelEnum
from histo3d.core.schema.report import PipelineMessage

LOGGER_NAME = __name__
BASE_PATH = os.path.dirname(__file__)
LOG_CONFIG_PATH = os.path.join(BASE_PATH, "logging.yaml")

#: A unique identifier for a single pipeline run. Use this
#: if you want to identify log records from a single case run.
#: This is a Context variable which is natively supported in asyncio
#: and is ready to be used without any extra configuration.
case_id: contextvars.ContextVar = contextvars.ContextVar('case_id')

#: The place in the pipeline a record is emitted from, dotted
#: (e.g. ``planes.4``).
histo3d_where: contextvars.ContextVar = contextvars.ContextVar('histo3d_where')


class Histo3dLogger(logging.Logger):
    """
    Custom logger for adding realtime context information (case_id, histo3d_where)
    """

    def info(self, msg, *args, **kwargs):
        kwargs = self._add_extra(**kwargs)
        super().info(msg, *args, **kwargs)

    def error(self, msg, *args, **kwargs):
        kwargs = self._add_extra(**kwargs)
        super().error(msg, *args, **kwargs)

    def debug(self, msg, *args, **kwargs):
        kwargs = self._add_extra(**kwargs)
        super().debug(msg, *args, **kwargs)

    def warning(self, msg, *args, **kwargs):
        kwargs = self._add_extra(**kwargs)
        super().warning(msg, *args, **kwargs)

    def critical(self, msg, *args, **kwargs):
        kwargs = self._add_extra(**kwargs)
        super().critical(msg, *args, **kwargs)

    def log(self, level, msg, *args, **kwargs):
        kwargs = self._add_extra(**kwargs)
        super().log(level, msg, *args, **kwargs)

    def _add_extra(self, **kwargs):
        """Add the histo3d context fields, if they exist"""

        kwargs.setdefault('extra', dict())
        if "histo3d_where" not in kwargs['extra']:
            try:
                kwargs['extra']["histo3d_where"] = histo3d_where.get() or "*"
            except LookupError:
                kwargs['extra']["histo3d_where"] = "*"

        try:
            kwargs['extra']["case_id"] = case_id.get() or "*"
        except LookupError:
            kwargs['extra']["case_id"] = "*"

        return kwargs


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """
    Get the histo3d logger for the specified name. Using this
    logger adds the case run context to every record.

    See :func:`logging.getLogger`

    :param: Name of the logger

    :return: The histo3d Logger object
    """
    logging.setLoggerClass(Histo3dLogger)
    logger = logging.getLogger(name)

    return logger


def get_ctx_case_id() -> Any:
    """
    Get the context for the monitoring case_id
    """
    try:
        return case_id.get()
    except LookupError:
        pass

    return None


def set_ctx_case_id() -> Any:
    """
    Set a fresh case_id in the current context.
    """
    return case_id.set(str(uuid.uuid1())[:8])


def get_ctx_histo3d_where() -> Any:
    """
    Get the context for the monitoring histo3d_where.
    """
    try:
        return histo3d_where.get()
    except LookupError:
        pass

    return None


def set_ctx_histo3d_where(where: Optional[Union[List, str]] = None) -> Any:
    """
    Set the context for the monitoring histo3d_where.

    :param where: a dotted string or a list of parts to join with dots
    """

    if isinstance(where, list):
        return histo3d_where.set(".".join(str(w) for w in where))
    else:
        return histo3d_where.set(where)


def ctx_case(func) -> Callable:
    """
    Decorator for setting the case_id context around a pipeline run

    :return: func
    """

    # Use of wraps makes sure that stack traces show the original
    # function name and not the wrapped one.
    @wraps(func)
    def func_wrapper(*args, **kwargs):

        c_token = set_ctx_case_id()
        w_token = set_ctx_histo3d_where()
        try:
            result = func(*args, **kwargs)
        finally:
            case_id.reset(c_token)
            histo3d_where.reset(w_token)
        return result
    return func_wrapper


def configure(log_config_path: Optional[str] = None, **kwargs) -> Dict:
    """
    Load YAML python logging configuration file

    :param log_config_path: Path to the YAML file for configuring Python logging
    :returns: Logging configuration as dictionary

    **Keyword Args**
    Overwrite default logging config.

    + filters (dict)
    + formatters (dict)
    + handlers (dict)
    + loggers (dict)

    """
    logging.setLoggerClass(Histo3dLogger)
    log_config_path = log_config_path or LOG_CONFIG_PATH
    with open(f"{log_config_path}", "r") as f:
        # Expand any environment variables
        config_str = os.path.expandvars(f.read())

        config_file: Dict = yaml.load(config_str, Loader=yaml.SafeLoader)
        config_file = _overwrite_config(config_file, config_overwrite=kwargs)
        config.dictConfig(config_file)

    return config_file


def _overwrite_config(config: Dict, config_overwrite: Dict) -> Dict:
    """
    Overwrite the config with the specified values

    :param config: The config to overwrite
    :param config_overwrite: nested values to merge in
    :return: the merged config
    """

    if config_overwrite:
        for key, value in config_overwrite.items():
            if key not in config.keys():
                config[key] = value
            else:
                if isinstance(value, dict):
                    _overwrite_config(config[key], config_overwrite[key])
                elif isinstance(value, (str, list)):
                    config[key] = value
                else:
                    raise Exception(f"Invalid config parameter {key}={value}. It must be a dict or string")

    return config


class MonitorMixin(object):
    """
    Adds monitor log functionality to a class for logging pipeline messages
    """
    def log(self,
            message: str, level: Optional[MessageLevelEnum] = None, where: Optional[List] = None) -> Optional[PipelineMessage]:
        """
        Log a message and build the pipeline message for the report
        :param message: The message
        :param level:  The message level
        :param where:  Where the message is from
        :return: PipelineMessage
        """
        logger_level = logging.INFO
        pipeline_message = None
        where = where and [str(w) for w in where]
        if level:
            logger_level = level == MessageLevelEnum.CRITICAL and logging.CRITICAL or level == MessageLevelEnum.WARN and logging.WARNING \
                 or level == MessageLevelEnum.ERROR and logging.ERROR or logging.INFO
            pipeline_message = PipelineMessage(msg=message, level=level, where=where)
        _logger.log(logger_level, msg=message, extra=where and {"histo3d_where": ".".join(where)} or {})  # type: ignore
        return pipeline_message

    def info(self, message: str, where: Optional[List] = None):
        """
        Add a info level message
        :param where:
        :param message:
        :return: None
        """
        self.log(message, where=where)

    def warn(self, message: str, where: Optional[List] = None) -> Optional[PipelineMessage]:
        """
        Add a warning level message
        :param where:
        :param message:
        :return: PipelineMessage
        """
        return self.log(message, MessageLevelEnum.WARN, where)

    def error(self, message: str, where: Optional[List] = None) -> Optional[PipelineMessage]:
        """
        Add a error level message
        :param where:
        :param message:
        :return: PipelineMessage
        """
        return self.log(message, MessageLevelEnum.ERROR, where)

    def critical(self, message: str, where: Optional[List] = None) -> Optional[PipelineMessage]:
        """
        Add a critical level message
        :param where:
        :param message:
        :return:
        """
        return self.log(message, MessageLevelEnum.CRITICAL, where)


_logger = get_logger(LOGGER_NAME)
