"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from __future__ import annotations


class GraphRagIrlError(Exception):
    exit_code = 1


class ConfigError(GraphRagIrlError):
    exit_code = 1


class DataError(GraphRagIrlError):
    exit_code = 2


class NumericalError(GraphRagIrlError):
    exit_code = 3


class ProviderError(GraphRagIrlError):
    exit_code = 4
