"""Shared builders for randomized test instances."""

from flexparse.testing import (  # noqa: F401
    ORACLE_SIZES,
    random_instance,
    random_params,
    random_terms,
    random_tree,
)
