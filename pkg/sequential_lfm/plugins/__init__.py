"""
Built-in sequential-lfm plugins.

This package contains the force-prior families available without a plugin directory.
"""
