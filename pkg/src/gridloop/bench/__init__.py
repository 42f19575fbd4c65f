"""Scenario runner and measurement harness (``gridloop`` CLI)."""
