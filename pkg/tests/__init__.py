"""Tests for ffdconv."""
