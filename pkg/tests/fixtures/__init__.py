"""Test input builders."""
