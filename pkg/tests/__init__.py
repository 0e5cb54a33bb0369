"""Tests for cfkit."""
