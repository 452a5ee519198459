"""Synthetic web, request traces and experiment drivers."""
