"""Command line entry points; run as python -m src.cli"""
