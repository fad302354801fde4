"""Experiment runner, sweep tool and parameter-ledger command."""
