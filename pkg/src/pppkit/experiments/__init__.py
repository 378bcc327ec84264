"""Diagnostic experiments: BHV test, PosENet baseline and chronological PPP."""
