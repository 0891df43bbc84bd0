"""Canonical traces, residues and conformal anomalies of model operators."""
