"""Desk-scale laboratory for encrypted iris matching with folding."""
