"""Builders for synthetic APKs, DEX files, manifests and API databases."""
