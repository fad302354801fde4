"""Miniature AST-like and W2V2-like audio transformer backbones."""
